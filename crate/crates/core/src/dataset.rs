//! Dataset directory ingestion and export.
//!
//! Layout (UTF-8):
//!   nodes.jsonl  — one object per node: {"id": ..., "features": {type: [f64]}}
//!   edges.csv    — header src,dst,relation; relation order = first appearance
//!   labels.csv   — header id,label; label in {human,bot}
//!   splits.json  — {"train": [ids], "val": [ids], "test": [ids]}

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::graph::{FeatureBlock, GraphError, LabeledSplit, MultiRelationGraph};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("duplicate node id '{0}' in nodes.jsonl")]
    DuplicateNode(String),
    #[error("edge references unknown node id '{id}' ({path} line {line})")]
    DanglingNodeId {
        id: String,
        path: String,
        line: usize,
    },
    #[error("node '{id}' feature block '{name}' has {got} values, expected {expected}")]
    FeatureDimMismatch {
        id: String,
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("node '{id}' feature types differ from the first node")]
    FeatureTypeMismatch { id: String },
    #[error("label for unknown node id '{0}'")]
    LabelForUnknownNode(String),
    #[error("invalid label '{0}' (expected human or bot)")]
    InvalidLabel(String),
    #[error("split '{split}' references unknown node id '{id}'")]
    SplitUnknownNode { split: String, id: String },
    #[error("node '{0}' appears in more than one split")]
    OverlappingSplits(String),
    #[error("split member '{0}' has no label")]
    UnlabeledSplitMember(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Deserialize)]
struct NodeLine {
    id: String,
    features: serde_json::Map<String, serde_json::Value>,
}

pub fn load_dataset(dir: &Path) -> Result<(MultiRelationGraph, LabeledSplit), DataError> {
    let nodes_path = dir.join("nodes.jsonl");
    let edges_path = dir.join("edges.csv");
    let labels_path = dir.join("labels.csv");
    let splits_path = dir.join("splits.json");
    for p in [&nodes_path, &edges_path, &labels_path, &splits_path] {
        if !p.exists() {
            return Err(DataError::MissingFile(p.display().to_string()));
        }
    }

    // nodes + features
    let file = fs::File::open(&nodes_path).map_err(|e| DataError::Io {
        path: nodes_path.display().to_string(),
        source: e,
    })?;
    let mut node_ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut type_names: Vec<String> = Vec::new();
    let mut type_dims: Vec<usize> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io {
            path: nodes_path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let node: NodeLine =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                path: nodes_path.display().to_string(),
                line: lineno + 1,
                detail: e.to_string(),
            })?;
        if index.contains_key(&node.id) {
            return Err(DataError::DuplicateNode(node.id));
        }
        let mut feats: Vec<(String, Vec<f64>)> = Vec::with_capacity(node.features.len());
        for (name, value) in &node.features {
            let vals: Vec<f64> = serde_json::from_value(value.clone()).map_err(|e| {
                DataError::Parse {
                    path: nodes_path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("feature '{name}': {e}"),
                }
            })?;
            feats.push((name.clone(), vals));
        }
        if node_ids.is_empty() {
            for (name, vals) in &feats {
                type_names.push(name.clone());
                type_dims.push(vals.len());
                columns.push(Vec::new());
            }
        } else if feats.len() != type_names.len()
            || feats.iter().zip(&type_names).any(|((a, _), b)| a != b)
        {
            return Err(DataError::FeatureTypeMismatch { id: node.id });
        }
        for (t, (name, vals)) in feats.iter().enumerate() {
            if vals.len() != type_dims[t] {
                return Err(DataError::FeatureDimMismatch {
                    id: node.id.clone(),
                    name: name.clone(),
                    got: vals.len(),
                    expected: type_dims[t],
                });
            }
            columns[t].extend_from_slice(vals);
        }
        index.insert(node.id.clone(), node_ids.len());
        node_ids.push(node.id);
    }

    // edges
    let mut rdr = csv::Reader::from_path(&edges_path).map_err(|e| DataError::Parse {
        path: edges_path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    let mut relation_names: Vec<String> = Vec::new();
    let mut relations: Vec<Vec<(usize, usize)>> = Vec::new();
    for (lineno, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Parse {
            path: edges_path.display().to_string(),
            line: lineno + 2,
            detail: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(DataError::Parse {
                path: edges_path.display().to_string(),
                line: lineno + 2,
                detail: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let lookup = |id: &str| {
            index.get(id).copied().ok_or_else(|| DataError::DanglingNodeId {
                id: id.to_string(),
                path: edges_path.display().to_string(),
                line: lineno + 2,
            })
        };
        let src = lookup(&rec[0])?;
        let dst = lookup(&rec[1])?;
        let rel = rec[2].to_string();
        let r = match relation_names.iter().position(|n| *n == rel) {
            Some(r) => r,
            None => {
                relation_names.push(rel);
                relations.push(Vec::new());
                relations.len() - 1
            }
        };
        relations[r].push((src, dst));
    }

    // labels
    let mut labels: Vec<Option<u8>> = vec![None; node_ids.len()];
    let mut rdr = csv::Reader::from_path(&labels_path).map_err(|e| DataError::Parse {
        path: labels_path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    for (lineno, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Parse {
            path: labels_path.display().to_string(),
            line: lineno + 2,
            detail: e.to_string(),
        })?;
        let id = &rec[0];
        let node = *index
            .get(id)
            .ok_or_else(|| DataError::LabelForUnknownNode(id.to_string()))?;
        labels[node] = Some(match &rec[1] {
            "human" => crate::graph::CLASS_HUMAN,
            "bot" => crate::graph::CLASS_BOT,
            other => return Err(DataError::InvalidLabel(other.to_string())),
        });
    }

    // splits
    #[derive(Deserialize)]
    struct Splits {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    }
    let raw = fs::read_to_string(&splits_path).map_err(|e| DataError::Io {
        path: splits_path.display().to_string(),
        source: e,
    })?;
    let splits: Splits = serde_json::from_str(&raw).map_err(|e| DataError::Parse {
        path: splits_path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    let mut seen = vec![false; node_ids.len()];
    let mut resolve = |name: &str, ids: &[String]| -> Result<Vec<usize>, DataError> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let node = *index.get(id).ok_or_else(|| DataError::SplitUnknownNode {
                split: name.to_string(),
                id: id.clone(),
            })?;
            if seen[node] {
                return Err(DataError::OverlappingSplits(id.clone()));
            }
            seen[node] = true;
            if labels[node].is_none() {
                return Err(DataError::UnlabeledSplitMember(id.clone()));
            }
            out.push(node);
        }
        Ok(out)
    };
    let train = resolve("train", &splits.train)?;
    let val = resolve("val", &splits.val)?;
    let test = resolve("test", &splits.test)?;

    let features = type_names
        .into_iter()
        .zip(type_dims)
        .zip(columns)
        .map(|((name, dim), values)| FeatureBlock { name, dim, values })
        .collect();
    let graph = MultiRelationGraph::new(node_ids, relation_names, relations, features)?;
    Ok((
        graph,
        LabeledSplit {
            labels,
            train,
            val,
            test,
        },
    ))
}

pub fn save_dataset(
    dir: &Path,
    g: &MultiRelationGraph,
    s: &LabeledSplit,
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |e: std::io::Error| DataError::Io {
            path: path.clone(),
            source: e,
        }
    };

    let nodes_path = dir.join("nodes.jsonl");
    let mut out = fs::File::create(&nodes_path).map_err(io_err(&nodes_path))?;
    for i in 0..g.node_count() {
        let mut features = serde_json::Map::new();
        for block in g.features() {
            features.insert(
                block.name.clone(),
                serde_json::to_value(block.row(i)).unwrap(),
            );
        }
        let obj = serde_json::json!({"id": g.node_ids()[i], "features": features});
        writeln!(out, "{}", serde_json::to_string(&obj).unwrap()).map_err(io_err(&nodes_path))?;
    }

    let edges_path = dir.join("edges.csv");
    let mut w = csv::Writer::from_path(&edges_path).map_err(|e| DataError::Parse {
        path: edges_path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    w.write_record(["src", "dst", "relation"]).unwrap();
    for (r, edges) in g.relations().iter().enumerate() {
        for &(src, dst) in edges {
            w.write_record([
                g.node_ids()[src].as_str(),
                g.node_ids()[dst].as_str(),
                g.relation_names()[r].as_str(),
            ])
            .unwrap();
        }
    }
    w.flush().map_err(io_err(&edges_path))?;

    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| DataError::Parse {
        path: labels_path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    w.write_record(["id", "label"]).unwrap();
    for (i, label) in s.labels.iter().enumerate() {
        if let Some(l) = label {
            w.write_record([g.node_ids()[i].as_str(), crate::graph::class_name(*l)])
                .unwrap();
        }
    }
    w.flush().map_err(io_err(&labels_path))?;

    let splits_path = dir.join("splits.json");
    let to_ids = |ids: &[usize]| -> Vec<&str> {
        ids.iter().map(|&i| g.node_ids()[i].as_str()).collect()
    };
    let obj = serde_json::json!({
        "train": to_ids(&s.train),
        "val": to_ids(&s.val),
        "test": to_ids(&s.test),
    });
    fs::write(&splits_path, serde_json::to_string_pretty(&obj).unwrap())
        .map_err(io_err(&splits_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{CLASS_BOT, CLASS_HUMAN};

    fn sample() -> (MultiRelationGraph, LabeledSplit) {
        let g = MultiRelationGraph::new(
            vec!["u1".into(), "u2".into(), "u3".into()],
            vec!["follower".into(), "following".into()],
            vec![vec![(0, 1), (2, 0)], vec![(1, 2)]],
            vec![
                FeatureBlock {
                    name: "profile".into(),
                    dim: 2,
                    values: vec![0.5, -1.0, 2.0, 0.25, -0.125, 3.5],
                },
                FeatureBlock {
                    name: "activity".into(),
                    dim: 1,
                    values: vec![1.0, 0.0, -1.0],
                },
            ],
        )
        .unwrap();
        let s = LabeledSplit {
            labels: vec![Some(CLASS_HUMAN), Some(CLASS_BOT), None],
            train: vec![0],
            val: vec![],
            test: vec![1],
        };
        (g, s)
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let (g, s) = sample();
        save_dataset(dir.path(), &g, &s).unwrap();
        let (g2, s2) = load_dataset(dir.path()).unwrap();
        assert_eq!(g, g2);
        assert_eq!(s, s2);
    }

    #[test]
    fn missing_file_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::MissingFile(p)) => assert!(p.contains("nodes.jsonl")),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn dangling_edge_id_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let (g, s) = sample();
        save_dataset(dir.path(), &g, &s).unwrap();
        std::fs::write(
            dir.path().join("edges.csv"),
            "src,dst,relation\nu1,ghost,follower\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::DanglingNodeId { .. })
        ));
    }

    #[test]
    fn overlapping_splits_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let (g, s) = sample();
        save_dataset(dir.path(), &g, &s).unwrap();
        std::fs::write(
            dir.path().join("splits.json"),
            r#"{"train": ["u1"], "val": ["u1"], "test": []}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::OverlappingSplits(_))
        ));
    }

    #[test]
    fn unlabeled_split_member_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let (g, s) = sample();
        save_dataset(dir.path(), &g, &s).unwrap();
        std::fs::write(
            dir.path().join("splits.json"),
            r#"{"train": ["u3"], "val": [], "test": []}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::UnlabeledSplitMember(_))
        ));
    }

    #[test]
    fn feature_row_mismatch_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let (g, s) = sample();
        save_dataset(dir.path(), &g, &s).unwrap();
        let nodes = std::fs::read_to_string(dir.path().join("nodes.jsonl")).unwrap();
        let broken: String = nodes
            .lines()
            .map(|l| {
                if l.contains("u2") {
                    l.replace("[2.0,0.25]", "[2.0]")
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(dir.path().join("nodes.jsonl"), broken).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::FeatureDimMismatch { .. })
        ));
    }
}

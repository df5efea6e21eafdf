use botscl::metrics::mean_std;
use botscl::pipeline::*;
use botscl::synth::{builtin_profiles, generate};
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let tau: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(150);
    let drop: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let sep: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let n: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let nseeds: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut profile = builtin_profiles()["twibot22-like"].clone();
    profile.n = n;
    for ft in &mut profile.feature_types {
        ft.class_mean_separation = sep;
    }
    if let Some(tf) = args.get(8).and_then(|s| s.parse::<f64>().ok()) {
        profile.split_fractions = [tf, 0.1, 0.9 - tf];
    }
    if let Some(cs) = args.get(9).and_then(|s| s.parse::<f64>().ok()) {
        profile.community_std = cs;
        profile.community_scale_jitter = std::env::var("BOTSCL_JITTER")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.0);
        profile.bot_decoy_prob = std::env::var("BOTSCL_DECOY")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(1.0);
        if let Some(eb) = args.get(13).and_then(|s| s.parse::<f64>().ok()) { profile.community_edge_bias = eb; }
        profile.communities = if cs == 0.0 { 0 } else { 12 };
    }
    if let Some(deg) = args.get(11).and_then(|s| s.parse::<f64>().ok()) {
        for rel in &mut profile.relations {
            *rel.mean_out_degree_per_class.get_mut("human").unwrap() = deg;
        }
    }
    if let Some(deg) = args.get(12).and_then(|s| s.parse::<f64>().ok()) {
        for rel in &mut profile.relations {
            *rel.mean_out_degree_per_class.get_mut("bot").unwrap() = deg;
        }
    }
    let variants: Vec<Variant> = args
        .get(10)
        .map(|v| {
            v.split(',')
                .map(|x| match x {
                    "botscl" => Variant::Botscl,
                    "ce" => Variant::Ce,
                    "wo-sup" => Variant::WoSup,
                    "wo-neg" => Variant::WoNeg,
                    other => panic!("unknown variant {other}"),
                })
                .collect()
        })
        .unwrap_or_else(|| vec![Variant::Botscl, Variant::Ce, Variant::WoSup, Variant::WoNeg]);
    let mut f1s: Vec<Vec<f64>> = vec![vec![]; variants.len() + 1];
    let t0 = std::time::Instant::now();
    for seed in 100..100 + nseeds {
        let (g, split) = generate(&profile, seed).unwrap();
        for (vi, &variant) in variants.iter().enumerate() {
            let mut cfg = TrainConfig::preset_tw22();
            if let Ok(b) = std::env::var("BOTSCL_BATCH") {
                cfg.batch_size = b.parse().unwrap();
            }
            cfg.model.mlp_dropout = drop;
            cfg.lr = lr;
            cfg.tau = tau;
            cfg.epochs = epochs;
            cfg.seed = 1000 + seed;
            cfg.variant = variant;
            cfg.class_weights = [1.0, 1.0];
            let enc = train_stage1(&g, &split, &cfg).unwrap();
            let (head, h) = train_stage2(&g, &split, &enc).unwrap();
            let m = evaluate(&h, &head, &split);
            f1s[vi].push(m.f1);
            println!(
                "seed {seed} {:7} loss {:.3}->{:.3} best@{} acc {:.4} f1 {:.4}",
                enc.config.variant.name(),
                enc.loss_history[0],
                enc.loss_history.last().unwrap(),
                enc.best_epoch,
                m.accuracy,
                m.f1
            );
        }
        let mut bcfg = TrainConfig::preset_tw22();
        bcfg.class_weights = [2.0, 5.0];
        bcfg.epochs = 100;
        bcfg.seed = 1000 + seed;
        let (_, m) = train_baseline(&g, &split, &bcfg).unwrap();
        f1s[variants.len()].push(m.f1);
        println!("seed {seed} baselne acc {:.4} f1 {:.4}", m.accuracy, m.f1);
    }
    for (vi, v) in variants.iter().enumerate() {
        let (m, s) = mean_std(&f1s[vi]);
        println!("MEAN {:8} f1 {:.4} +- {:.4}", v.name(), m, s);
    }
    let (m, s) = mean_std(&f1s[variants.len()]);
    println!("MEAN baseline f1 {m:.4} +- {s:.4}");
    println!("elapsed {:?}", t0.elapsed());
}

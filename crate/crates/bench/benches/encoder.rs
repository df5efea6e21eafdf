use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use botscl::augment::View;
use botscl::graph::homophily_ratio;
use botscl::loss::supcon_cross_view;
use botscl::model::{encode, project, Mode, ModelParams};
use botscl::pipeline::TrainConfig;
use botscl::rng::stream;
use botscl::synth::{builtin_profiles, generate};
use botscl::Tape;

fn bench_encoder(c: &mut Criterion) {
    let mut profile = builtin_profiles()["twibot22-like"].clone();
    profile.n = 500;
    let (g, split) = generate(&profile, 1).unwrap();
    let cfg = TrainConfig::preset_tw22().resolved_for(&g);
    let params = ModelParams::init(&cfg.model, &mut stream(1, "bench-init"));
    let view = View::of(&g);
    let labels: Vec<u8> = split
        .train
        .iter()
        .map(|&i| split.label(i).unwrap())
        .collect();

    c.bench_function("encode_forward_n500", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = encode(
                &mut tape,
                &view.features,
                &view.relations,
                &bound,
                &cfg.model,
                &mut Mode::Eval,
            )
            .unwrap();
            tape.value(out.last()).get(0, 0)
        })
    });

    c.bench_function("encode_project_supcon_backward_n500", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let bound = params.bind(&mut tape);
                let out = encode(
                    &mut tape,
                    &view.features,
                    &view.relations,
                    &bound,
                    &cfg.model,
                    &mut Mode::Eval,
                )
                .unwrap();
                let z = project(&mut tape, out.last(), &bound.proj, &cfg.model, &mut Mode::Eval)
                    .unwrap();
                let zt = tape.gather_rows(z, &split.train).unwrap();
                let loss = supcon_cross_view(&mut tape, zt, zt, &labels, cfg.tau).unwrap();
                tape.backward(loss).unwrap();
                tape.value(loss).item()
            },
            BatchSize::SmallInput,
        )
    });

    c.bench_function("homophily_ratio_n500", |b| {
        b.iter(|| homophily_ratio(&g, &split, 0, 1).unwrap())
    });

    c.bench_function("generate_twibot22_n500", |b| {
        b.iter(|| generate(&profile, 2).unwrap().0.edge_count())
    });
}

criterion_group!(benches, bench_encoder);
criterion_main!(benches);

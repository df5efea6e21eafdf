use botscl::pipeline::*;
use botscl::synth::{builtin_profiles, generate};

fn main() {
    let mut profile = builtin_profiles()["twibot22-like"].clone();
    profile.n = 1000;
    profile.split_fractions = [0.7, 0.1, 0.2];
    let (g, split) = generate(&profile, 100).unwrap();
    let mut cfg = TrainConfig::preset_tw22();
    cfg.epochs = 400;
    cfg.seed = 1100;
    if std::env::args().nth(1).as_deref() == Some("profile") {
        cfg.epochs = 3;
        cfg.eval_every = 1000;
        let t0 = std::time::Instant::now();
        let _ = train_stage1(&g, &split, &cfg).unwrap();
        println!("3 epochs: {:.2}s", t0.elapsed().as_secs_f64());
        return;
    }
    for variant in [Variant::Botscl, Variant::Ce] {
        let mut c = cfg.clone();
        c.variant = variant;
        let t0 = std::time::Instant::now();
        let (_, _, _, m) = train_and_eval(&g, &split, &c).unwrap();
        println!("{variant:?}: {:.1}s f1 {:.4}", t0.elapsed().as_secs_f64(), m.f1);
    }
    let mut bc = cfg.clone();
    bc.class_weights = [2.0, 5.0];
    bc.epochs = 100;
    let t0 = std::time::Instant::now();
    let (_, m) = train_baseline(&g, &split, &bc).unwrap();
    println!("baseline: {:.1}s f1 {:.4}", t0.elapsed().as_secs_f64(), m.f1);
}

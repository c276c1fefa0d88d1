//! Baseline vs adversarial training on planted-rule synthetic data.
//!
//! `cargo run --release --example desk_run -- [seed] [modes=a,b] [key=value ...]`

use std::time::Instant;

use attrlogic::dataio::{synth_generate, SyntheticSpec};
use attrlogic::{builtin_rules, train, TrainConfig};

fn main() -> attrlogic::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let mut modes = vec![
        "plain".to_string(),
        "combined".into(),
        "bol_only".into(),
        "preds_only".into(),
    ];
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("modes=") {
            Some(m) => modes = m.split(',').map(str::to_string).collect(),
            None => overrides.push(a),
        }
    }
    let (_, base) = builtin_rules("fh-mini")?;
    let rules = base.with_extra_attributes(&["free_0", "free_1", "free_2", "free_3"])?;
    let spec = SyntheticSpec {
        n_samples: 10_000,
        feature_dim: 32,
        noise_std: 0.5,
        label_noise_rate: 0.1,
        seed,
    };
    let data = synth_generate(&spec, &rules)?;
    let (tr, _) = data.dataset().split_at(8000);
    let (_, te) = data.clean_dataset().split_at(8000);
    for mode in &modes {
        let mut cfg = TrainConfig {
            seed,
            ..Default::default()
        };
        cfg.set("mode", mode)?;
        for kv in &overrides {
            let (k, v) = kv.split_once('=').expect("key=value");
            cfg.set(k, v)?;
        }
        let t = Instant::now();
        let (state, rep) = train(cfg, &rules, &tr, &te)?;
        println!(
            "{mode:<10} failed={:.4} imp={} incomp={} acc_ignore={:.2} acc_enforce={:.2} secs={:.1}",
            rep.failed.ratio,
            rep.failed.n_impossible,
            rep.failed.n_incomplete,
            rep.ignore_logic.acc_avg,
            rep.enforce_logic.acc_avg,
            t.elapsed().as_secs_f64()
        );
        if let Some(last) = state.history.last() {
            println!("  {}", last.record());
        }
    }
    Ok(())
}

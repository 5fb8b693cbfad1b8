//! Runs the baseline, the full model and the DKD / bias-net ablations on one
//! dataset and prints a cohort table for each.
//!
//! cargo run --release -p coldwarm --example ablation -- [data-dir] [seed] [epochs]

use std::time::Instant;

use coldwarm::config::{DataSource, RunConfig};
use coldwarm::container::hex_digest;
use coldwarm::eval::evaluate;
use coldwarm::model::{FeatureEncoder, FeatureSchema};
use coldwarm::pipeline::{build_groups, prepare_dataset, pretrain, select_features, train_model, PrepareSummary};

fn main() -> coldwarm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig {
        data: DataSource::Movielens {
            dir: args.get(1).map_or("data/ml-100k", String::as_str).into(),
        },
        ..RunConfig::default()
    };
    if let Some(s) = args.get(2) {
        cfg.seed = s.parse().expect("seed");
    }
    if let Some(e) = args.get(3) {
        cfg.epochs = e.parse().expect("epochs");
        cfg.pretrain_epochs = cfg.epochs;
    }

    let t = Instant::now();
    let ds = prepare_dataset(&cfg)?;
    println!("{:?} ({:.1?})", PrepareSummary::of(&ds), t.elapsed());

    let t = Instant::now();
    let (baseline, logs) = pretrain(&cfg, &ds)?;
    println!("baseline: final L={:.4} ({:.1?})", logs.last().map_or(0.0, |l| l.main), t.elapsed());
    let groups = build_groups(&cfg, &ds, &baseline, hex_digest(b"in-memory"))?;
    let features = select_features(&cfg, &ds)?;
    println!("bias features: {:?}", features.names());

    let eval = cfg.eval_options();
    let schema = FeatureSchema::from_dataset(&ds, &[])?;
    let encoder = FeatureEncoder::new(&ds, &schema, cfg.history_cap);
    println!("{}", evaluate(&baseline, "baseline", &encoder, &eval)?.to_table());

    for (name, dkd, bias) in [("full", true, true), ("no_dkd", false, true), ("no_bias", true, false)] {
        let mut c = cfg.clone();
        c.ablation.disable_dkd = !dkd;
        c.ablation.disable_bias_net = !bias;
        let t = Instant::now();
        let (model, logs) = train_model(&c, &ds, &groups, &features, |_| {})?;
        let last = logs.last().cloned().unwrap_or_default();
        println!(
            "{name}: L={:.4} L_d={:.4} w_cold={:.4} active={:.3} ({:.1?})",
            last.main,
            last.distill,
            last.mean_w_cold,
            last.distill_active_fraction,
            t.elapsed()
        );
        let enc = FeatureEncoder::new(&ds, &model.schema, c.history_cap);
        println!("{}", evaluate(&model, name, &enc, &eval)?.to_table());
    }
    Ok(())
}

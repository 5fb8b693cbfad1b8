//! `coldwarm`: the training and evaluation pipeline as subcommands.
//!
//! Every stage reads a JSON run configuration (`--config`, defaults when
//! omitted), applies command-line overrides, and exchanges artifacts with
//! the other stages through the run's output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use coldwarm::config::{DataSource, RunConfig};
use coldwarm::model::EpochLog;
use coldwarm::pipeline;

#[derive(Debug, Parser)]
#[command(name = "coldwarm", version, about = "Cold & Warm matching network pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the corpus, split it and write the dataset bundle.
    Prepare(Common),
    /// Train the baseline two-tower model used for user grouping.
    Pretrain(Common),
    /// Cluster active-user baseline embeddings into the group table.
    Cluster(Common),
    /// Rank user features by mutual information and keep the top beta.
    SelectFeatures(Common),
    /// Train the Cold & Warm model.
    Train(Common),
    /// Evaluate a checkpoint per cohort.
    Eval(WithCheckpoint),
    /// Write user and item embeddings as TSV.
    Export(WithCheckpoint),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// MovieLens directory with ratings.dat, users.dat and movies.dat.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Cut-offs for HR@K and NDCG@K, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    disable_dkd: bool,
    #[arg(long)]
    disable_bias_net: bool,
    #[arg(long)]
    flip_dkd_condition: bool,
    #[arg(long)]
    cosine_serving: bool,
    #[arg(long)]
    expert_aux_loss: bool,
}

#[derive(Debug, Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to read instead of the run's trained model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(dir) = &self.data_dir {
            cfg.data = DataSource::Movielens { dir: dir.clone() };
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(e) = self.pretrain_epochs {
            cfg.pretrain_epochs = e;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(beta) = self.beta {
            cfg.beta = beta;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(ks) = &self.k {
            cfg.eval.hr_ks = ks.clone();
            cfg.eval.ndcg_ks = ks.clone();
        }
        let a = &mut cfg.ablation;
        a.disable_dkd |= self.disable_dkd;
        a.disable_bias_net |= self.disable_bias_net;
        a.flip_dkd_condition |= self.flip_dkd_condition;
        a.cosine_serving |= self.cosine_serving;
        a.expert_aux_loss |= self.expert_aux_loss;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_epoch(stage: &str, log: &EpochLog) {
    println!(
        "{stage} epoch {:>3}  steps {:>5}  L {:.6}  L_d {:.6}  L_o {:.6}  w_cold {:.4}  distill_active {:.3}",
        log.epoch, log.steps, log.main, log.distill, log.total, log.mean_w_cold, log.distill_active_fraction
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let cfg = c.resolve()?;
            let s = pipeline::cmd_prepare(&cfg).context("prepare")?;
            println!("interactions {}", s.interactions);
            println!("users {}  items {}", s.users, s.items);
            println!("train {}  test {}", s.train, s.test);
            println!(
                "simulated cold users {}  dropped interactions {}",
                s.simulated_cold_users, s.dropped_interactions
            );
            for (cohort, n) in &s.cohorts {
                println!("cohort {cohort} {n}");
            }
        }
        Command::Pretrain(c) => {
            let cfg = c.resolve()?;
            let logs = pipeline::cmd_pretrain(&cfg).context("pretrain")?;
            for log in &logs {
                print_epoch("pretrain", log);
            }
        }
        Command::Cluster(c) => {
            let cfg = c.resolve()?;
            let g = pipeline::cmd_cluster(&cfg).context("cluster")?;
            let p = &g.provenance;
            println!(
                "groups {}  points {}  iterations {}  objective {:.6}",
                p.m, p.points, p.iterations, p.objective
            );
            println!("sizes {:?}", g.sizes);
        }
        Command::SelectFeatures(c) => {
            let cfg = c.resolve()?;
            let set = pipeline::cmd_select_features(&cfg).context("select-features")?;
            for f in &set.ranking {
                let mark = if set.selected.iter().any(|s| s.name == f.name) { "*" } else { " " };
                println!("{mark} {:<16} {:.6e}", f.name, f.mi);
            }
            println!("selected {}", set.names().join(","));
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            pipeline::cmd_train(&cfg, |log| print_epoch("train", log)).context("train")?;
        }
        Command::Eval(c) => {
            let cfg = c.common.resolve()?;
            let report = pipeline::cmd_eval(&cfg, c.checkpoint.as_deref()).context("eval")?;
            print!("{}", report.to_table());
        }
        Command::Export(c) => {
            let cfg = c.common.resolve()?;
            let s = pipeline::cmd_export(&cfg, c.checkpoint.as_deref()).context("export")?;
            println!("users {} -> {}", s.users, s.user_path.display());
            println!("items {} -> {}", s.items, s.item_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

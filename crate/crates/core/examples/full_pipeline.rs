//! Runs every stage (generate, train, stack, eval, report) on a small
//! configuration and prints the report.

use anyhow::Result;
use hilomix::config::{Ablation, Config};
use hilomix::pipeline::{run_stage, Stage};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HILOMIX_LOG", "warn")).init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example".into());
    let mut cfg = Config::default();
    cfg.seeds = vec![0, 1];
    cfg.data.synthetic.n_accounts = 600;
    cfg.data.synthetic.n_users = 300;
    cfg.data.synthetic.n_assoc_labels = 200;
    cfg.train.epochs = 50;
    cfg.eval.ablations = vec![Ablation::LabelDivision];
    run_stage(Stage::All, &cfg, out.as_ref())?;
    print!("{}", std::fs::read_to_string(std::path::Path::new(&out).join("report").join("report.md"))?);
    Ok(())
}

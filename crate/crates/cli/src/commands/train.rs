use clap::Args;

use crate::error::Result;
use crate::pipeline::{load_dataset, train_and_test};
use crate::run::{write_json, write_run_record};
use crate::Common;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let dir = cfg.out_dir("train");
    write_run_record(&dir, "train", &cfg)?;
    let ds = load_dataset(&cfg)?;
    let out = train_and_test(&cfg, &ds)?;
    aikae::models::save_checkpoint(&out.model, dir.join("model.json"))?;
    out.report.write_csv(dir.join("metrics.csv"))?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    let s = &out.summary;
    println!(
        "{} ({} params): best epoch {:?}, test mse {}, mae {}",
        s.variant,
        s.param_count,
        s.best_epoch,
        s.test_mse.map_or("-".into(), |v| format!("{v:.4}")),
        s.test_mae.map_or("-".into(), |v| format!("{v:.4}")),
    );
    println!("wrote {}", dir.display());
    Ok(())
}

//! Grids of training runs collected into one CSV table.
//!
//! A grid is a list of axes, each naming a config field by its dotted path
//! and the values it takes; points are the cartesian product with the first
//! axis outermost. The table is appended to as points finish, so an
//! interrupted run resumes where it stopped.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{load_dataset, train_and_test, TrainSummary};
use crate::run::{ensure_dir, write_run_record};
use crate::Common;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// RevIN on/off × {AIKAE, IKAE-zp, IKAE, linear}.
    E2,
    /// Lookback sweep `t_l ∈ {48, 96, 192, 336, 720}`.
    E3,
    /// Augmentation size `p ∈ {0, 2, 4, 8, 16, 32}`.
    F1,
    /// Augmentation weight in the linearity loss `α ∈ {0, ½, 1}`.
    F2,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid file with `[[sweep]]` entries (`field`, `values`).
    #[arg(long, conflicts_with = "preset")]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Result table (default `<out>/ablation.csv`).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Grid points trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub field: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub sweep: Vec<Axis>,
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let raw: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            msg: e.message().to_string(),
        })?;
        serde_json::to_value(raw)
            .and_then(serde_json::from_value)
            .map_err(|e| CliError::Config {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
    }

    pub fn preset(p: Preset) -> Self {
        let axis = |field: &str, values: Value| Axis {
            field: field.into(),
            values: values.as_array().expect("array").clone(),
        };
        let sweep = match p {
            Preset::E2 => vec![
                axis("model.revin", json!([false, true])),
                axis("model.variant", json!(["aikae", "ikae_zp", "ikae", "linear"])),
            ],
            Preset::E3 => vec![axis("data.t_l", json!([48, 96, 192, 336, 720]))],
            Preset::F1 => vec![
                axis("model.variant", json!(["aikae"])),
                axis("model.p", json!([0, 2, 4, 8, 16, 32])),
            ],
            Preset::F2 => vec![
                axis("model.variant", json!(["aikae"])),
                axis("loss.alpha", json!([0.0, 0.5, 1.0])),
            ],
        };
        Self { sweep }
    }

    /// Value tuples in table order.
    pub fn points(&self) -> Result<Vec<Vec<Value>>> {
        if self.sweep.is_empty() {
            return Err(CliError::usage("the grid has no sweep axes"));
        }
        if let Some(a) = self.sweep.iter().find(|a| a.values.is_empty()) {
            return Err(CliError::usage(format!("sweep over `{}` has no values", a.field)));
        }
        let mut out: Vec<Vec<Value>> = vec![Vec::new()];
        for axis in &self.sweep {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(v.clone());
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

const METRIC_COLUMNS: [&str; 8] =
    ["variant", "n", "d", "param_count", "best_epoch", "best_val_loss", "test_mse", "test_mae"];

fn header(grid: &GridSpec) -> Vec<String> {
    let mut h = vec!["point".to_string()];
    h.extend(grid.sweep.iter().map(|a| a.field.clone()));
    h.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    h
}

fn record(point: usize, values: &[Value], s: &TrainSummary) -> Vec<String> {
    let mut r = vec![point.to_string()];
    r.extend(values.iter().map(cell));
    r.extend([
        s.variant.clone(),
        s.n.to_string(),
        s.d.to_string(),
        s.param_count.to_string(),
        s.best_epoch.map_or(String::new(), |e| e.to_string()),
        opt(s.best_val_loss),
        opt(s.test_mse),
        opt(s.test_mae),
    ]);
    r
}

/// Rows already in `table`, keyed by point index. The header must match.
fn existing_rows(table: &Path, expected: &[String]) -> Result<Vec<Vec<String>>> {
    if !table.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(table)?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(CliError::usage(format!(
            "{} holds a different grid (columns {:?}); remove it or pick another --table",
            table.display(),
            found
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn write_sorted(table: &Path, header: &[String], mut rows: Vec<Vec<String>>) -> Result<()> {
    rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(usize::MAX));
    let mut w = csv::Writer::from_path(table)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| CliError::io(table, e))
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let base = args.common.resolve()?;
    let grid = match (&args.grid, args.preset) {
        (Some(path), _) => GridSpec::load(path)?,
        (None, Some(p)) => GridSpec::preset(p),
        (None, None) => return Err(CliError::usage("give a grid file (--grid) or a --preset")),
    };
    let points = grid.points()?;
    // resolve every point first so a bad field fails before any training
    let configs = points
        .iter()
        .map(|values| {
            let mut cfg = base.clone();
            for (axis, v) in grid.sweep.iter().zip(values) {
                cfg = cfg.with_field(&axis.field, v)?;
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<RunConfig>>>()?;

    let dir = base.out_dir("ablate");
    ensure_dir(&dir)?;
    write_run_record(&dir, "ablate", &base)?;
    let table = args.table.clone().unwrap_or_else(|| dir.join("ablation.csv"));
    let header = header(&grid);
    let rows = existing_rows(&table, &header)?;
    let done: BTreeSet<usize> = rows.iter().filter_map(|r| r[0].parse().ok()).collect();
    let todo: Vec<usize> = (0..points.len()).filter(|i| !done.contains(i)).collect();
    println!("{} grid points, {} already in {}", points.len(), done.len(), table.display());

    // appends are serialized; the writer keeps the header written once
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&table)
        .map_err(|e| CliError::io(&table, e))?;
    let mut writer = csv::Writer::from_writer(file);
    if rows.is_empty() {
        writer.write_record(&header)?;
        writer.flush().map_err(|e| CliError::io(&table, e))?;
    }
    let writer = Mutex::new(writer);
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<CliError>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..args.threads.max(1) {
            s.spawn(|| loop {
                if failure.lock().expect("lock").is_some() {
                    return;
                }
                let Some(&i) = todo.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    return;
                };
                let result = load_dataset(&configs[i]).and_then(|ds| train_and_test(&configs[i], &ds));
                match result {
                    Ok(out) => {
                        let rec = record(i, &points[i], &out.summary);
                        let mut w = writer.lock().expect("lock");
                        let written = w.write_record(&rec).map_err(CliError::from).and_then(|_| {
                            w.flush().map_err(|e| CliError::io(&table, e))
                        });
                        if let Err(e) = written {
                            *failure.lock().expect("lock") = Some(e);
                            return;
                        }
                        println!("point {i}: test mse {}", opt(out.summary.test_mse));
                    }
                    Err(e) => {
                        let labels: Vec<String> =
                            grid.sweep.iter().zip(&points[i]).map(|(a, v)| format!("{}={}", a.field, cell(v))).collect();
                        *failure.lock().expect("lock") =
                            Some(e.context(format!("grid point {i} ({})", labels.join(", "))));
                        return;
                    }
                }
            });
        }
    });
    drop(writer);
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let all = existing_rows(&table, &header)?;
    write_sorted(&table, &header, all)?;
    println!("wrote {}", table.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_sizes() {
        assert_eq!(GridSpec::preset(Preset::E2).points().unwrap().len(), 8);
        assert_eq!(GridSpec::preset(Preset::E3).points().unwrap().len(), 5);
        assert_eq!(GridSpec::preset(Preset::F1).points().unwrap().len(), 6);
        assert_eq!(GridSpec::preset(Preset::F2).points().unwrap().len(), 3);
    }

    #[test]
    fn first_axis_is_outermost() {
        let g = GridSpec::preset(Preset::E2);
        let pts = g.points().unwrap();
        assert_eq!(pts[0], vec![json!(false), json!("aikae")]);
        assert_eq!(pts[1], vec![json!(false), json!("ikae_zp")]);
        assert_eq!(pts[4], vec![json!(true), json!("aikae")]);
    }

    #[test]
    fn empty_grids_are_errors() {
        assert!(GridSpec { sweep: vec![] }.points().is_err());
        let g = GridSpec {
            sweep: vec![Axis {
                field: "model.p".into(),
                values: vec![],
            }],
        };
        assert!(g.points().is_err());
    }

    #[test]
    fn grid_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, "[[sweep]]\nfield = \"loss.alpha\"\nvalues = [0.0, 0.5]\n").unwrap();
        let g = GridSpec::load(&path).unwrap();
        assert_eq!(g.points().unwrap().len(), 2);
        std::fs::write(&path, "[[sweep]]\nfield = \"loss.alpha\"\nvalue = [0.0]\n").unwrap();
        assert!(GridSpec::load(&path).is_err());
    }
}

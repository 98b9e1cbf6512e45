//! Test-set evaluation and report emission: MAE, improvement percentages,
//! ensemble-size sweeps and cumulative percentile bands.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use crate::cgraph::CrystalGraph;
use crate::checkpoint::Checkpoint;
use crate::ensemble::{
    average_members, member_predictions, shared_normalizer, RankedCheckpoints, Strategy,
};
use crate::error::{Error, IoContext, Result};
use crate::net::forward;

pub const PERCENTILES: [usize; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "MAE needs equal non-empty inputs ({} vs {})",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

/// `100·(best − ensemble)/best`; positive means the ensemble is better.
pub fn improvement_pct(best_val_mae: f64, ensemble_mae: f64) -> Result<f64> {
    if !(best_val_mae > 0.0) {
        return Err(Error::InvalidInput(format!(
            "baseline MAE {best_val_mae} must be positive"
        )));
    }
    Ok(100.0 * (best_val_mae - ensemble_mae) / best_val_mae)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub tasks: Vec<String>,
    /// Per task, physical units.
    pub mae: Vec<f64>,
    pub n_test: usize,
    /// `[task][sample]`, prediction − target.
    pub residuals: Vec<Vec<f64>>,
}

/// Per-task MAE of `preds[sample][task]` against `targets[sample][task]`.
pub fn evaluate(tasks: &[String], preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<EvalResult> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::InvalidInput(
            "evaluation needs matching non-empty inputs".into(),
        ));
    }
    let column = |rows: &[Vec<f64>], t: usize| rows.iter().map(|r| r[t]).collect::<Vec<_>>();
    let mut maes = Vec::with_capacity(tasks.len());
    let mut residuals = Vec::with_capacity(tasks.len());
    for t in 0..tasks.len() {
        let (p, y) = (column(preds, t), column(targets, t));
        maes.push(mae(&p, &y)?);
        residuals.push(p.iter().zip(&y).map(|(a, b)| a - b).collect());
    }
    Ok(EvalResult {
        tasks: tasks.to_vec(),
        mae: maes,
        n_test: preds.len(),
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    /// Per task.
    pub mae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub strategy: Strategy,
    pub tasks: Vec<String>,
    pub points: Vec<SweepPoint>,
}

/// MAE of the top-n ensemble for every `n` in `1..=n_max`, with `members`
/// best first. Prediction ensembles reuse one forward pass per member and
/// prefix sums.
pub fn sweep_members(
    members: &[Checkpoint],
    n_max: usize,
    inputs: &[CrystalGraph],
    targets: &[Vec<f64>],
    strategy: Strategy,
) -> Result<SweepCurve> {
    if n_max == 0 || n_max > members.len() {
        return Err(Error::Ensemble(format!(
            "sweep size {n_max} out of range 1..={}",
            members.len()
        )));
    }
    let members = &members[..n_max];
    let tasks = members[0].meta.arch.tasks.clone();
    let norm = shared_normalizer(members)?;
    let mut points = Vec::with_capacity(n_max);
    match strategy {
        Strategy::Prediction => {
            let per_member = member_predictions(members, inputs)?;
            let mut sums = per_member[0].clone();
            for n in 1..=n_max {
                if n > 1 {
                    for (acc, row) in sums.iter_mut().zip(&per_member[n - 1]) {
                        for (a, x) in acc.iter_mut().zip(row) {
                            *a += x;
                        }
                    }
                }
                let preds: Vec<Vec<f64>> = sums
                    .iter()
                    .map(|s| norm.denormalize(&s.iter().map(|x| x / n as f64).collect::<Vec<_>>()))
                    .collect();
                points.push(SweepPoint {
                    n,
                    mae: evaluate(&tasks, &preds, targets)?.mae,
                });
            }
        }
        Strategy::Model => {
            for n in 1..=n_max {
                let params = average_members(&members[..n])?;
                let preds = inputs
                    .iter()
                    .map(|g| {
                        forward(g, &params, &members[0].meta.arch)
                            .map(|p| norm.denormalize(&p.normalized))
                    })
                    .collect::<Result<Vec<_>>>()?;
                points.push(SweepPoint {
                    n,
                    mae: evaluate(&tasks, &preds, targets)?.mae,
                });
            }
        }
    }
    Ok(SweepCurve {
        strategy,
        tasks,
        points,
    })
}

pub fn sweep_ensemble(
    ranked: &RankedCheckpoints,
    n_max: usize,
    inputs: &[CrystalGraph],
    targets: &[Vec<f64>],
    strategy: Strategy,
) -> Result<SweepCurve> {
    if n_max == 0 || n_max > ranked.len() {
        return Err(Error::Ensemble(format!(
            "sweep size {n_max} out of range 1..={}",
            ranked.len()
        )));
    }
    sweep_members(&ranked.load_top(n_max)?, n_max, inputs, targets, strategy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Largest targets first: the band at p holds the top p%.
    TopBottom,
    /// Smallest targets first: the band at p holds the bottom p%.
    BottomTop,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::TopBottom => "top_bottom",
            Direction::BottomTop => "bottom_top",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_bottom" => Ok(Direction::TopBottom),
            "bottom_top" => Ok(Direction::BottomTop),
            other => Err(Error::Config(format!("unknown band direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandRow {
    pub percentile: usize,
    pub band_size: usize,
    pub mae_bestval: f64,
    pub mae_ensemble: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandReport {
    pub direction: Direction,
    pub task: String,
    pub rows: Vec<BandRow>,
}

/// `round(p·n/100)` in integer arithmetic, halves rounding up.
fn band_count(p: usize, n: usize) -> usize {
    (p * n + 50) / 100
}

/// Indices of the cumulative band at percentile `p` after sorting by target.
/// Ties in the target are ordered by sample id.
pub fn band_members(ids: &[String], targets: &[f64], p: usize, direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        targets[a]
            .total_cmp(&targets[b])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let n = targets.len();
    match direction {
        Direction::BottomTop => order[..band_count(p, n)].to_vec(),
        Direction::TopBottom => order[band_count(100 - p, n)..].to_vec(),
    }
}

/// Best-val and ensemble MAE inside each cumulative percentile band,
/// p = 10, 20, .., 90.
pub fn percentile_bands(
    task: &str,
    ids: &[String],
    targets: &[f64],
    preds_best: &[f64],
    preds_ens: &[f64],
    direction: Direction,
) -> Result<BandReport> {
    let n = targets.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "percentile bands need ≥ 10 samples, got {n}"
        )));
    }
    if ids.len() != n || preds_best.len() != n || preds_ens.len() != n {
        return Err(Error::InvalidInput("band inputs differ in length".into()));
    }
    let rows = PERCENTILES
        .iter()
        .map(|&p| {
            let idx = band_members(ids, targets, p, direction);
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let y = pick(targets);
            Ok(BandRow {
                percentile: p,
                band_size: idx.len(),
                mae_bestval: mae(&pick(preds_best), &y)?,
                mae_ensemble: mae(&pick(preds_ens), &y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BandReport {
        direction,
        task: task.to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub task: String,
    pub strategy: Strategy,
    pub n_used: usize,
    pub best_val_mae: f64,
    pub ensemble_mae: f64,
    /// `None` when the baseline MAE is zero.
    pub improvement_pct: Option<f64>,
}

impl SummaryRow {
    pub fn new(
        task: &str,
        strategy: Strategy,
        n_used: usize,
        best_val_mae: f64,
        ensemble_mae: f64,
    ) -> Self {
        SummaryRow {
            task: task.to_string(),
            strategy,
            n_used,
            best_val_mae,
            ensemble_mae,
            improvement_pct: improvement_pct(best_val_mae, ensemble_mae).ok(),
        }
    }
}

/// Per-sample predictions, with targets where known.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub tasks: Vec<String>,
    pub ids: Vec<String>,
    pub preds: Vec<Vec<f64>>,
    pub targets: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Anything that can be written as a CSV table or a JSON document.
pub trait Report {
    fn to_csv(&self) -> String;
    fn to_json(&self) -> Value;
}

impl Report for [SweepCurve] {
    /// `n,strategy,task,mae`, one block per curve.
    fn to_csv(&self) -> String {
        let mut out = String::from("n,strategy,task,mae\n");
        for c in self {
            for p in &c.points {
                for (t, m) in c.tasks.iter().zip(&p.mae) {
                    out.push_str(&format!("{},{},{t},{m}\n", p.n, c.strategy));
                }
            }
        }
        out
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.iter()
                .map(|c| {
                    json!({
                        "strategy": c.strategy,
                        "tasks": c.tasks,
                        "points": c.points,
                    })
                })
                .collect(),
        )
    }
}

impl Report for [BandReport] {
    /// `direction,percentile,band_size,task,mae_bestval,mae_ensemble`.
    fn to_csv(&self) -> String {
        let mut out =
            String::from("direction,percentile,band_size,task,mae_bestval,mae_ensemble\n");
        for b in self {
            for r in &b.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    b.direction, r.percentile, r.band_size, b.task, r.mae_bestval, r.mae_ensemble
                ));
            }
        }
        out
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.iter()
                .map(|b| json!({"direction": b.direction, "task": b.task, "rows": b.rows}))
                .collect(),
        )
    }
}

impl Report for [SummaryRow] {
    /// `task,strategy,n_used,best_val_mae,ensemble_mae,improvement_pct` with
    /// the improvement as a signed two-decimal percentage.
    fn to_csv(&self) -> String {
        let mut out =
            String::from("task,strategy,n_used,best_val_mae,ensemble_mae,improvement_pct\n");
        for r in self {
            let imp = r
                .improvement_pct
                .map(|p| format!("{p:+.2}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{imp}\n",
                r.task, r.strategy, r.n_used, r.best_val_mae, r.ensemble_mae
            ));
        }
        out
    }

    /// `{task: {best_val_mae, ensemble_mae, improvement_pct, n_used, strategy}}`.
    fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for r in self {
            map.insert(
                r.task.clone(),
                json!({
                    "best_val_mae": r.best_val_mae,
                    "ensemble_mae": r.ensemble_mae,
                    "improvement_pct": r.improvement_pct,
                    "n_used": r.n_used,
                    "strategy": r.strategy,
                }),
            );
        }
        Value::Object(map)
    }
}

impl Report for PredictionTable {
    /// `id,pred_<task>..,target_<task>..`; unknown targets are empty cells.
    fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for t in &self.tasks {
            out.push_str(&format!(",pred_{t}"));
        }
        for t in &self.tasks {
            out.push_str(&format!(",target_{t}"));
        }
        out.push('\n');
        for ((id, p), y) in self.ids.iter().zip(&self.preds).zip(&self.targets) {
            out.push_str(id);
            for v in p {
                out.push_str(&format!(",{v}"));
            }
            for t in 0..self.tasks.len() {
                out.push(',');
                if let Some(y) = y {
                    out.push_str(&y[t].to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.ids
                .iter()
                .zip(&self.preds)
                .zip(&self.targets)
                .map(|((id, p), y)| json!({"id": id, "pred": p, "target": y}))
                .collect(),
        )
    }
}

/// Writes a report; identical inputs give identical bytes.
pub fn emit_report<R: Report + ?Sized>(
    report: &R,
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report.to_json())?;
            s.push('\n');
            s
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, text).at(path)
}

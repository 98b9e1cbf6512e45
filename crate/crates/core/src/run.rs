//! Run directories: a locked config, a split, per-epoch checkpoints, a
//! training log and reports, plus the commands that produce them.
//!
//! ```text
//! <run>/config.lock.json
//! <run>/splits.json
//! <run>/checkpoints/ckpt_00001.cgen ..
//! <run>/train_log.csv
//! <run>/reports/
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cgraph::{AtomFeaturizer, CrystalGraph, GraphConfig};
use crate::checkpoint::load_checkpoint;
use crate::ensemble::{
    check_n, ensemble_members, rank_checkpoints, RankedCheckpoints, Strategy, MAX_ENSEMBLE,
};
use crate::error::{Error, IoContext, Result};
use crate::evalrep::{
    emit_report, evaluate, percentile_bands, sweep_members, BandReport, Direction, EvalResult,
    PredictionTable, ReportFormat, SummaryRow, SweepCurve,
};
use crate::net::{forward, ArchConfig};
use crate::structio::{load_dataset, split_dataset, SplitIndices, DEFAULT_FRACTIONS};
use crate::train::{
    default_task_weights, prepare_samples, train_run, Sample, TrainConfig, TrainLog,
};

pub const LOCK_FILE: &str = "config.lock.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const REPORT_DIR: &str = "reports";

/// Default ensemble sizes: 20 members for one task, 40 otherwise.
pub fn default_top_n(n_tasks: usize) -> usize {
    if n_tasks == 1 {
        20
    } else {
        40
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub d_atom: usize,
    pub d_hidden: usize,
    pub n_conv: usize,
    pub tasks: Vec<String>,
    pub seed: u64,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            d_atom: 64,
            d_hidden: 128,
            n_conv: 3,
            tasks: vec!["formation_energy".into()],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Resolved from the task count when absent.
    pub task_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 100,
            batch_size: 256,
            lr: 0.01,
            task_weights: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Resolved from the task count when absent.
    pub top_n: Option<usize>,
    pub strategy: Strategy,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            top_n: None,
            strategy: Strategy::Prediction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    /// A `splits.json` to reuse instead of drawing a new split.
    pub file: Option<PathBuf>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub graph: GraphConfig,
    pub arch: ArchSection,
    pub train: TrainSection,
    pub ensemble: EnsembleSection,
    pub split: SplitSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
            graph: GraphConfig::default(),
            arch: ArchSection::default(),
            train: TrainSection::default(),
            ensemble: EnsembleSection::default(),
            split: SplitSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).at(path)?)
    }

    /// Fills every defaulted field and validates the result.
    pub fn resolve(mut self) -> Result<Self> {
        let n_tasks = self.arch.tasks.len();
        if n_tasks == 0 {
            return Err(Error::Config("at least one task is required".into()));
        }
        for t in &self.arch.tasks {
            if !crate::structio::PROPERTY_NAMES.contains(&t.as_str()) {
                return Err(Error::Config(format!(
                    "unknown task `{t}` (expected one of {:?})",
                    crate::structio::PROPERTY_NAMES
                )));
            }
        }
        self.train
            .task_weights
            .get_or_insert_with(|| default_task_weights(n_tasks));
        self.ensemble.top_n.get_or_insert(default_top_n(n_tasks));
        self.graph.validate().map_err(as_config)?;
        self.train_config().validate(n_tasks).map_err(as_config)?;
        if let Some(n) = self.ensemble.top_n {
            if n == 0 || n > MAX_ENSEMBLE {
                return Err(Error::Config(format!(
                    "top_n {n} outside 1..={MAX_ENSEMBLE}"
                )));
            }
        }
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Architecture for a featurizer of width `d_init`.
    pub fn arch_config(&self, d_init: usize) -> ArchConfig {
        ArchConfig {
            d_init,
            d_edge: self.graph.edge_dim(),
            d_atom: self.arch.d_atom,
            d_hidden: self.arch.d_hidden,
            n_conv: self.arch.n_conv,
            tasks: self.arch.tasks.clone(),
            seed: self.arch.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            task_weights: self
                .train
                .task_weights
                .clone()
                .unwrap_or_else(|| default_task_weights(self.arch.tasks.len())),
            seed: self.train.seed,
            checkpoint_dir: self.out.join(CHECKPOINT_DIR),
        }
    }
}

/// Turns invalid-value errors raised while checking a config into config errors.
fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Loads the dataset, draws or reads the split, trains, and writes the run
/// directory. Refuses to write into a run that already holds checkpoints.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainLog> {
    let cfg = cfg.clone().resolve()?;
    let ckpt_dir = cfg.out.join(CHECKPOINT_DIR);
    if ckpt_dir.is_dir() && fs::read_dir(&ckpt_dir).at(&ckpt_dir)?.next().is_some() {
        return Err(Error::Config(format!(
            "{} already contains checkpoints; choose a fresh run directory",
            ckpt_dir.display()
        )));
    }
    let featurizer = AtomFeaturizer::from_source(&cfg.graph.atom_feat_source)?;
    let ds = load_dataset(&cfg.data)?;
    let splits = match &cfg.split.file {
        Some(path) => {
            let s: SplitIndices = serde_json::from_str(&fs::read_to_string(path).at(path)?)?;
            s.validate(ds.len())?;
            s
        }
        None => split_dataset(ds.len(), cfg.split.fractions, cfg.split.seed)?,
    };
    let samples = prepare_samples(&ds, &cfg.arch.tasks, &cfg.graph, &featurizer)?;

    fs::create_dir_all(&cfg.out).at(&cfg.out)?;
    write_text(&cfg.out.join(LOCK_FILE), &cfg.to_json()?)?;
    let mut splits_json = serde_json::to_string_pretty(&splits)?;
    splits_json.push('\n');
    write_text(&cfg.out.join(SPLITS_FILE), &splits_json)?;

    let arch = cfg.arch_config(featurizer.d_init());
    let log = train_run(&samples, &splits, &arch, &cfg.train_config())?;
    log.write_csv(&cfg.out.join(TRAIN_LOG))?;
    Ok(log)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Which single checkpoint `evaluate` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointSel {
    Best,
    Epoch(usize),
}

impl FromStr for CheckpointSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "best" {
            return Ok(CheckpointSel::Best);
        }
        s.parse().map(CheckpointSel::Epoch).map_err(|_| {
            Error::Config(format!(
                "checkpoint must be `best` or an epoch number, got `{s}`"
            ))
        })
    }
}

/// An existing run directory with one split's graphs loaded.
pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
    pub splits: SplitIndices,
    pub ranked: RankedCheckpoints,
    pub split: SplitName,
    pub ids: Vec<String>,
    pub graphs: Vec<CrystalGraph>,
    /// Physical-unit targets, `[sample][task]`.
    pub targets: Vec<Vec<f64>>,
}

impl RunDir {
    pub fn open(root: &Path, split: SplitName) -> Result<Self> {
        let config = RunConfig::from_file(&root.join(LOCK_FILE))?.resolve()?;
        let splits_path = root.join(SPLITS_FILE);
        let splits: SplitIndices =
            serde_json::from_str(&fs::read_to_string(&splits_path).at(&splits_path)?)?;
        let ranked = rank_checkpoints(&root.join(CHECKPOINT_DIR))?;
        let ds = load_dataset(&config.data)?;
        splits.validate(ds.len())?;
        let idx = match split {
            SplitName::Train => &splits.train,
            SplitName::Val => &splits.val,
            SplitName::Test => &splits.test,
        };
        let subset = crate::structio::Dataset {
            entries: idx.iter().map(|&i| ds.entries[i].clone()).collect(),
            source_dir: ds.source_dir.clone(),
        };
        let featurizer = AtomFeaturizer::from_source(&config.graph.atom_feat_source)?;
        let samples = prepare_samples(&subset, &config.arch.tasks, &config.graph, &featurizer)?;
        let (ids, graphs, targets) = samples.into_iter().fold(
            (Vec::new(), Vec::new(), Vec::new()),
            |(mut a, mut b, mut c), Sample { id, graph, targets }| {
                a.push(id);
                b.push(graph);
                c.push(targets);
                (a, b, c)
            },
        );
        if ids.is_empty() {
            return Err(Error::Dataset(format!("{split} split is empty")));
        }
        Ok(RunDir {
            root: root.to_path_buf(),
            config,
            splits,
            ranked,
            split,
            ids,
            graphs,
            targets,
        })
    }

    pub fn tasks(&self) -> &[String] {
        &self.config.arch.tasks
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join(REPORT_DIR).join(name)
    }

    /// Ensemble size: `requested`, or the locked default clamped to the
    /// number of checkpoints.
    pub fn resolve_top_n(&self, requested: Option<usize>) -> Result<usize> {
        match requested {
            Some(n) => {
                check_n(n, self.ranked.len())?;
                Ok(n)
            }
            None => {
                let n = self
                    .config
                    .ensemble
                    .top_n
                    .unwrap_or(default_top_n(self.tasks().len()));
                let n = n.min(self.ranked.len());
                check_n(n, self.ranked.len())?;
                Ok(n)
            }
        }
    }

    fn table(&self, preds: Vec<Vec<f64>>) -> PredictionTable {
        PredictionTable {
            tasks: self.tasks().to_vec(),
            ids: self.ids.clone(),
            preds,
            targets: self.targets.iter().cloned().map(Some).collect(),
        }
    }

    /// Physical-unit predictions of the best-ranked checkpoint.
    pub fn best_predictions(&self) -> Result<Vec<Vec<f64>>> {
        let best = load_checkpoint(&self.ranked.best().path)?;
        self.graphs
            .iter()
            .map(|g| {
                forward(g, &best.params, &best.meta.arch)
                    .map(|p| p.denormalize(&best.meta.normalizer))
            })
            .collect()
    }

    fn ensemble_predictions(&self, n: usize, strategy: Strategy) -> Result<Vec<Vec<f64>>> {
        let members = self.ranked.load_top(n)?;
        Ok(ensemble_members(&members, strategy, &self.graphs)?.values)
    }
}

pub struct EvaluateOutcome {
    pub epoch: usize,
    pub result: EvalResult,
    pub predictions: PathBuf,
}

/// Scores one checkpoint and writes its predictions.
pub fn cmd_evaluate(run: &RunDir, sel: CheckpointSel) -> Result<EvaluateOutcome> {
    let (entry, tag) = match sel {
        CheckpointSel::Best => (run.ranked.best(), "best".to_string()),
        CheckpointSel::Epoch(e) => (
            run.ranked
                .entries
                .iter()
                .find(|r| r.epoch == e)
                .ok_or_else(|| Error::Config(format!("no checkpoint for epoch {e}")))?,
            format!("epoch{e:05}"),
        ),
    };
    let ckpt = load_checkpoint(&entry.path)?;
    let preds = run
        .graphs
        .iter()
        .map(|g| {
            forward(g, &ckpt.params, &ckpt.meta.arch).map(|p| p.denormalize(&ckpt.meta.normalizer))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = evaluate(run.tasks(), &preds, &run.targets)?;
    let path = run.report_path(&format!("predictions_{}_{tag}.csv", run.split));
    emit_report(&run.table(preds), &path, ReportFormat::Csv)?;
    Ok(EvaluateOutcome {
        epoch: entry.epoch,
        result,
        predictions: path,
    })
}

pub struct EnsembleOutcome {
    pub n: usize,
    pub summary: Vec<SummaryRow>,
    pub predictions: PathBuf,
    pub summary_json: PathBuf,
}

/// Top-n ensemble against the best-val checkpoint. Writes predictions and a
/// summary in JSON and CSV.
pub fn cmd_ensemble(
    run: &RunDir,
    top_n: Option<usize>,
    strategy: Strategy,
) -> Result<EnsembleOutcome> {
    let n = run.resolve_top_n(top_n)?;
    let best = evaluate(run.tasks(), &run.best_predictions()?, &run.targets)?;
    let preds = run.ensemble_predictions(n, strategy)?;
    let ens = evaluate(run.tasks(), &preds, &run.targets)?;
    let summary: Vec<SummaryRow> = run
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| SummaryRow::new(task, strategy, n, best.mae[t], ens.mae[t]))
        .collect();
    let stem = format!("{}_{strategy}_top{n}", run.split);
    let predictions = run.report_path(&format!("predictions_{stem}.csv"));
    let summary_json = run.report_path(&format!("summary_{stem}.json"));
    emit_report(&run.table(preds), &predictions, ReportFormat::Csv)?;
    emit_report(summary.as_slice(), &summary_json, ReportFormat::Json)?;
    emit_report(
        summary.as_slice(),
        &run.report_path(&format!("summary_{stem}.csv")),
        ReportFormat::Csv,
    )?;
    Ok(EnsembleOutcome {
        n,
        summary,
        predictions,
        summary_json,
    })
}

/// MAE for every ensemble size `1..=max_n` and each strategy, in one CSV.
/// Without `max_n` the sweep covers up to 50 members, clamped to the run.
pub fn cmd_sweep(
    run: &RunDir,
    max_n: Option<usize>,
    strategies: &[Strategy],
) -> Result<(Vec<SweepCurve>, PathBuf)> {
    let n = match max_n {
        Some(n) => {
            check_n(n, run.ranked.len())?;
            n
        }
        None => MAX_ENSEMBLE.min(run.ranked.len()),
    };
    let members = run.ranked.load_top(n)?;
    let curves = strategies
        .iter()
        .map(|&s| sweep_members(&members, n, &run.graphs, &run.targets, s))
        .collect::<Result<Vec<_>>>()?;
    let path = run.report_path(&format!("sweep_{}.csv", run.split));
    emit_report(curves.as_slice(), &path, ReportFormat::Csv)?;
    Ok((curves, path))
}

/// Cumulative percentile bands for every task and direction.
pub fn cmd_bands(
    run: &RunDir,
    top_n: Option<usize>,
    strategy: Strategy,
    directions: &[Direction],
) -> Result<(Vec<BandReport>, PathBuf)> {
    let n = run.resolve_top_n(top_n)?;
    let best = run.best_predictions()?;
    let ens = run.ensemble_predictions(n, strategy)?;
    let column = |rows: &[Vec<f64>], t: usize| rows.iter().map(|r| r[t]).collect::<Vec<_>>();
    let mut reports = Vec::new();
    for (t, task) in run.tasks().iter().enumerate() {
        let y = column(&run.targets, t);
        for &d in directions {
            reports.push(percentile_bands(
                task,
                &run.ids,
                &y,
                &column(&best, t),
                &column(&ens, t),
                d,
            )?);
        }
    }
    let path = run.report_path(&format!("bands_{}_{strategy}_top{n}.csv", run.split));
    emit_report(reports.as_slice(), &path, ReportFormat::Csv)?;
    Ok((reports, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::default().resolve().unwrap();
        assert_eq!(c.train.task_weights, Some(vec![1.0]));
        assert_eq!(c.ensemble.top_n, Some(20));
        let mut m = RunConfig::default();
        m.arch.tasks = vec![
            "formation_energy".into(),
            "band_gap".into(),
            "density".into(),
        ];
        let m = m.resolve().unwrap();
        assert_eq!(m.train.task_weights, Some(vec![1.5, 3.0, 1.5]));
        assert_eq!(m.ensemble.top_n, Some(40));
    }

    #[test]
    fn lock_round_trips() {
        let c = RunConfig::default().resolve().unwrap();
        let text = c.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.resolve().unwrap().to_json().unwrap(), text);
    }

    #[test]
    fn partial_config_file() {
        let c = RunConfig::from_json(r#"{"data": "toy", "train": {"epochs": 5}}"#).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.graph, GraphConfig::default());
    }

    #[test]
    fn bad_configs() {
        assert!(matches!(
            RunConfig::from_json(r#"{"trian": {}}"#),
            Err(Error::Config(_))
        ));
        let mut c = RunConfig::default();
        c.arch.tasks = vec!["melting_point".into()];
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.train.lr = -1.0;
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.train.task_weights = Some(vec![1.0, 2.0]);
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.ensemble.top_n = Some(51);
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn selectors_parse() {
        assert_eq!(
            "best".parse::<CheckpointSel>().unwrap(),
            CheckpointSel::Best
        );
        assert_eq!(
            "7".parse::<CheckpointSel>().unwrap(),
            CheckpointSel::Epoch(7)
        );
        assert!("last".parse::<CheckpointSel>().is_err());
        assert_eq!("val".parse::<SplitName>().unwrap(), SplitName::Val);
    }
}

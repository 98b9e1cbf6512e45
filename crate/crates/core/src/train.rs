//! SGD training with per-epoch validation and one checkpoint per epoch.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgraph::{build_graph, AtomFeaturizer, CrystalGraph, GraphConfig};
pub use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use crate::error::{Error, IoContext, Result};
use crate::net::{batch_gradient, forward, init_model, ArchConfig, ModelParams, Normalizer};
use crate::rng::Rng;
use crate::structio::{Dataset, SplitIndices};

/// Task weights used for three-property runs
/// (formation energy, band gap, density).
pub const MULTI_TASK_WEIGHTS: [f64; 3] = [1.5, 3.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub task_weights: Vec<f64>,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    /// Defaults for `n_tasks` tasks: 100 epochs, batch 256, lr 0.01.
    pub fn with_defaults(n_tasks: usize, checkpoint_dir: PathBuf) -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            lr: 0.01,
            task_weights: default_task_weights(n_tasks),
            seed: 0,
            checkpoint_dir,
        }
    }

    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "epochs, batch_size and lr must be positive (got {}, {}, {})",
                self.epochs, self.batch_size, self.lr
            )));
        }
        if self.task_weights.len() != n_tasks || self.task_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config(format!(
                "need {n_tasks} positive task weights, got {:?}",
                self.task_weights
            )));
        }
        Ok(())
    }
}

pub fn default_task_weights(n_tasks: usize) -> Vec<f64> {
    if n_tasks == 3 {
        MULTI_TASK_WEIGHTS.to_vec()
    } else {
        vec![1.0; n_tasks]
    }
}

/// A crystal graph with its raw (physical-unit) targets, one per task.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub graph: CrystalGraph,
    pub targets: Vec<f64>,
}

/// Builds graphs for every dataset entry, in dataset order. Every entry must
/// carry a value for every task.
pub fn prepare_samples(
    ds: &Dataset,
    tasks: &[String],
    cfg: &GraphConfig,
    f: &AtomFeaturizer,
) -> Result<Vec<Sample>> {
    ds.entries
        .par_iter()
        .map(|(s, rec)| {
            let targets = tasks
                .iter()
                .map(|t| {
                    rec.get(t).ok_or_else(|| {
                        Error::Dataset(format!("`{}` has no value for task `{t}`", rec.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let graph = build_graph(s, cfg, f).map_err(|e| Error::StructureFile {
                id: rec.id.clone(),
                source: Box::new(e),
            })?;
            Ok(Sample {
                id: rec.id.clone(),
                graph,
                targets,
            })
        })
        .collect()
}

/// `p − lr·grads`.
pub fn sgd_step(p: &ModelParams, grads: &ModelParams, lr: f64) -> Result<ModelParams> {
    let mut out = p.clone();
    out.axpy(-lr, grads);
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite parameter after SGD step".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationMse {
    /// `Σ_t weight_t · per_task[t]`; equals `per_task[0]` for one task of weight 1.
    pub weighted: f64,
    pub per_task: Vec<f64>,
}

/// Mean squared error on `(graph, normalized targets)` pairs.
pub fn validate(
    p: &ModelParams,
    arch: &ArchConfig,
    val: &[(&CrystalGraph, &[f64])],
    weights: &[f64],
) -> Result<ValidationMse> {
    if val.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    let preds = val
        .par_iter()
        .map(|(g, _)| forward(g, p, arch))
        .collect::<Result<Vec<_>>>()?;
    let n = val.len() as f64;
    let per_task: Vec<f64> = (0..arch.n_tasks())
        .map(|t| {
            preds
                .iter()
                .zip(val)
                .map(|(pr, (_, y))| (y[t] - pr.normalized[t]).powi(2))
                .sum::<f64>()
                / n
        })
        .collect();
    let weighted = per_task.iter().zip(weights).map(|(m, w)| m * w).sum();
    Ok(ValidationMse { weighted, per_task })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: ValidationMse,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub tasks: Vec<String>,
    pub rows: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainLog {
    /// `epoch,train_loss,val_mse[,val_mse_<task>...],seconds`; per-task
    /// columns appear for multi-task runs.
    pub fn to_csv(&self) -> String {
        let multi = self.tasks.len() > 1;
        let mut out = String::from("epoch,train_loss,val_mse");
        if multi {
            for t in &self.tasks {
                out.push_str(&format!(",val_mse_{t}"));
            }
        }
        out.push_str(",seconds\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.epoch, r.train_loss, r.val.weighted));
            if multi {
                for m in &r.val.per_task {
                    out.push_str(&format!(",{m}"));
                }
            }
            out.push_str(&format!(",{:.3}\n", r.seconds));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).at(path)
    }
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("ckpt_{epoch:05}.cgen")
}

fn pairs<'a>(
    samples: &'a [Sample],
    idx: &[usize],
    normalized: &'a [Vec<f64>],
) -> Vec<(&'a CrystalGraph, &'a [f64])> {
    idx.iter()
        .map(|&i| (&samples[i].graph, normalized[i].as_slice()))
        .collect()
}

/// Runs `tc.epochs` epochs of mini-batch SGD and writes
/// `ckpt_00001.cgen ..` into `tc.checkpoint_dir`.
///
/// Each epoch reshuffles the training indices from one seeded stream; the
/// final partial batch is kept. Checkpoints store parameters in f32 and the
/// recorded validation MSE is computed from exactly those stored values.
pub fn train_run(
    samples: &[Sample],
    splits: &SplitIndices,
    arch: &ArchConfig,
    tc: &TrainConfig,
) -> Result<TrainLog> {
    arch.validate()?;
    tc.validate(arch.n_tasks())?;
    splits.validate(samples.len())?;
    if splits.train.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.targets.len() != arch.n_tasks()) {
        return Err(Error::Shape(format!(
            "sample `{}` has {} targets",
            s.id,
            s.targets.len()
        )));
    }
    fs::create_dir_all(&tc.checkpoint_dir).at(&tc.checkpoint_dir)?;

    let train_targets: Vec<&[f64]> = splits
        .train
        .iter()
        .map(|&i| samples[i].targets.as_slice())
        .collect();
    let normalizer = Normalizer::fit(&train_targets, arch.n_tasks())?;
    let normalized: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| normalizer.normalize(&s.targets))
        .collect();
    let val_set = pairs(samples, &splits.val, &normalized);

    let mut params = init_model(arch)?;
    let mut rng = Rng::new(tc.seed);
    let mut log = TrainLog {
        tasks: arch.tasks.clone(),
        rows: Vec::with_capacity(tc.epochs),
        checkpoints: Vec::with_capacity(tc.epochs),
    };
    for epoch in 1..=tc.epochs {
        let started = Instant::now();
        let mut order = splits.train.clone();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(tc.batch_size) {
            let batch = pairs(samples, batch_idx, &normalized);
            let (loss, grads) =
                batch_gradient(&batch, &params, arch, &tc.task_weights).map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}: non-finite training loss"
                )));
            }
            loss_sum += loss * batch_idx.len() as f64;
            params = sgd_step(&params, &grads, tc.lr)
                .map_err(|_| Error::Numeric(format!("epoch {epoch}: parameters diverged")))?;
        }
        let stored = params.to_storage_precision();
        let val = validate(&stored, arch, &val_set, &tc.task_weights)?;
        if !val.weighted.is_finite() {
            return Err(Error::Numeric(format!(
                "epoch {epoch}: non-finite validation MSE"
            )));
        }
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                arch: arch.clone(),
                epoch,
                val_mse: val.weighted,
                val_mse_per_task: val.per_task.clone(),
                normalizer: normalizer.clone(),
                train_seed: tc.seed,
            },
            params: stored,
        };
        let path = tc.checkpoint_dir.join(checkpoint_file_name(epoch));
        save_checkpoint(&ckpt, &path)?;
        let train_loss = loss_sum / splits.train.len() as f64;
        log::info!(
            "epoch {epoch:>4}  train_loss {train_loss:.6}  val_mse {:.6}",
            val.weighted
        );
        log.checkpoints.push(path);
        log.rows.push(EpochLog {
            epoch,
            train_loss,
            val,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structio::split_dataset;
    use crate::toy;

    #[test]
    fn sgd_examples() {
        let arch = ArchConfig {
            d_init: 2,
            d_edge: 2,
            d_atom: 1,
            d_hidden: 1,
            n_conv: 1,
            tasks: vec!["y".into()],
            seed: 0,
        };
        let p = init_model(&arch).unwrap();
        assert_eq!(sgd_step(&p, &ModelParams::zeros(&arch), 0.3).unwrap(), p);
        let zero = sgd_step(&p, &p, 1.0).unwrap();
        assert!(zero
            .tensors()
            .iter()
            .all(|t| t.data.iter().all(|&x| x == 0.0)));
        let mut s = ModelParams::zeros(&arch);
        s.heads[0].b.data[0] = 2.0;
        let mut g = ModelParams::zeros(&arch);
        g.heads[0].b.data[0] = 0.5;
        assert!((sgd_step(&s, &g, 0.01).unwrap().heads[0].b.data[0] - 1.995).abs() < 1e-15);
    }

    #[test]
    fn sgd_is_additive() {
        let arch = ArchConfig {
            d_init: 3,
            d_edge: 2,
            d_atom: 2,
            d_hidden: 2,
            n_conv: 1,
            tasks: vec!["y".into()],
            seed: 1,
        };
        let p = init_model(&arch).unwrap();
        let g1 = init_model(&ArchConfig {
            seed: 2,
            ..arch.clone()
        })
        .unwrap();
        let g2 = init_model(&ArchConfig {
            seed: 3,
            ..arch.clone()
        })
        .unwrap();
        let mut sum = g1.clone();
        sum.axpy(1.0, &g2);
        let once = sgd_step(&p, &sum, 0.1).unwrap();
        let twice = sgd_step(&sgd_step(&p, &g1, 0.1).unwrap(), &g2, 0.1).unwrap();
        for (a, b) in once.tensors().iter().zip(twice.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn tiny_run(dir: &Path, epochs: usize) -> (Vec<Sample>, SplitIndices, ArchConfig, TrainLog) {
        let ds = toy::generate(40, 5);
        let gcfg = GraphConfig {
            cutoff: 5.0,
            max_neighbors: 6,
            gauss_step: 0.5,
            gauss_width: 0.5,
            ..Default::default()
        };
        let f = AtomFeaturizer::one_hot();
        let tasks = vec!["formation_energy".to_string()];
        let samples = prepare_samples(&ds, &tasks, &gcfg, &f).unwrap();
        let splits = split_dataset(samples.len(), (0.7, 0.1, 0.2), 3).unwrap();
        let arch = ArchConfig {
            d_init: 100,
            d_edge: gcfg.edge_dim(),
            d_atom: 4,
            d_hidden: 8,
            n_conv: 2,
            tasks,
            seed: 1,
        };
        let tc = TrainConfig {
            epochs,
            batch_size: 8,
            lr: 0.01,
            task_weights: vec![1.0],
            seed: 2,
            checkpoint_dir: dir.to_path_buf(),
        };
        let log = train_run(&samples, &splits, &arch, &tc).unwrap();
        (samples, splits, arch, log)
    }

    #[test]
    fn one_checkpoint_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, _, log) = tiny_run(dir.path(), 5);
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, (1..=5).map(checkpoint_file_name).collect::<Vec<_>>());
        assert_eq!(names[0], "ckpt_00001.cgen");
        assert_eq!(
            log.rows.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5]
        );
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_mse,seconds\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn stored_val_mse_is_recomputable() {
        let dir = tempfile::tempdir().unwrap();
        let (samples, splits, arch, log) = tiny_run(dir.path(), 2);
        let c = load_checkpoint(&log.checkpoints[1]).unwrap();
        // brute-force re-summation over the validation split
        let mut se = 0.0;
        for &i in &splits.val {
            let y = c.meta.normalizer.normalize(&samples[i].targets)[0];
            let yhat = forward(&samples[i].graph, &c.params, &arch)
                .unwrap()
                .normalized[0];
            se += (y - yhat) * (y - yhat);
        }
        let brute = se / splits.val.len() as f64;
        assert!((brute - c.meta.val_mse).abs() <= 1e-12 * brute.max(1.0));
        assert_eq!(c.meta.val_mse, log.rows[1].val.weighted);
    }

    #[test]
    fn validate_examples() {
        let arch = ArchConfig {
            d_init: 100,
            d_edge: 3,
            d_atom: 2,
            d_hidden: 2,
            n_conv: 1,
            tasks: vec!["y".into()],
            seed: 0,
        };
        let ds = toy::generate(2, 1);
        let gcfg = GraphConfig {
            cutoff: 8.0,
            gauss_step: 4.0,
            ..Default::default()
        };
        let s = prepare_samples(
            &ds,
            &["formation_energy".to_string()],
            &gcfg,
            &AtomFeaturizer::one_hot(),
        )
        .unwrap();
        // zero model predicts 0, so targets are the residuals
        let p = ModelParams::zeros(&arch);
        let ys = [vec![3.0], vec![4.0]];
        let val: Vec<_> = s
            .iter()
            .zip(&ys)
            .map(|(s, y)| (&s.graph, y.as_slice()))
            .collect();
        assert_eq!(validate(&p, &arch, &val, &[1.0]).unwrap().weighted, 12.5);
        let zeros = [vec![0.0], vec![0.0]];
        let val: Vec<_> = s
            .iter()
            .zip(&zeros)
            .map(|(s, y)| (&s.graph, y.as_slice()))
            .collect();
        assert_eq!(validate(&p, &arch, &val, &[1.0]).unwrap().weighted, 0.0);
        assert!(validate(&p, &arch, &[], &[1.0]).is_err());
    }

    #[test]
    fn missing_task_value_is_a_data_error() {
        let mut ds = toy::generate(3, 1);
        ds.entries[1].1.band_gap = None;
        let err = prepare_samples(
            &ds,
            &["band_gap".to_string()],
            &GraphConfig::default(),
            &AtomFeaturizer::one_hot(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("band_gap"));
    }
}

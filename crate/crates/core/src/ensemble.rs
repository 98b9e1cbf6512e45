//! Checkpoint ensembling over one training trajectory.
//!
//! Checkpoints are ranked by their stored validation MSE (ascending, ties by
//! epoch). The top-n are combined either by averaging their predictions or
//! by averaging their parameters into a single network.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgraph::CrystalGraph;
use crate::checkpoint::{load_checkpoint, read_meta, Checkpoint};
use crate::error::{Error, IoContext, Result};
use crate::net::{forward, ModelParams, Normalizer};

/// Default cap on ensemble size.
pub const MAX_ENSEMBLE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Mean of the members' predictions.
    Prediction,
    /// Prediction of the network with element-wise averaged parameters.
    Model,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Prediction => "prediction",
            Strategy::Model => "model",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(Strategy::Prediction),
            "model" => Ok(Strategy::Model),
            other => Err(Error::Config(format!(
                "unknown ensemble strategy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub strategy: Strategy,
}

impl EnsembleSpec {
    pub fn validate(&self, available: usize) -> Result<()> {
        check_n(self.n, available)
    }
}

pub fn check_n(n: usize, available: usize) -> Result<()> {
    if n == 0 || n > available || n > MAX_ENSEMBLE {
        return Err(Error::Ensemble(format!(
            "ensemble size {n} out of range 1..={}",
            available.min(MAX_ENSEMBLE)
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub epoch: usize,
    pub val_mse: f64,
    pub path: PathBuf,
}

/// Checkpoints best-first: ascending validation MSE, then ascending epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCheckpoints {
    pub entries: Vec<RankedEntry>,
}

impl RankedCheckpoints {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> &RankedEntry {
        &self.entries[0]
    }

    /// Loads the `n` best checkpoints, best first.
    pub fn load_top(&self, n: usize) -> Result<Vec<Checkpoint>> {
        if n == 0 || n > self.len() {
            return Err(Error::Ensemble(format!(
                "cannot take {n} of {} checkpoints",
                self.len()
            )));
        }
        self.entries[..n]
            .par_iter()
            .map(|e| load_checkpoint(&e.path))
            .collect()
    }
}

pub fn rank_entries(mut entries: Vec<RankedEntry>) -> Result<RankedCheckpoints> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("no checkpoints to rank".into()));
    }
    entries.sort_by(|a, b| a.val_mse.total_cmp(&b.val_mse).then(a.epoch.cmp(&b.epoch)));
    let mut epochs: Vec<usize> = entries.iter().map(|e| e.epoch).collect();
    epochs.sort_unstable();
    if let Some(w) = epochs.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput(format!("epoch {} appears twice", w[0])));
    }
    Ok(RankedCheckpoints { entries })
}

/// Ranks every `*.cgen` file in `dir` by its stored validation MSE. Only the
/// metadata blocks are read.
pub fn rank_checkpoints(dir: &Path) -> Result<RankedCheckpoints> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.extension().is_some_and(|e| e == "cgen") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no checkpoints in {}",
            dir.display()
        )));
    }
    let entries = paths
        .into_iter()
        .map(|path| {
            let meta = read_meta(&path)?;
            Ok(RankedEntry {
                epoch: meta.epoch,
                val_mse: meta.val_mse,
                path,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_entries(entries)
}

/// Ensemble output for a list of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    /// `[input][task]`, normalized target space.
    pub normalized: Vec<Vec<f64>>,
    /// `[input][task]`, physical units.
    pub values: Vec<Vec<f64>>,
}

impl EnsemblePrediction {
    fn from_normalized(normalized: Vec<Vec<f64>>, norm: &Normalizer) -> Self {
        let values = normalized.iter().map(|z| norm.denormalize(z)).collect();
        EnsemblePrediction { normalized, values }
    }
}

pub(crate) fn shared_normalizer(members: &[Checkpoint]) -> Result<&Normalizer> {
    let first = members
        .first()
        .ok_or_else(|| Error::Ensemble("ensemble needs at least one member".into()))?;
    for m in &members[1..] {
        if m.meta.normalizer != first.meta.normalizer {
            return Err(Error::Ensemble(format!(
                "epoch {} uses a different target normalizer than epoch {}",
                m.meta.epoch, first.meta.epoch
            )));
        }
        if m.meta.arch.tasks != first.meta.arch.tasks {
            return Err(Error::Ensemble(
                "members predict different task lists".into(),
            ));
        }
    }
    Ok(&first.meta.normalizer)
}

/// Normalized predictions `[member][input][task]`.
pub fn member_predictions(
    members: &[Checkpoint],
    inputs: &[CrystalGraph],
) -> Result<Vec<Vec<Vec<f64>>>> {
    members
        .par_iter()
        .map(|m| {
            inputs
                .par_iter()
                .map(|g| forward(g, &m.params, &m.meta.arch).map(|p| p.normalized))
                .collect()
        })
        .collect()
}

/// Arithmetic mean over member rank order, then one denormalization.
pub fn prediction_ensemble(
    members: &[Checkpoint],
    inputs: &[CrystalGraph],
) -> Result<EnsemblePrediction> {
    let norm = shared_normalizer(members)?;
    let per_member = member_predictions(members, inputs)?;
    let n = members.len() as f64;
    let mean = (0..inputs.len())
        .map(|i| {
            let mut acc = per_member[0][i].clone();
            for m in &per_member[1..] {
                for (a, x) in acc.iter_mut().zip(&m[i]) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    Ok(EnsemblePrediction::from_normalized(mean, norm))
}

/// Element-wise mean of the members' parameters. All members must share one
/// architecture, including its initialization seed.
pub fn average_members(members: &[Checkpoint]) -> Result<ModelParams> {
    let first = members
        .first()
        .ok_or_else(|| Error::Ensemble("ensemble needs at least one member".into()))?;
    for m in &members[1..] {
        if m.meta.arch != first.meta.arch {
            return Err(Error::Ensemble(format!(
                "epoch {} has a different architecture or init seed than epoch {}",
                m.meta.epoch, first.meta.epoch
            )));
        }
    }
    let mut avg = first.params.clone();
    for m in &members[1..] {
        avg.axpy(1.0, &m.params);
    }
    let n = members.len() as f64;
    for t in avg.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x /= n);
    }
    Ok(avg)
}

/// Forward pass of the parameter-averaged network.
pub fn model_ensemble(
    members: &[Checkpoint],
    inputs: &[CrystalGraph],
) -> Result<EnsemblePrediction> {
    let params = average_members(members)?;
    let norm = shared_normalizer(members)?;
    let arch = &members[0].meta.arch;
    let normalized = inputs
        .par_iter()
        .map(|g| forward(g, &params, arch).map(|p| p.normalized))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsemblePrediction::from_normalized(normalized, norm))
}

pub fn ensemble_members(
    members: &[Checkpoint],
    strategy: Strategy,
    inputs: &[CrystalGraph],
) -> Result<EnsemblePrediction> {
    match strategy {
        Strategy::Prediction => prediction_ensemble(members, inputs),
        Strategy::Model => model_ensemble(members, inputs),
    }
}

pub fn predict_prediction_ensemble(
    ranked: &RankedCheckpoints,
    n: usize,
    inputs: &[CrystalGraph],
) -> Result<EnsemblePrediction> {
    check_n(n, ranked.len())?;
    prediction_ensemble(&ranked.load_top(n)?, inputs)
}

pub fn average_params(ranked: &RankedCheckpoints, n: usize) -> Result<ModelParams> {
    check_n(n, ranked.len())?;
    average_members(&ranked.load_top(n)?)
}

pub fn predict_model_ensemble(
    ranked: &RankedCheckpoints,
    n: usize,
    inputs: &[CrystalGraph],
) -> Result<EnsemblePrediction> {
    check_n(n, ranked.len())?;
    model_ensemble(&ranked.load_top(n)?, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(epoch: usize, val_mse: f64) -> RankedEntry {
        RankedEntry {
            epoch,
            val_mse,
            path: PathBuf::from(format!("e{epoch}")),
        }
    }

    fn epochs(r: &RankedCheckpoints) -> Vec<usize> {
        r.entries.iter().map(|e| e.epoch).collect()
    }

    #[test]
    fn rank_examples() {
        let r = rank_entries(vec![entry(1, 0.5), entry(2, 0.2), entry(3, 0.9)]).unwrap();
        assert_eq!(epochs(&r), vec![2, 1, 3]);
        let r = rank_entries(vec![entry(4, 0.3), entry(2, 0.3)]).unwrap();
        assert_eq!(epochs(&r), vec![2, 4]);
        assert!(rank_entries(vec![]).is_err());
        assert!(rank_entries(vec![entry(1, 0.1), entry(1, 0.2)]).is_err());
    }

    #[test]
    fn rank_matches_full_sort() {
        let mut rng = crate::rng::Rng::new(77);
        let entries: Vec<_> = (1..=100)
            .map(|e| entry(e, (rng.below(20) as f64) * 0.05))
            .collect();
        let mut oracle: Vec<(f64, usize)> = entries.iter().map(|e| (e.val_mse, e.epoch)).collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut shuffled = entries.clone();
        rng.shuffle(&mut shuffled);
        let r = rank_entries(shuffled).unwrap();
        assert_eq!(epochs(&r), oracle.iter().map(|o| o.1).collect::<Vec<_>>());
        let r2 = rank_entries(entries).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn size_bounds() {
        assert!(check_n(0, 5).is_err());
        assert!(check_n(6, 5).is_err());
        assert!(check_n(51, 100).is_err());
        assert!(check_n(5, 5).is_ok());
        assert!(EnsembleSpec {
            n: 3,
            strategy: Strategy::Model
        }
        .validate(3)
        .is_ok());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("model".parse::<Strategy>().unwrap(), Strategy::Model);
        assert_eq!(Strategy::Prediction.to_string(), "prediction");
        assert!("both".parse::<Strategy>().is_err());
    }
}

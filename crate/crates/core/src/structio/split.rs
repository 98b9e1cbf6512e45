use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub fractions: (f64, f64, f64),
}

impl SplitIndices {
    /// Checks that the three lists partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut all: Vec<usize> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .copied()
            .collect();
        all.sort_unstable();
        if all.len() != n || all.iter().enumerate().any(|(i, &x)| i != x) {
            return Err(Error::InvalidInput(format!(
                "split does not partition 0..{n} ({} indices)",
                all.len()
            )));
        }
        if self.val.is_empty() {
            return Err(Error::InvalidInput("empty validation split".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n`, cut into train/val/test. Train and validation
/// sizes round to nearest; test takes the remainder.
pub fn split_dataset(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(*f >= 0.0)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} samples three ways"
        )));
    }
    let n_train = (ft * n as f64).round() as usize;
    let n_val = (fv * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidInput(format!(
            "{n} samples leave an empty split under fractions {fractions:?}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut perm);
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(SplitIndices {
        train: perm,
        val,
        test,
        seed,
        fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(s: &SplitIndices) -> (usize, usize, usize) {
        (s.train.len(), s.val.len(), s.test.len())
    }

    #[test]
    fn default_sizes() {
        assert_eq!(
            sizes(&split_dataset(100, DEFAULT_FRACTIONS, 7).unwrap()),
            (70, 10, 20)
        );
        assert_eq!(
            sizes(&split_dataset(33990, DEFAULT_FRACTIONS, 0).unwrap()),
            (23793, 3399, 6798)
        );
    }

    #[test]
    fn deterministic() {
        let a = split_dataset(10, DEFAULT_FRACTIONS, 1).unwrap();
        let b = split_dataset(10, DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a.train,
            split_dataset(10, DEFAULT_FRACTIONS, 2).unwrap().train
        );
    }

    #[test]
    fn bad_arguments() {
        assert!(split_dataset(10, (0.5, 0.1, 0.1), 0).is_err());
        assert!(split_dataset(2, DEFAULT_FRACTIONS, 0).is_err());
        assert!(split_dataset(4, DEFAULT_FRACTIONS, 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions_range(n in 3usize..500, seed in any::<u64>()) {
            match split_dataset(n, DEFAULT_FRACTIONS, seed) {
                Ok(s) => {
                    prop_assert!(s.validate(n).is_ok());
                    prop_assert_eq!(s.train.len(), (0.7 * n as f64).round() as usize);
                    prop_assert_eq!(s.val.len(), (0.1 * n as f64).round() as usize);
                }
                // only tiny n may fail, when a split would be empty
                Err(_) => prop_assert!(n < 15),
            }
        }
    }
}

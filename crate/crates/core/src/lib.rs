//! Crystal graph convolutional networks (single- and multi-task) trained with
//! plain SGD, plus checkpoint ensembling over the per-epoch training
//! trajectory.
//!
//! The pipeline is:
//!
//! 1. [`structio`] parses CIF / JSON structures and `id_prop.csv` datasets.
//! 2. [`cgraph`] turns a structure into a periodic crystal graph.
//! 3. [`net`] holds the network, its forward pass and exact gradients.
//! 4. [`train`] runs the epoch loop and writes one `.cgen` checkpoint per epoch.
//! 5. [`ensemble`] ranks checkpoints by validation MSE and aggregates the top-n
//!    by prediction averaging or parameter averaging.
//! 6. [`evalrep`] computes test MAE, ensemble-size sweeps and percentile bands.
//!
//! [`run`] wires these into reproducible run directories for the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgraph;
pub mod checkpoint;
pub mod elements;
pub mod ensemble;
pub mod error;
pub mod evalrep;
pub mod net;
pub mod rng;
pub mod run;
pub mod structio;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, ErrorKind, Result};

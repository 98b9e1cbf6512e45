//! Crystal-structure input: JSON and CIF parsers, `id_prop.csv` datasets,
//! Materials Project dump import and seeded train/val/test splits.

mod cif;
mod dataset;
mod json;
mod lattice;
mod mp;
mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cif::parse_cif;
pub use dataset::{
    load_dataset, write_dataset, write_id_prop, Dataset, PropertyRecord, PROPERTY_NAMES,
};
pub use json::{parse_structure_json, structure_to_json};
pub use lattice::Lattice;
pub use mp::{import_mp_dump, ImportMode, ImportSummary};
pub use split::{split_dataset, SplitIndices, DEFAULT_FRACTIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// Atomic number, 1..=118.
    pub species: u32,
    pub frac: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    pub id: String,
    pub lattice: Lattice,
    pub sites: Vec<Site>,
}

impl CrystalStructure {
    /// Builds a structure, checking volume > 0, finite coordinates and a
    /// non-empty site list.
    pub fn new(id: impl Into<String>, lattice: Lattice, sites: Vec<Site>) -> Result<Self> {
        let v = lattice.volume();
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::SingularLattice(v));
        }
        if sites.is_empty() {
            return Err(Error::InvalidStructure("no sites".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            if !s.frac.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidStructure(format!(
                    "site {i} has non-finite coordinates"
                )));
            }
            if !(1..=crate::elements::MAX_Z).contains(&s.species) {
                return Err(Error::UnknownElement(s.species.to_string()));
            }
        }
        Ok(CrystalStructure {
            id: id.into(),
            lattice,
            sites,
        })
    }

    pub fn volume(&self) -> f64 {
        self.lattice.volume()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }
}

use serde::{Deserialize, Serialize};

use super::{CrystalStructure, Lattice, Site};
use crate::elements;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawStructure {
    id: String,
    lattice: Vec<Vec<f64>>,
    species: Vec<SpeciesRef>,
    frac_coords: Vec<Vec<f64>>,
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
pub(crate) enum SpeciesRef {
    Number(u32),
    Symbol(String),
}

impl SpeciesRef {
    pub(crate) fn resolve(&self) -> Result<u32> {
        match self {
            SpeciesRef::Number(z) if (1..=elements::MAX_Z).contains(z) => Ok(*z),
            SpeciesRef::Number(z) => Err(Error::UnknownElement(z.to_string())),
            SpeciesRef::Symbol(s) => {
                elements::atomic_number(s.trim()).ok_or_else(|| Error::UnknownElement(s.clone()))
            }
        }
    }
}

#[derive(Serialize)]
struct OutStructure<'a> {
    id: &'a str,
    lattice: [[f64; 3]; 3],
    species: Vec<&'static str>,
    frac_coords: Vec<[f64; 3]>,
}

pub(crate) fn to_triple(v: &[f64], what: &str) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(v).map_err(|_| {
        Error::DimensionMismatch(format!("{what} has {} components, expected 3", v.len()))
    })
}

pub(crate) fn lattice_from_rows(rows: &[Vec<f64>]) -> Result<Lattice> {
    if rows.len() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "lattice has {} rows, expected 3",
            rows.len()
        )));
    }
    Ok(Lattice([
        to_triple(&rows[0], "lattice row 0")?,
        to_triple(&rows[1], "lattice row 1")?,
        to_triple(&rows[2], "lattice row 2")?,
    ]))
}

/// Parses the JSON structure format:
/// `{"id": .., "lattice": 3×3, "species": [symbol | Z, ..], "frac_coords": N×3}`.
pub fn parse_structure_json(text: &str) -> Result<CrystalStructure> {
    let raw: RawStructure = serde_json::from_str(text)?;
    if raw.species.len() != raw.frac_coords.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} species but {} frac_coords",
            raw.species.len(),
            raw.frac_coords.len()
        )));
    }
    let lattice = lattice_from_rows(&raw.lattice)?;
    let sites = raw
        .species
        .iter()
        .zip(&raw.frac_coords)
        .enumerate()
        .map(|(i, (sp, fc))| {
            Ok(Site {
                species: sp.resolve()?,
                frac: to_triple(fc, &format!("frac_coords[{i}]"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CrystalStructure::new(raw.id, lattice, sites)
}

/// Inverse of [`parse_structure_json`]; species are written as symbols.
pub fn structure_to_json(s: &CrystalStructure) -> String {
    let out = OutStructure {
        id: &s.id,
        lattice: s.lattice.0,
        species: s
            .sites
            .iter()
            .map(|site| elements::symbol(site.species).expect("validated atomic number"))
            .collect(),
        frac_coords: s.sites.iter().map(|site| site.frac).collect(),
    };
    serde_json::to_string_pretty(&out).expect("structure serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NACL: &str = r#"{
        "id": "NaCl",
        "lattice": [[5.64, 0, 0], [0, 5.64, 0], [0, 0, 5.64]],
        "species": ["Na", "Na", "Na", "Na", "Cl", "Cl", "Cl", "Cl"],
        "frac_coords": [[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0],
                        [0.5, 0.5, 0.5], [0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]]
    }"#;

    #[test]
    fn unit_hydrogen() {
        let s = parse_structure_json(
            r#"{"lattice":[[1,0,0],[0,1,0],[0,0,1]],"species":["H"],"frac_coords":[[0,0,0]],"id":"x"}"#,
        )
        .unwrap();
        assert_eq!(s.n_sites(), 1);
        assert_eq!(s.sites[0].species, 1);
        assert_eq!(s.volume(), 1.0);
        assert_eq!(s.id, "x");
    }

    #[test]
    fn rock_salt_cell() {
        let s = parse_structure_json(NACL).unwrap();
        assert_eq!(s.n_sites(), 8);
        // a³ = 5.64³ = 179.406144
        assert!((s.volume() - 179.406144).abs() < 1e-9);
        assert_eq!(s.sites.iter().filter(|x| x.species == 11).count(), 4);
        assert_eq!(s.sites.iter().filter(|x| x.species == 17).count(), 4);
    }

    #[test]
    fn numeric_species_accepted() {
        let s = parse_structure_json(
            r#"{"lattice":[[2,0,0],[0,2,0],[0,0,2]],"species":[26, "o"],"frac_coords":[[0,0,0],[0.5,0.5,0.5]],"id":"y"}"#,
        )
        .unwrap();
        assert_eq!(s.sites[0].species, 26);
        assert_eq!(s.sites[1].species, 8);
    }

    #[test]
    fn error_cases() {
        let mismatch = r#"{"lattice":[[1,0,0],[0,1,0],[0,0,1]],"species":["H","H"],"frac_coords":[[0,0,0],[0.5,0,0],[0,0.5,0]],"id":"x"}"#;
        assert!(matches!(
            parse_structure_json(mismatch),
            Err(Error::DimensionMismatch(_))
        ));
        let unknown = r#"{"lattice":[[1,0,0],[0,1,0],[0,0,1]],"species":["Qq"],"frac_coords":[[0,0,0]],"id":"x"}"#;
        assert!(matches!(
            parse_structure_json(unknown),
            Err(Error::UnknownElement(_))
        ));
        let singular = r#"{"lattice":[[1,0,0],[2,0,0],[0,0,1]],"species":["H"],"frac_coords":[[0,0,0]],"id":"x"}"#;
        assert!(matches!(
            parse_structure_json(singular),
            Err(Error::SingularLattice(_))
        ));
        assert!(matches!(
            parse_structure_json("{not json"),
            Err(Error::Json(_))
        ));
        let short_row = r#"{"lattice":[[1,0,0],[0,1,0],[0,0,1]],"species":["H"],"frac_coords":[[0,0]],"id":"x"}"#;
        assert!(matches!(
            parse_structure_json(short_row),
            Err(Error::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn json_round_trip(
            diag in prop::array::uniform3(1.0f64..10.0),
            off in prop::array::uniform3(-0.9f64..0.9),
            sites in prop::collection::vec((1u32..=118, prop::array::uniform3(-2.0f64..2.0)), 1..8),
        ) {
            let lattice = Lattice([[diag[0], 0.0, 0.0], [off[0], diag[1], 0.0], [off[1], off[2], diag[2]]]);
            let sites = sites.into_iter().map(|(species, frac)| Site { species, frac }).collect();
            let s = CrystalStructure::new("p", lattice, sites).unwrap();
            let back = parse_structure_json(&structure_to_json(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}

//! Importer for local Materials Project JSON dumps.
//!
//! Accepts an array of records shaped like the summary documents of the MP
//! API: `material_id`, `structure` (pymatgen dict: `lattice.matrix` and
//! `sites[].{species,abc}`), `formation_energy_per_atom`, `band_gap`, `density`.
//! No stability filter is applied.

use std::fs;
use std::path::Path;

use serde_json::Value;

use super::json::{lattice_from_rows, structure_to_json, to_triple, SpeciesRef};
use super::{write_id_prop, CrystalStructure, PropertyRecord, Site, PROPERTY_NAMES};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImportMode {
    /// Skip records missing any of the three properties (multi-task datasets).
    #[default]
    Complete,
    /// Keep such records with empty property cells.
    Permissive,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportSummary {
    pub written: usize,
    pub skipped_incomplete: usize,
    pub skipped_invalid: usize,
}

fn rows_of(v: &Value) -> Option<Vec<Vec<f64>>> {
    v.as_array()?
        .iter()
        .map(|r| r.as_array()?.iter().map(Value::as_f64).collect())
        .collect()
}

fn site_species(site: &Value) -> Option<SpeciesRef> {
    match site.get("species")? {
        Value::String(s) => Some(SpeciesRef::Symbol(s.clone())),
        Value::Number(n) => n.as_u64().map(|z| SpeciesRef::Number(z as u32)),
        // pymatgen: [{"element": "Na", "occu": 1.0}]; ordered sites only
        Value::Array(list) => {
            let first = list.first()?;
            first
                .get("element")?
                .as_str()
                .map(|s| SpeciesRef::Symbol(s.to_string()))
        }
        _ => None,
    }
}

fn parse_record(rec: &Value) -> Result<(CrystalStructure, PropertyRecord)> {
    let bad = |msg: &str| Error::InvalidInput(msg.to_string());
    let id = rec
        .get("material_id")
        .or_else(|| rec.get("id"))
        .and_then(Value::as_str)
        .ok_or_else(|| bad("record without material_id"))?;
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
    {
        return Err(bad(&format!("unusable material id `{id}`")));
    }
    let st = rec
        .get("structure")
        .ok_or_else(|| bad("record without structure"))?;
    let lat = st
        .get("lattice")
        .ok_or_else(|| bad("structure without lattice"))?;
    let rows = rows_of(lat.get("matrix").unwrap_or(lat))
        .ok_or_else(|| bad("lattice is not a 3×3 array"))?;
    let lattice = lattice_from_rows(&rows)?;
    let sites = st
        .get("sites")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("structure without sites"))?
        .iter()
        .map(|s| {
            let species = site_species(s)
                .ok_or_else(|| bad("site without species"))?
                .resolve()?;
            let abc: Vec<f64> = s
                .get("abc")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect())
                .ok_or_else(|| bad("site without abc"))?;
            Ok(Site {
                species,
                frac: to_triple(&abc, "abc")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let structure = CrystalStructure::new(id, lattice, sites)?;
    let num = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| rec.get(*k).and_then(Value::as_f64))
    };
    let props = PropertyRecord {
        id: id.to_string(),
        formation_energy: num(&["formation_energy_per_atom", "formation_energy"]),
        band_gap: num(&["band_gap"]),
        density: num(&["density"]),
    };
    props.validate()?;
    Ok((structure, props))
}

/// Converts a dump into the `id_prop.csv` + `<id>.json` directory layout read
/// by [`super::load_dataset`].
pub fn import_mp_dump(json_path: &Path, out_dir: &Path, mode: ImportMode) -> Result<ImportSummary> {
    let text = fs::read_to_string(json_path).at(json_path)?;
    let doc: Value = serde_json::from_str(&text)?;
    let records = doc
        .as_array()
        .ok_or_else(|| Error::InvalidInput("dump must be a JSON array".into()))?;
    fs::create_dir_all(out_dir).at(out_dir)?;

    let mut summary = ImportSummary::default();
    let mut written = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in records.iter().enumerate() {
        let (structure, props) = match parse_record(rec) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("record {i}: skipped ({e})");
                summary.skipped_invalid += 1;
                continue;
            }
        };
        let complete = PROPERTY_NAMES.iter().all(|p| props.get(p).is_some());
        if !complete && mode == ImportMode::Complete {
            summary.skipped_incomplete += 1;
            continue;
        }
        if !seen.insert(props.id.clone()) {
            log::warn!("record {i}: duplicate id `{}` skipped", props.id);
            summary.skipped_invalid += 1;
            continue;
        }
        let path = out_dir.join(format!("{}.json", props.id));
        fs::write(&path, structure_to_json(&structure)).at(&path)?;
        written.push(props);
    }
    write_id_prop(&out_dir.join("id_prop.csv"), &written)?;
    summary.written = written.len();
    if summary.skipped_incomplete + summary.skipped_invalid > 0 {
        log::warn!(
            "import: {} written, {} skipped for missing properties, {} invalid",
            summary.written,
            summary.skipped_incomplete,
            summary.skipped_invalid
        );
    }
    Ok(summary)
}

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{parse_cif, parse_structure_json, CrystalStructure};
use crate::error::{Error, IoContext, Result};

/// Property columns understood in `id_prop.csv`, in canonical order.
pub const PROPERTY_NAMES: [&str; 3] = ["formation_energy", "band_gap", "density"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PropertyRecord {
    pub id: String,
    /// eV/atom
    pub formation_energy: Option<f64>,
    /// eV
    pub band_gap: Option<f64>,
    /// g/cm³
    pub density: Option<f64>,
}

impl PropertyRecord {
    pub fn get(&self, property: &str) -> Option<f64> {
        match property {
            "formation_energy" => self.formation_energy,
            "band_gap" => self.band_gap,
            "density" => self.density,
            _ => None,
        }
    }

    fn slot(&mut self, property: &str) -> Option<&mut Option<f64>> {
        match property {
            "formation_energy" => Some(&mut self.formation_energy),
            "band_gap" => Some(&mut self.band_gap),
            "density" => Some(&mut self.density),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bg) = self.band_gap {
            if !(bg >= 0.0) {
                return Err(Error::Dataset(format!(
                    "`{}`: negative band_gap {bg}",
                    self.id
                )));
            }
        }
        if let Some(rho) = self.density {
            if !(rho > 0.0) {
                return Err(Error::Dataset(format!(
                    "`{}`: non-positive density {rho}",
                    self.id
                )));
            }
        }
        for p in PROPERTY_NAMES {
            if let Some(v) = self.get(p) {
                if !v.is_finite() {
                    return Err(Error::Dataset(format!("`{}`: non-finite {p}", self.id)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub entries: Vec<(CrystalStructure, PropertyRecord)>,
    pub source_dir: PathBuf,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn read_records(csv_path: &Path) -> Result<Vec<PropertyRecord>> {
    let text = fs::read_to_string(csv_path).at(csv_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::Dataset(format!(
            "{}: first column must be `id`",
            csv_path.display()
        )));
    }
    for h in headers.iter().skip(1) {
        if !PROPERTY_NAMES.contains(&h) {
            log::warn!("{}: ignoring unknown column `{h}`", csv_path.display());
        }
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let mut rec = PropertyRecord {
            id: row.get(0).unwrap_or("").to_string(),
            ..Default::default()
        };
        if rec.id.is_empty() {
            return Err(Error::Dataset("row with empty id".into()));
        }
        for (h, cell) in headers.iter().zip(row.iter()).skip(1) {
            let id = rec.id.clone();
            if let Some(slot) = rec.slot(h) {
                if !cell.is_empty() {
                    *slot = Some(cell.parse().map_err(|_| {
                        Error::Dataset(format!("`{id}`: `{cell}` is not a number in column {h}"))
                    })?);
                }
            }
        }
        rec.validate()?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    Ok(records)
}

fn load_structure(dir: &Path, id: &str) -> Result<CrystalStructure> {
    let wrap = |e: Error| Error::StructureFile {
        id: id.to_string(),
        source: Box::new(e),
    };
    let json = dir.join(format!("{id}.json"));
    let cif = dir.join(format!("{id}.cif"));
    let mut s = if json.is_file() {
        parse_structure_json(&fs::read_to_string(&json).at(&json).map_err(wrap)?).map_err(wrap)?
    } else if cif.is_file() {
        parse_cif(&fs::read_to_string(&cif).at(&cif).map_err(wrap)?).map_err(wrap)?
    } else {
        return Err(Error::MissingStructure(id.to_string()));
    };
    s.id = id.to_string();
    Ok(s)
}

/// Loads `dir/id_prop.csv` and one `<id>.json` or `<id>.cif` per row.
///
/// Entries keep CSV row order. The structure's id is taken from the CSV.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let csv_path = dir.join("id_prop.csv");
    if !csv_path.is_file() {
        return Err(Error::Dataset(format!("missing {}", csv_path.display())));
    }
    let records = read_records(&csv_path)?;
    let structures = records
        .par_iter()
        .map(|r| load_structure(dir, &r.id))
        .collect::<Vec<_>>();
    let entries = structures
        .into_iter()
        .zip(records)
        .map(|(s, r)| s.map(|s| (s, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        entries,
        source_dir: dir.to_path_buf(),
    })
}

/// Writes an `id_prop.csv` with the full canonical header; absent values are
/// empty cells.
pub fn write_id_prop(path: &Path, records: &[PropertyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id"];
    header.extend(PROPERTY_NAMES);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        for p in PROPERTY_NAMES {
            row.push(r.get(p).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).at(path)
}

/// Writes `dataset` as `<id>.json` files plus `id_prop.csv` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (s, _) in &ds.entries {
        let path = dir.join(format!("{}.json", s.id));
        fs::write(&path, super::structure_to_json(s)).at(&path)?;
    }
    let records: Vec<PropertyRecord> = ds.entries.iter().map(|(_, r)| r.clone()).collect();
    write_id_prop(&dir.join("id_prop.csv"), &records)
}

//! Minimal CIF reader for P1 (already symmetry-expanded) structures.
//!
//! Only the first `data_` block is read. Cell parameters come from the
//! `_cell_length_*` / `_cell_angle_*` tags and sites from the loop holding
//! `_atom_site_fract_{x,y,z}`. Symmetry operations are ignored.

use std::collections::HashMap;

use super::{CrystalStructure, Lattice, Site};
use crate::elements;
use crate::error::{Error, Result};

const LENGTH_TAGS: [&str; 3] = ["_cell_length_a", "_cell_length_b", "_cell_length_c"];
const ANGLE_TAGS: [&str; 3] = ["_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma"];
const FRACT_TAGS: [&str; 3] = [
    "_atom_site_fract_x",
    "_atom_site_fract_y",
    "_atom_site_fract_z",
];

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Tag(String),
    Loop,
    Data(String),
    Value(String),
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if let Some(first) = line.strip_prefix(';') {
            // semicolon text field runs to the next line starting with ';'
            let mut buf = first.to_string();
            for l in lines.by_ref() {
                if l.starts_with(';') {
                    break;
                }
                buf.push('\n');
                buf.push_str(l);
            }
            tokens.push(Token::Value(buf));
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '#' {
                break;
            }
            if c == '\'' || c == '"' {
                // a quote only closes when followed by whitespace or end of line
                let mut j = i + 1;
                while j < chars.len()
                    && !(chars[j] == c && chars.get(j + 1).is_none_or(|n| n.is_whitespace()))
                {
                    j += 1;
                }
                tokens.push(Token::Value(
                    chars[i + 1..j.min(chars.len())].iter().collect(),
                ));
                i = j + 1;
                continue;
            }
            let mut j = i;
            while j < chars.len() && !chars[j].is_whitespace() {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            let lower = word.to_ascii_lowercase();
            tokens.push(if lower == "loop_" {
                Token::Loop
            } else if lower.starts_with("data_") {
                Token::Data(word[5..].to_string())
            } else if word.starts_with('_') {
                Token::Tag(lower)
            } else {
                Token::Value(word)
            });
            i = j;
        }
    }
    tokens
}

#[derive(Debug, Default)]
struct Block {
    name: Option<String>,
    items: HashMap<String, String>,
    loops: Vec<(Vec<String>, Vec<Vec<String>>)>,
}

fn parse_block(tokens: &[Token]) -> Block {
    let mut block = Block::default();
    let mut i = 0;
    let mut seen_data = false;
    while i < tokens.len() {
        match &tokens[i] {
            Token::Data(name) => {
                if seen_data {
                    break;
                }
                seen_data = true;
                block.name = Some(name.clone());
                i += 1;
            }
            Token::Tag(tag) => {
                if let Some(Token::Value(v)) = tokens.get(i + 1) {
                    block.items.insert(tag.clone(), v.clone());
                    i += 2;
                } else {
                    i += 1;
                }
            }
            Token::Loop => {
                i += 1;
                let mut tags = Vec::new();
                while let Some(Token::Tag(t)) = tokens.get(i) {
                    tags.push(t.clone());
                    i += 1;
                }
                let mut values = Vec::new();
                while let Some(Token::Value(v)) = tokens.get(i) {
                    values.push(v.clone());
                    i += 1;
                }
                if !tags.is_empty() {
                    let rows = values
                        .chunks_exact(tags.len())
                        .map(|c| c.to_vec())
                        .collect();
                    block.loops.push((tags, rows));
                }
            }
            Token::Value(_) => i += 1,
        }
    }
    block
}

/// Numeric CIF value with an optional standard uncertainty suffix: `5.64(2)`.
fn parse_number(tag: &str, raw: &str) -> Result<f64> {
    let trimmed = raw.split('(').next().unwrap_or("");
    trimmed.parse::<f64>().map_err(|_| Error::InvalidCifValue {
        tag: tag.to_string(),
        value: raw.to_string(),
    })
}

/// Element from a type symbol or label such as `Fe`, `Fe2+`, `O1`.
fn element_from_symbol(raw: &str) -> Result<u32> {
    let letters: String = raw
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    let mut chars = letters.chars();
    let first = chars.next().map(|c| c.to_ascii_uppercase());
    let second = chars.next().map(|c| c.to_ascii_lowercase());
    if let (Some(a), Some(b)) = (first, second) {
        if let Some(z) = elements::atomic_number(&format!("{a}{b}")) {
            return Ok(z);
        }
    }
    first
        .and_then(|a| elements::atomic_number(&a.to_string()))
        .ok_or_else(|| Error::UnknownElement(raw.to_string()))
}

pub fn parse_cif(text: &str) -> Result<CrystalStructure> {
    let block = parse_block(&tokenize(text));
    let get = |tag: &str| -> Result<f64> {
        let raw = block
            .items
            .get(tag)
            .ok_or_else(|| Error::MissingTag(tag.to_string()))?;
        parse_number(tag, raw)
    };
    let [a, b, c] = [
        get(LENGTH_TAGS[0])?,
        get(LENGTH_TAGS[1])?,
        get(LENGTH_TAGS[2])?,
    ];
    let [alpha, beta, gamma] = [
        get(ANGLE_TAGS[0])?,
        get(ANGLE_TAGS[1])?,
        get(ANGLE_TAGS[2])?,
    ];
    let lattice = Lattice::from_parameters(a, b, c, alpha, beta, gamma)?;

    let (tags, rows) = block
        .loops
        .iter()
        .find(|(tags, _)| tags.iter().any(|t| t == FRACT_TAGS[0]))
        .ok_or_else(|| Error::MissingTag(FRACT_TAGS[0].to_string()))?;
    let col = |tag: &str| tags.iter().position(|t| t == tag);
    let fract_cols = FRACT_TAGS
        .iter()
        .map(|t| col(t).ok_or_else(|| Error::MissingTag(t.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let species_col = col("_atom_site_type_symbol")
        .or_else(|| col("_atom_site_label"))
        .ok_or_else(|| Error::MissingTag("_atom_site_type_symbol".to_string()))?;
    if rows.is_empty() {
        return Err(Error::EmptyAtomLoop);
    }
    let sites = rows
        .iter()
        .map(|row| {
            let mut frac = [0.0; 3];
            for (k, &ci) in fract_cols.iter().enumerate() {
                frac[k] = parse_number(FRACT_TAGS[k], &row[ci])?;
            }
            Ok(Site {
                species: element_from_symbol(&row[species_col])?,
                frac,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let id = block.name.unwrap_or_default();
    CrystalStructure::new(id, lattice, sites)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(a: f64, b: f64, c: f64, al: f64, be: f64, ga: f64, atoms: &str) -> String {
        format!(
            "data_test\n_cell_length_a {a}\n_cell_length_b {b}\n_cell_length_c {c}\n\
             _cell_angle_alpha {al}\n_cell_angle_beta {be}\n_cell_angle_gamma {ga}\n\
             loop_\n_atom_site_label\n_atom_site_type_symbol\n_atom_site_fract_x\n\
             _atom_site_fract_y\n_atom_site_fract_z\n{atoms}"
        )
    }

    #[test]
    fn cubic_iron() {
        let s = parse_cif(&cell(3.0, 3.0, 3.0, 90.0, 90.0, 90.0, "Fe1 Fe 0 0 0\n")).unwrap();
        assert_eq!(s.id, "test");
        assert_eq!(
            s.sites,
            vec![Site {
                species: 26,
                frac: [0.0; 3]
            }]
        );
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 3.0 } else { 0.0 };
                assert!((s.lattice.0[i][j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn triclinic_volume_matches_closed_form() {
        let s = parse_cif(&cell(3.0, 4.0, 5.0, 70.0, 80.0, 60.0, "X1 O 0.1 0.2 0.3\n")).unwrap();
        let (ca, cb, cg) = (
            70f64.to_radians().cos(),
            80f64.to_radians().cos(),
            60f64.to_radians().cos(),
        );
        let closed =
            3.0 * 4.0 * 5.0 * (1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg).sqrt();
        assert!((s.volume() - closed).abs() / closed < 1e-9);
        let norms: Vec<f64> = s
            .lattice
            .0
            .iter()
            .map(|r| super::super::lattice::norm(*r))
            .collect();
        for (n, want) in norms.iter().zip([3.0, 4.0, 5.0]) {
            assert!((n - want).abs() / want < 1e-9);
        }
    }

    #[test]
    fn uncertainties_comments_and_quotes() {
        let text = "# header\ndata_NaCl\n_symmetry_space_group_name_H-M 'P 1'\n\
                    _cell_length_a 5.64(2)\n_cell_length_b 5.64\n_cell_length_c 5.64 # cubic\n\
                    _cell_angle_alpha 90\n_cell_angle_beta 90.0\n_cell_angle_gamma 90\n\
                    loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n\
                    loop_\n_atom_site_type_symbol\n_atom_site_label\n_atom_site_fract_x\n\
                    _atom_site_fract_y\n_atom_site_fract_z\n_atom_site_occupancy\n\
                    Na+ Na1 0 0 0 1\nCl- Cl1 0.5 0.5 0.5 1\n";
        let s = parse_cif(text).unwrap();
        assert_eq!(s.sites.len(), 2);
        assert_eq!(s.sites[0].species, 11);
        assert_eq!(s.sites[1].species, 17);
        assert!((s.volume() - 5.64f64.powi(3)).abs() < 1e-9);
    }

    #[test]
    fn missing_length_c() {
        let text = cell(3.0, 3.0, 3.0, 90.0, 90.0, 90.0, "Fe1 Fe 0 0 0\n")
            .replace("_cell_length_c 3\n", "");
        match parse_cif(&text) {
            Err(Error::MissingTag(t)) => assert_eq!(t, "_cell_length_c"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_empty_loop() {
        let bad = cell(3.0, 3.0, 3.0, 90.0, 90.0, 90.0, "Fe1 Fe 0 0 0\n")
            .replace("_cell_length_a 3", "_cell_length_a abc");
        assert!(matches!(
            parse_cif(&bad),
            Err(Error::InvalidCifValue { .. })
        ));
        let empty = cell(3.0, 3.0, 3.0, 90.0, 90.0, 90.0, "");
        assert!(matches!(parse_cif(&empty), Err(Error::EmptyAtomLoop)));
    }

    #[test]
    fn symbols_from_labels() {
        assert_eq!(element_from_symbol("Fe2+").unwrap(), 26);
        assert_eq!(element_from_symbol("O1").unwrap(), 8);
        assert_eq!(element_from_symbol("CL").unwrap(), 17);
        assert!(element_from_symbol("123").is_err());
    }
}

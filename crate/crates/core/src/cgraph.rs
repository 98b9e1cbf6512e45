//! Crystal graph construction: periodic neighbor search, atom featurization and
//! Gaussian expansion of bond distances.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::structio::{CrystalStructure, Lattice};
use crate::tensor::Tensor;

/// Distances at or below this are treated as coincident sites, not bonds.
const ZERO_DISTANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomFeatureSource {
    OneHotZ,
    FeatureFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub cutoff: f64,
    pub max_neighbors: usize,
    pub gauss_step: f64,
    pub gauss_width: f64,
    pub atom_feat_source: AtomFeatureSource,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            cutoff: 8.0,
            max_neighbors: 12,
            gauss_step: 0.2,
            gauss_width: 0.2,
            atom_feat_source: AtomFeatureSource::OneHotZ,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cutoff > 0.0
            && self.cutoff.is_finite()
            && self.max_neighbors >= 1
            && self.gauss_step > 0.0
            && self.gauss_width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid graph config {self:?}")))
        }
    }

    pub fn edge_dim(&self) -> usize {
        gaussian_len(self.cutoff, self.gauss_step)
    }
}

/// Lookup table from atomic number to initial node feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomFeaturizer {
    d_init: usize,
    table: BTreeMap<u32, Vec<f64>>,
}

impl AtomFeaturizer {
    /// One-hot encoding of Z over 100 slots (Z = 1..=100).
    pub fn one_hot() -> Self {
        let d_init = 100;
        let table = (1..=d_init as u32)
            .map(|z| {
                let mut v = vec![0.0; d_init];
                v[z as usize - 1] = 1.0;
                (z, v)
            })
            .collect();
        AtomFeaturizer { d_init, table }
    }

    pub fn from_table(table: BTreeMap<u32, Vec<f64>>) -> Result<Self> {
        let d_init = table
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("empty atom feature table".into()))?;
        if d_init == 0 {
            return Err(Error::InvalidInput("zero-length atom features".into()));
        }
        for (z, v) in &table {
            if v.len() != d_init {
                return Err(Error::DimensionMismatch(format!(
                    "atom features for Z={z} have length {}, expected {d_init}",
                    v.len()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite atom feature for Z={z}"
                )));
            }
        }
        Ok(AtomFeaturizer { d_init, table })
    }

    /// JSON object mapping atomic-number strings to equal-length arrays.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<f64>> = serde_json::from_str(text)?;
        let table = raw
            .into_iter()
            .map(|(k, v)| {
                k.trim().parse::<u32>().map(|z| (z, v)).map_err(|_| {
                    Error::InvalidInput(format!("atom feature key `{k}` is not an atomic number"))
                })
            })
            .collect::<Result<_>>()?;
        Self::from_table(table)
    }

    pub fn from_source(src: &AtomFeatureSource) -> Result<Self> {
        match src {
            AtomFeatureSource::OneHotZ => Ok(Self::one_hot()),
            AtomFeatureSource::FeatureFile(path) => Self::from_file(path),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn d_init(&self) -> usize {
        self.d_init
    }

    pub fn featurize_atom(&self, z: u32) -> Result<&[f64]> {
        self.table
            .get(&z)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownAtomicNumber(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub j: usize,
    pub image: [i32; 3],
    pub distance: f64,
}

/// Directed edge `src → dst` through periodic `image` of `dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub image: [i32; 3],
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalGraph {
    /// N × d_init
    pub node_feats: Tensor,
    pub edges: Vec<Edge>,
    /// M × d_edge, row k belongs to `edges[k]`
    pub edge_feats: Tensor,
    pub n_nodes: usize,
}

impl CrystalGraph {
    pub fn d_init(&self) -> usize {
        self.node_feats.cols()
    }

    pub fn d_edge(&self) -> usize {
        self.edge_feats.cols()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

fn wrap(frac: [f64; 3]) -> [f64; 3] {
    frac.map(|x| x - x.floor())
}

fn distance(lattice: &Lattice, from: [f64; 3], to: [f64; 3], image: [i32; 3]) -> f64 {
    let d = [
        to[0] + image[0] as f64 - from[0],
        to[1] + image[1] as f64 - from[1],
        to[2] + image[2] as f64 - from[2],
    ];
    let c = lattice.to_cartesian(d);
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.j.cmp(&b.j))
        .then(a.image.cmp(&b.image))
}

/// All periodic neighbors within `cutoff` for every site, nearest first (ties
/// by `(j, image)`), truncated to `max_neighbors`.
///
/// Coordinates are wrapped into [0, 1) first; images refer to the wrapped
/// positions.
pub fn find_neighbors(
    s: &CrystalStructure,
    cutoff: f64,
    max_neighbors: usize,
) -> Result<Vec<Vec<Neighbor>>> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cutoff {cutoff} must be positive"
        )));
    }
    let frac: Vec<[f64; 3]> = s.sites.iter().map(|x| wrap(x.frac)).collect();
    // wrapped differences lie in (-1, 1), so one extra image shell suffices
    let reach = s
        .lattice
        .plane_heights()
        .map(|h| (cutoff / h).ceil() as i32 + 1);
    let mut out = Vec::with_capacity(frac.len());
    for (i, fi) in frac.iter().enumerate() {
        let mut list = Vec::new();
        for a in -reach[0]..=reach[0] {
            for b in -reach[1]..=reach[1] {
                for c in -reach[2]..=reach[2] {
                    let image = [a, b, c];
                    for (j, fj) in frac.iter().enumerate() {
                        let d = distance(&s.lattice, *fi, *fj, image);
                        if d > ZERO_DISTANCE && d <= cutoff {
                            list.push(Neighbor {
                                j,
                                image,
                                distance: d,
                            });
                        }
                    }
                }
            }
        }
        if list.is_empty() {
            return Err(Error::IsolatedAtom { index: i, cutoff });
        }
        list.sort_by(neighbor_order);
        list.truncate(max_neighbors);
        out.push(list);
    }
    Ok(out)
}

/// Number of Gaussian centers `0, step, .., floor(cutoff/step)·step`.
pub fn gaussian_len(cutoff: f64, step: f64) -> usize {
    // tolerance absorbs 8.0/0.2 = 39.999.. style round-off
    (cutoff / step + 1e-9).floor() as usize + 1
}

/// `exp(-(d - μ_k)² / width²)` for centers `μ_k = k·step`.
pub fn gaussian_expand(d: f64, cutoff: f64, step: f64, width: f64) -> Vec<f64> {
    let w2 = width * width;
    (0..gaussian_len(cutoff, step))
        .map(|k| {
            let mu = k as f64 * step;
            (-(d - mu) * (d - mu) / w2).exp()
        })
        .collect()
}

/// Structure → crystal graph. Edges are ordered by source node, then neighbor rank.
pub fn build_graph(
    s: &CrystalStructure,
    cfg: &GraphConfig,
    f: &AtomFeaturizer,
) -> Result<CrystalGraph> {
    cfg.validate()?;
    let n = s.n_sites();
    let mut node_feats = Tensor::zeros(&[n, f.d_init()]);
    for (i, site) in s.sites.iter().enumerate() {
        node_feats
            .row_mut(i)
            .copy_from_slice(f.featurize_atom(site.species)?);
    }
    let neighbors = find_neighbors(s, cfg.cutoff, cfg.max_neighbors)?;
    let edges: Vec<Edge> = neighbors
        .iter()
        .enumerate()
        .flat_map(|(src, list)| {
            list.iter().map(move |nb| Edge {
                src,
                dst: nb.j,
                image: nb.image,
                distance: nb.distance,
            })
        })
        .collect();
    let d_edge = cfg.edge_dim();
    let mut edge_feats = Tensor::zeros(&[edges.len(), d_edge]);
    for (k, e) in edges.iter().enumerate() {
        let g = gaussian_expand(e.distance, cfg.cutoff, cfg.gauss_step, cfg.gauss_width);
        edge_feats.row_mut(k).copy_from_slice(&g);
    }
    Ok(CrystalGraph {
        node_feats,
        edges,
        edge_feats,
        n_nodes: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structio::Site;

    fn cubic(a: f64, sites: &[(u32, [f64; 3])]) -> CrystalStructure {
        let lattice = Lattice([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]]);
        let sites = sites
            .iter()
            .map(|&(species, frac)| Site { species, frac })
            .collect();
        CrystalStructure::new("t", lattice, sites).unwrap()
    }

    /// Brute force over a fixed 5×5×5 block of images.
    fn brute(s: &CrystalStructure, cutoff: f64) -> Vec<f64> {
        let mut d = Vec::new();
        for a in -2..=2 {
            for b in -2..=2 {
                for c in -2..=2 {
                    let v = s.lattice.to_cartesian([a as f64, b as f64, c as f64]);
                    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if r > 0.0 && r <= cutoff {
                        d.push(r);
                    }
                }
            }
        }
        d.sort_by(f64::total_cmp);
        d
    }

    #[test]
    fn simple_cubic_shells() {
        let s = cubic(3.0, &[(26, [0.0; 3])]);
        let nb = find_neighbors(&s, 3.1, 12).unwrap();
        assert_eq!(nb[0].len(), 6);
        assert!(nb[0].iter().all(|n| (n.distance - 3.0).abs() < 1e-12));
        assert_eq!(brute(&s, 3.1).len(), 6);

        let full = find_neighbors(&s, 4.5, usize::MAX).unwrap();
        let oracle = brute(&s, 4.5);
        assert_eq!(oracle.len(), 18);
        assert_eq!(full[0].len(), 18);
        for (n, o) in full[0].iter().zip(&oracle) {
            assert!((n.distance - o).abs() < 1e-12);
        }
        assert!((full[0][17].distance - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(find_neighbors(&s, 4.5, 12).unwrap()[0].len(), 12);
    }

    #[test]
    fn ties_break_by_index_then_image() {
        let s = cubic(3.0, &[(26, [0.0; 3])]);
        let nb = find_neighbors(&s, 3.1, 12).unwrap();
        let images: Vec<_> = nb[0].iter().map(|n| n.image).collect();
        let mut sorted = images.clone();
        sorted.sort();
        assert_eq!(images, sorted);
    }

    #[test]
    fn isolated_atom() {
        let s = cubic(10.0, &[(1, [0.0; 3])]);
        assert!(matches!(
            find_neighbors(&s, 3.0, 12),
            Err(Error::IsolatedAtom { index: 0, .. })
        ));
    }

    #[test]
    fn gaussian_examples() {
        let g = gaussian_expand(1.0, 8.0, 0.2, 0.2);
        assert_eq!(g.len(), 41);
        assert_eq!(g[5], 1.0);
        let g = gaussian_expand(1.1, 8.0, 0.2, 0.2);
        assert!((g[5] - (-0.25f64).exp()).abs() < 1e-12);
        assert!((g[6] - (-0.25f64).exp()).abs() < 1e-12);
        // far centers underflow to exactly 0.0 in f64
        assert!(g.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!(g[5] > 0.0 && g[40] == 0.0);
    }

    #[test]
    fn one_hot_features() {
        let f = AtomFeaturizer::one_hot();
        let e0 = f.featurize_atom(1).unwrap();
        assert_eq!(e0[0], 1.0);
        assert_eq!(e0.iter().sum::<f64>(), 1.0);
        assert_eq!(f.featurize_atom(26).unwrap()[25], 1.0);
        assert!(matches!(
            f.featurize_atom(119),
            Err(Error::UnknownAtomicNumber(119))
        ));
    }

    #[test]
    fn feature_file_table() {
        let f = AtomFeaturizer::from_json(r#"{"1": [0.5, 1.0], "8": [2.0, -1.0]}"#).unwrap();
        assert_eq!(f.d_init(), 2);
        assert_eq!(f.featurize_atom(8).unwrap(), &[2.0, -1.0]);
        assert!(AtomFeaturizer::from_json(r#"{"1": [0.5], "8": [2.0, -1.0]}"#).is_err());
        assert!(AtomFeaturizer::from_json(r#"{"H": [0.5]}"#).is_err());
    }

    #[test]
    fn iron_graph() {
        let s = cubic(3.0, &[(26, [0.0; 3])]);
        let cfg = GraphConfig {
            cutoff: 3.1,
            ..GraphConfig::default()
        };
        let g = build_graph(&s, &cfg, &AtomFeaturizer::one_hot()).unwrap();
        assert_eq!(g.n_nodes, 1);
        assert_eq!(g.n_edges(), 6);
        assert_eq!(g.d_edge(), gaussian_len(3.1, 0.2));
        assert_eq!(g.node_feats.row(0)[25], 1.0);
        assert!(g.edges.iter().all(|e| e.src == 0 && e.dst == 0));
    }

    #[test]
    fn translation_by_lattice_vector() {
        let base = cubic(4.0, &[(11, [0.1, 0.2, 0.3]), (17, [0.6, 0.7, 0.4])]);
        let mut moved = base.clone();
        for s in &mut moved.sites {
            s.frac[0] += 1.0;
        }
        let cfg = GraphConfig::default();
        let f = AtomFeaturizer::one_hot();
        let a = build_graph(&base, &cfg, &f).unwrap();
        let b = build_graph(&moved, &cfg, &f).unwrap();
        assert_eq!(a.n_edges(), b.n_edges());
        for (x, y) in a.edges.iter().zip(&b.edges) {
            assert_eq!((x.src, x.dst), (y.src, y.dst));
            assert!((x.distance - y.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn relabeling_equivariance() {
        let sites = [
            (11, [0.1, 0.2, 0.3]),
            (17, [0.6, 0.7, 0.4]),
            (8, [0.3, 0.9, 0.8]),
        ];
        let perm = [2usize, 0, 1]; // new index of old site i
        let mut permuted = [(0, [0.0; 3]); 3];
        for (i, &p) in perm.iter().enumerate() {
            permuted[p] = sites[i];
        }
        let a = find_neighbors(&cubic(4.1, &sites), 5.0, usize::MAX).unwrap();
        let b = find_neighbors(&cubic(4.1, &permuted), 5.0, usize::MAX).unwrap();
        for i in 0..3 {
            let mut x: Vec<_> = a[i]
                .iter()
                .map(|n| (perm[n.j], n.image, (n.distance * 1e9).round() as i64))
                .collect();
            let mut y: Vec<_> = b[perm[i]]
                .iter()
                .map(|n| (n.j, n.image, (n.distance * 1e9).round() as i64))
                .collect();
            x.sort();
            y.sort();
            assert_eq!(x, y);
        }
    }
}

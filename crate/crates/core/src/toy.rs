//! Seeded synthetic dataset for desk-scale experiments.
//!
//! Random triclinic cells (lengths 3.5–5.5 Å, angles 75–105°) holding 2–6
//! atoms with Z in 1..=20. The `formation_energy` column carries the benchmark
//! target `mean(Z) + 0.1·volume`; `band_gap` and `density` get simple
//! composition/volume functions so the same data can drive multi-task runs.

use std::path::PathBuf;

use crate::rng::Rng;
use crate::structio::{CrystalStructure, Dataset, Lattice, PropertyRecord, Site};

/// Pseudo-mass per unit Z, amu; 1 amu/Å³ = 1.66054 g/cm³.
const AMU_PER_Z: f64 = 2.0;
const AMU_PER_A3_IN_G_CM3: f64 = 1.66054;
const MIN_SEPARATION: f64 = 1.0;

fn min_separation(lattice: &Lattice, sites: &[Site]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i..] {
            for x in -1..=1 {
                for y in -1..=1 {
                    for z in -1..=1 {
                        let d = [
                            b.frac[0] - a.frac[0] + x as f64,
                            b.frac[1] - a.frac[1] + y as f64,
                            b.frac[2] - a.frac[2] + z as f64,
                        ];
                        let c = lattice.to_cartesian(d);
                        let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                        if r > 1e-12 {
                            best = best.min(r);
                        }
                    }
                }
            }
        }
    }
    best
}

fn random_structure(rng: &mut Rng, id: String) -> CrystalStructure {
    loop {
        let lengths = [
            rng.uniform(3.5, 5.5),
            rng.uniform(3.5, 5.5),
            rng.uniform(3.5, 5.5),
        ];
        let angles = [
            rng.uniform(75.0, 105.0),
            rng.uniform(75.0, 105.0),
            rng.uniform(75.0, 105.0),
        ];
        let Ok(lattice) = Lattice::from_parameters(
            lengths[0], lengths[1], lengths[2], angles[0], angles[1], angles[2],
        ) else {
            continue;
        };
        let n_atoms = 2 + rng.below(5) as usize;
        for _attempt in 0..50 {
            let sites: Vec<Site> = (0..n_atoms)
                .map(|_| Site {
                    species: 1 + rng.below(20) as u32,
                    frac: [rng.next_f64(), rng.next_f64(), rng.next_f64()],
                })
                .collect();
            if min_separation(&lattice, &sites) >= MIN_SEPARATION {
                return CrystalStructure::new(id, lattice, sites)
                    .expect("generated structure is valid");
            }
        }
    }
}

/// The benchmark target: mean atomic number plus a tenth of the cell volume.
pub fn benchmark_target(s: &CrystalStructure) -> f64 {
    let mean_z = s.sites.iter().map(|x| x.species as f64).sum::<f64>() / s.n_sites() as f64;
    mean_z + 0.1 * s.volume()
}

pub fn generate(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let entries = (0..n)
        .map(|i| {
            let s = random_structure(&mut rng, format!("toy-{i:05}"));
            let mean_z = s.sites.iter().map(|x| x.species as f64).sum::<f64>() / s.n_sites() as f64;
            let mass: f64 = s.sites.iter().map(|x| x.species as f64 * AMU_PER_Z).sum();
            let rec = PropertyRecord {
                id: s.id.clone(),
                formation_energy: Some(benchmark_target(&s)),
                band_gap: Some(0.2 * (mean_z - 10.0).abs()),
                density: Some(mass / s.volume() * AMU_PER_A3_IN_G_CM3),
            };
            (s, rec)
        })
        .collect();
    Dataset {
        entries,
        source_dir: PathBuf::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = generate(30, 42);
        let b = generate(30, 42);
        assert_eq!(a.entries, b.entries);
        for (s, r) in &a.entries {
            assert!((2..=6).contains(&s.n_sites()));
            assert!(s.sites.iter().all(|x| (1..=20).contains(&x.species)));
            assert!(s.volume() > 0.0);
            assert_eq!(r.formation_energy, Some(benchmark_target(s)));
            assert!(r.band_gap.unwrap() >= 0.0 && r.density.unwrap() > 0.0);
            assert!(min_separation(&s.lattice, &s.sites) >= MIN_SEPARATION);
        }
    }
}

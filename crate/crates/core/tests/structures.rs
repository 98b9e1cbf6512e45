use std::fs;
use std::path::{Path, PathBuf};

use crystens::cgraph::{build_graph, AtomFeaturizer, GraphConfig};
use crystens::structio::{
    import_mp_dump, load_dataset, parse_cif, parse_structure_json, structure_to_json, ImportMode,
};

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

#[test]
fn rock_salt_golden_files_agree() {
    let cif = parse_cif(&fs::read_to_string(data_file("nacl.cif")).unwrap()).unwrap();
    let json = parse_structure_json(&fs::read_to_string(data_file("nacl.json")).unwrap()).unwrap();
    for (a, b) in cif.lattice.rows().iter().zip(json.lattice.rows()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert_eq!(cif.sites, json.sites);
    assert!((cif.volume() - 179.406144).abs() < 1e-6);

    let g = build_graph(&cif, &GraphConfig::default(), &AtomFeaturizer::one_hot()).unwrap();
    assert_eq!(g.n_nodes, 8);
    // 6 opposite-species neighbors at a/2, then 12 like-species at a/√2; truncated to 12
    for i in 0..8 {
        let d: Vec<f64> = g
            .edges
            .iter()
            .filter(|e| e.src == i)
            .map(|e| e.distance)
            .collect();
        assert_eq!(d.len(), 12);
        assert!(d[..6].iter().all(|x| (x - 2.82).abs() < 1e-9));
        assert!(d[6..].iter().all(|x| (x - 5.64 / 2f64.sqrt()).abs() < 1e-9));
    }
}

#[test]
fn triclinic_golden_file() {
    let s = parse_cif(&fs::read_to_string(data_file("triclinic.cif")).unwrap()).unwrap();
    assert_eq!(s.n_sites(), 3);
    assert_eq!(s.sites[0].species, 14);
    assert_eq!(s.sites[1].frac[0], 0.60);
    let back = parse_structure_json(&structure_to_json(&s)).unwrap();
    assert_eq!(back.sites, s.sites);
    assert_eq!(back.lattice, s.lattice);
}

#[test]
fn import_then_load() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump.json");
    fs::write(
        &dump,
        r#"[
          {"material_id": "mp-1", "formation_energy_per_atom": -2.1, "band_gap": 5.0, "density": 2.16,
           "structure": {"lattice": {"matrix": [[5.64,0,0],[0,5.64,0],[0,0,5.64]]},
                         "sites": [{"species": [{"element": "Na", "occu": 1}], "abc": [0,0,0]},
                                   {"species": [{"element": "Cl", "occu": 1}], "abc": [0.5,0.5,0.5]}]}},
          {"material_id": "mp-2", "formation_energy_per_atom": 0.0, "band_gap": 0.0, "density": 7.87,
           "structure": {"lattice": {"matrix": [[2.87,0,0],[0,2.87,0],[0,0,2.87]]},
                         "sites": [{"species": [{"element": "Fe", "occu": 1}], "abc": [0,0,0]},
                                   {"species": [{"element": "Fe", "occu": 1}], "abc": [0.5,0.5,0.5]}]}},
          {"material_id": "mp-3", "formation_energy_per_atom": -1.0, "density": 3.0,
           "structure": {"lattice": {"matrix": [[3,0,0],[0,3,0],[0,0,3]]},
                         "sites": [{"species": [{"element": "Si", "occu": 1}], "abc": [0,0,0]}]}}
        ]"#,
    )
    .unwrap();
    let out = tmp.path().join("ds");
    let summary = import_mp_dump(&dump, &out, ImportMode::Complete).unwrap();
    assert_eq!((summary.written, summary.skipped_incomplete), (2, 1));
    let ds = load_dataset(&out).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.entries[1].1.density, Some(7.87));
    assert_eq!(ds.entries[0].0.sites[1].species, 17);
}

use maddness_wasm::{partition_json, simulate_json, sweep_json};
use serde_json::Value;

#[test]
fn partition_cells_match_point_leaves() {
    let v: Value = serde_json::from_str(&partition_json(400, 4, 8, 24, 1).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 24 * 24);
    assert_eq!(v["splits"].as_array().unwrap().len(), 7);
    let leaves: Vec<u64> = v["point_leaf"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(leaves.len(), 400);
    assert!(leaves.iter().all(|&l| l < 8));
    // four well separated blobs need at least four occupied leaves
    let mut used = leaves.clone();
    used.sort_unstable();
    used.dedup();
    assert!(used.len() >= 4);
}

#[test]
fn sweep_covers_grid_and_errors_shrink_with_c() {
    let v: Value = serde_json::from_str(&sweep_json(512, 32, 8, 3).unwrap()).unwrap();
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 5 * 3);
    let err = |c: u64, k: u64, key: &str| {
        pts.iter().find(|p| p["c"] == c && p["k"] == k).unwrap()[key].as_f64().unwrap()
    };
    for key in ["pq", "maddness"] {
        assert!(err(16, 16, key) < err(1, 16, key), "{key}");
        assert!(err(16, 16, key) <= err(16, 4, key), "{key}");
    }
}

#[test]
fn simulate_reports_single_row_latency() {
    let v: Value = serde_json::from_str(&simulate_json(1, 16, 64, 1, 64, 8).unwrap()).unwrap();
    assert_eq!(v["cycles"], 28);
    assert_eq!(v["lookups"], 16 * 64);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(partition_json(100, 2, 6, 16, 0).is_err());
    assert!(partition_json(100, 2, 4, 1, 0).is_err());
    assert!(sweep_json(8, 16, 4, 0).is_err());
    assert!(simulate_json(10, 16, 64, 1, 64, 2).is_err());
    assert!(simulate_json(10, 16, 64, 0, 64, 8).is_err());
}

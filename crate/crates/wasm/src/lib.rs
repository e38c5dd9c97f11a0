//! Browser bindings for the demo page in `www/`. One export per panel.
//!
//! Each export returns a JSON string. The `*_json` functions do the work
//! and are plain Rust so they can be tested natively.

use maddness::{
    amm_maddness, build_lut, decode_accumulate, encode_pq, fit, frobenius_error, learn_forest, learn_prototypes,
    matmul_exact, simulate_matmul, synth, AccelConfig, EnergyModel, ForestParams, KMeansParams,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct Split {
    pub node: usize,
    pub dim: usize,
    pub threshold: f64,
}

#[derive(Serialize)]
pub struct Partition {
    pub k: usize,
    pub points: Vec<[f64; 2]>,
    pub point_leaf: Vec<usize>,
    pub grid: usize,
    pub extent: [f64; 4],
    /// Row-major `grid × grid` leaf ids, first row at `y = extent[2]`.
    pub cells: Vec<usize>,
    pub splits: Vec<Split>,
}

#[derive(Serialize)]
pub struct SweepPoint {
    pub c: usize,
    pub k: usize,
    pub pq: f64,
    pub maddness: f64,
}

/// Learns one tree with `k` leaves on `n` points drawn from `clusters`
/// blobs and evaluates it over a `grid × grid` raster.
pub fn partition_json(n: usize, clusters: usize, k: usize, grid: usize, seed: u64) -> Result<String, String> {
    if !(2..=64).contains(&grid) || !(1..=16).contains(&clusters) || n == 0 || n > 5000 {
        return Err("expected 1 ≤ clusters ≤ 16, 2 ≤ grid ≤ 64 and 1 ≤ n ≤ 5000".into());
    }
    let (a, _) = synth::blobs(n, 2, clusters.max(2), 2.0, 0.8, seed);
    let (forest, _) = learn_forest(&a, 1, k, &ForestParams { seed, sample_rows: None }).map_err(|e| e.to_string())?;
    let tree = &forest.trees()[0];
    let cols = [0, 1];

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in a.iter_rows() {
        for j in 0..2 {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    for j in 0..2 {
        let pad = 0.05 * (hi[j] - lo[j]).max(1e-9);
        lo[j] -= pad;
        hi[j] += pad;
    }
    let step = |j: usize, i: usize| lo[j] + (hi[j] - lo[j]) * (i as f64 + 0.5) / grid as f64;
    let mut cells = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            cells.push(tree.leaf(&[step(0, gx), step(1, gy)], &cols));
        }
    }
    let out = Partition {
        k,
        points: a.iter_rows().map(|r| [r[0], r[1]]).collect(),
        point_leaf: a.iter_rows().map(|r| tree.leaf(r, &cols)).collect(),
        grid,
        extent: [lo[0], hi[0], lo[1], hi[1]],
        cells,
        splits: (0..k - 1)
            .map(|node| Split { node, dim: tree.split_idx[node], threshold: tree.thresholds[node] })
            .collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Relative Frobenius error of PQ and hash-tree encoding for every
/// `C` dividing `d` (up to 16) and `K ∈ {4, 8, 16}`. Trains on one
/// Gaussian draw and tests on another.
pub fn sweep_json(n: usize, d: usize, m: usize, seed: u64) -> Result<String, String> {
    if !(16..=4000).contains(&n) || !(1..=128).contains(&d) || !(1..=128).contains(&m) {
        return Err("expected 16 ≤ n ≤ 4000, 1 ≤ d ≤ 128 and 1 ≤ m ≤ 128".into());
    }
    let train = synth::gaussian(n, d, seed);
    let test = synth::gaussian(n, d, seed + 1);
    let b = synth::gaussian(d, m, seed + 2);
    let exact = matmul_exact(&test, &b).map_err(|e| e.to_string())?;
    let rel = |approx| frobenius_error(&approx, &exact).map(|r| r.rel_frobenius).map_err(|e| e.to_string());
    let mut points = Vec::new();
    for c in [1, 2, 4, 8, 16].into_iter().filter(|c| d.is_multiple_of(*c)) {
        for k in [4, 8, 16] {
            let params = KMeansParams { seed, ..KMeansParams::default() };
            let book = learn_prototypes(&train, c, k, &params).map_err(|e| e.to_string())?;
            let lut = build_lut(&b, &book).map_err(|e| e.to_string())?;
            let codes = encode_pq(&test, &book).map_err(|e| e.to_string())?;
            let pq = rel(decode_accumulate(&codes, &lut).map_err(|e| e.to_string())?)?;
            let (forest, lut) = fit(&train, &b, c, k, &ForestParams { seed, sample_rows: None }).map_err(|e| e.to_string())?;
            let maddness = rel(amm_maddness(&test, &forest, &lut).map_err(|e| e.to_string())?)?;
            points.push(SweepPoint { c, k, pq, maddness });
        }
    }
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

/// Accelerator report for an `n × c` encoding against `m` columns.
pub fn simulate_json(n: usize, c: usize, m: usize, units: usize, n_dec: usize, w_dec: usize) -> Result<String, String> {
    let cfg = AccelConfig { units, n_dec, w_dec, ..AccelConfig::default() };
    if n.saturating_mul(c).saturating_mul(m) > 1 << 26 {
        return Err("problem too large for an interactive run".into());
    }
    let out = simulate_matmul(&cfg, &EnergyModel::default(), n, c, m, None).map_err(|e| e.to_string())?;
    serde_json::to_string(&out.report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn partition(n: usize, clusters: usize, k: usize, grid: usize, seed: u32) -> Result<String, JsError> {
    partition_json(n, clusters, k, grid, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn error_sweep(n: usize, d: usize, m: usize, seed: u32) -> Result<String, JsError> {
    sweep_json(n, d, m, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(n: usize, c: usize, m: usize, units: usize, n_dec: usize, w_dec: usize) -> Result<String, JsError> {
    simulate_json(n, c, m, units, n_dec, w_dec).map_err(|e| JsError::new(&e))
}

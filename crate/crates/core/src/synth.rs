//! Seeded synthetic data generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::maddness::{HashForest, HashTree};
use crate::matrix::{Matrix, Tensor4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. standard normal entries.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal)).expect("non-overflowing shape")
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix<f64> {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi)).expect("non-overflowing shape")
}

/// `clusters` Gaussian blobs whose centres sit on hypercube corners
/// (`±separation` in the first `ceil(log2 clusters)` columns). Row `i`
/// belongs to blob `i % clusters`.
pub fn blobs(rows: usize, cols: usize, clusters: usize, separation: f64, spread: f64, seed: u64) -> (Matrix<f64>, Vec<usize>) {
    let bits = clusters.next_power_of_two().trailing_zeros() as usize;
    assert!(bits <= cols, "need at least {bits} columns for {clusters} blobs");
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..rows).map(|i| i % clusters).collect();
    let a = Matrix::from_fn(rows, cols, |i, j| {
        let centre = if j < bits {
            if labels[i] >> j & 1 == 1 { separation } else { -separation }
        } else {
            0.0
        };
        let noise: f64 = r.sample(StandardNormal);
        centre + spread * noise
    })
    .expect("non-overflowing shape");
    (a, labels)
}

/// Two Gaussian classes with identity covariance and means `±separation/2`
/// along the all-ones direction, so every column carries some signal.
/// Row `i` has label `i % 2`.
pub fn two_class_blobs(rows: usize, cols: usize, separation: f64, seed: u64) -> (Matrix<f64>, Vec<usize>) {
    let shift = separation / 2.0 / (cols as f64).sqrt();
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..rows).map(|i| i % 2).collect();
    let a = Matrix::from_fn(rows, cols, |i, _| {
        let noise: f64 = r.sample(StandardNormal);
        noise + if labels[i] == 1 { shift } else { -shift }
    })
    .expect("non-overflowing shape");
    (a, labels)
}

/// Per-subspace prototype sets that a balanced tree with one split
/// dimension per level can separate exactly: bit `l` of prototype `k`
/// sets the sign of subspace column `l`, the remaining columns are small.
pub fn separable_prototypes(c: usize, k: usize, cw: usize, seed: u64) -> Vec<f64> {
    let bits = k.trailing_zeros() as usize;
    assert!(k.is_power_of_two() && bits <= cw, "K must be a power of two with log2 K ≤ CW");
    let mut r = rng(seed);
    let mut protos = Vec::with_capacity(c * k * cw);
    for _ in 0..c {
        for proto in 0..k {
            for j in 0..cw {
                protos.push(if j < bits {
                    let sign = if proto >> j & 1 == 1 { 1.0 } else { -1.0 };
                    sign * r.random_range(3.0..3.5)
                } else {
                    r.random_range(-0.2..0.2)
                });
            }
        }
    }
    protos
}

/// Rows assembled from `protos` (`C × K × CW`, contiguous subspaces): each
/// subspace of each row copies one prototype. Every prototype is used at
/// least once when `rows ≥ K`.
pub fn product_set_rows(protos: &[f64], c: usize, k: usize, cw: usize, rows: usize, seed: u64) -> (Matrix<f64>, Vec<u32>) {
    assert_eq!(protos.len(), c * k * cw);
    let mut r = rng(seed);
    let mut codes = Vec::with_capacity(rows * c);
    let mut data = Vec::with_capacity(rows * c * cw);
    for i in 0..rows {
        for cb in 0..c {
            let code = if i < k { i } else { r.random_range(0..k) };
            codes.push(code as u32);
            let off = (cb * k + code) * cw;
            data.extend_from_slice(&protos[off..off + cw]);
        }
    }
    (Matrix::from_vec(rows, c * cw, data).expect("consistent length"), codes)
}

/// Smooth, spatially correlated images: a few random low-frequency
/// plane waves per channel plus light noise, standardised to unit variance.
pub fn smooth_images(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
    let mut r = rng(seed);
    let mut x = Tensor4::zeros(n, c, h, w).expect("non-overflowing shape");
    for b in 0..n {
        for ch in 0..c {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        r.random_range(-0.6..0.6),
                        r.random_range(-0.6..0.6),
                        r.random_range(0.0..std::f64::consts::TAU),
                        r.random_range(0.5..1.0),
                    )
                })
                .collect();
            for y in 0..h {
                for xx in 0..w {
                    let mut v: f64 = waves
                        .iter()
                        .map(|&(fy, fx, ph, amp)| amp * (fy * y as f64 + fx * xx as f64 + ph).sin())
                        .sum();
                    let noise: f64 = r.sample(StandardNormal);
                    v += 0.05 * noise;
                    x.set(b, ch, y, xx, v);
                }
            }
        }
    }
    let len = x.len() as f64;
    let mean = x.as_slice().iter().sum::<f64>() / len;
    let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
    let sd = var.sqrt().max(1e-12);
    let (n, c, h, w) = x.dims();
    Tensor4::from_fn(n, c, h, w, |b, ch, y, xx| (x.get(b, ch, y, xx) - mean) / sd).expect("same shape")
}

/// Conv weights with i.i.d. `N(0, 1 / fan_in)` entries.
pub fn conv_weights(out_c: usize, in_c: usize, kh: usize, kw: usize, seed: u64) -> Tensor4 {
    let mut r = rng(seed);
    let scale = 1.0 / ((in_c * kh * kw) as f64).sqrt();
    Tensor4::from_fn(out_c, in_c, kh, kw, |_, _, _, _| {
        let z: f64 = r.sample(StandardNormal);
        scale * z
    })
    .expect("non-overflowing shape")
}

/// Forest over contiguous subspaces with one random split dimension per
/// level and standard-normal thresholds.
pub fn random_forest(c: usize, k: usize, cw: usize, seed: u64) -> HashForest {
    assert!(k.is_power_of_two() && c > 0 && cw > 0);
    let mut r = rng(seed);
    let levels = k.trailing_zeros() as usize;
    let trees = (0..c)
        .map(|_| {
            let dims: Vec<usize> = (0..levels).map(|_| r.random_range(0..cw)).collect();
            let split = (0..k - 1)
                .map(|j| dims[(usize::BITS - 1 - (j + 1).leading_zeros()) as usize])
                .collect();
            let thr = (0..k - 1).map(|_| r.sample(StandardNormal)).collect();
            HashTree::new(split, thr).expect("power-of-two K")
        })
        .collect();
    let subspaces = (0..c).map(|i| (i * cw..(i + 1) * cw).collect()).collect();
    HashForest::new(c * cw, subspaces, trees).expect("valid layout")
}

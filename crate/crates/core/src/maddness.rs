//! Hash-tree encoding: one balanced binary regression tree per codebook
//! replaces the nearest-prototype search.
//!
//! Trees are stored in level order. Node `j` has children `2j + 1` (taken
//! when `x < threshold`) and `2j + 2`; leaves are numbered left to right.
//! Learning is greedy, one level at a time, with every node of a level
//! splitting on the same subspace dimension. That shared-dimension layout
//! is what lets a tree be written as the `(S, H, θ)` matrices of
//! [`crate::difftree`].

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::im2col::{im2col, rows_to_tensor, ConvGeometry};
use crate::matrix::{Matrix, Tensor4};
use crate::pq::{
    build_lut, contiguous_subspaces, decode_accumulate, gather_subspace, validate_subspaces,
    EncodingMatrix, LookupTable, PrototypeBook,
};

pub(crate) fn levels_for(k: usize) -> Result<usize> {
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::param(format!("K = {k} is not a power of two")));
    }
    Ok(k.trailing_zeros() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashTree {
    /// Per internal node, an index into the codebook's subspace.
    pub split_idx: Vec<usize>,
    pub thresholds: Vec<f64>,
}

impl HashTree {
    pub fn new(split_idx: Vec<usize>, thresholds: Vec<f64>) -> Result<Self> {
        if split_idx.len() != thresholds.len() {
            return Err(Error::shape("split and threshold arrays differ in length"));
        }
        levels_for(split_idx.len() + 1)?;
        Ok(Self {
            split_idx,
            thresholds,
        })
    }

    pub fn k(&self) -> usize {
        self.split_idx.len() + 1
    }

    pub fn levels(&self) -> usize {
        self.k().trailing_zeros() as usize
    }

    /// Leaf reached by `row`; `cols` maps subspace positions to row columns.
    #[inline]
    pub fn leaf(&self, row: &[f64], cols: &[usize]) -> usize {
        let internal = self.split_idx.len();
        let mut node = 0;
        while node < internal {
            let x = row[cols[self.split_idx[node]]];
            node = 2 * node + if x < self.thresholds[node] { 1 } else { 2 };
        }
        node - internal
    }

    /// Level-wise split dimension, or `None` when some level mixes dimensions.
    pub fn level_dims(&self) -> Option<Vec<usize>> {
        (0..self.levels())
            .map(|l| {
                let nodes = &self.split_idx[(1 << l) - 1..(1 << (l + 1)) - 1];
                nodes.iter().all(|&d| d == nodes[0]).then_some(nodes[0])
            })
            .collect()
    }
}

/// One tree per codebook, plus the column sets the trees read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashForest {
    dim: usize,
    k: usize,
    subspaces: Vec<Vec<usize>>,
    trees: Vec<HashTree>,
}

impl HashForest {
    pub fn new(dim: usize, subspaces: Vec<Vec<usize>>, trees: Vec<HashTree>) -> Result<Self> {
        let cw = validate_subspaces(dim, &subspaces)?;
        if trees.len() != subspaces.len() {
            return Err(Error::shape(format!(
                "{} trees for {} codebooks",
                trees.len(),
                subspaces.len()
            )));
        }
        let k = trees[0].k();
        for t in &trees {
            if t.k() != k {
                return Err(Error::param("trees differ in K"));
            }
            if let Some(&bad) = t.split_idx.iter().find(|&&j| j >= cw) {
                return Err(Error::shape(format!(
                    "split index {bad} outside codebook width {cw}"
                )));
            }
        }
        Ok(Self {
            dim,
            k,
            subspaces,
            trees,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.trees.len()
    }

    pub fn cw(&self) -> usize {
        self.subspaces[0].len()
    }

    pub fn levels(&self) -> usize {
        self.trees[0].levels()
    }

    pub fn subspaces(&self) -> &[Vec<usize>] {
        &self.subspaces
    }

    pub fn trees(&self) -> &[HashTree] {
        &self.trees
    }

    pub fn trees_mut(&mut self) -> &mut [HashTree] {
        &mut self.trees
    }
}

fn check_input(a: &Matrix<f64>, forest: &HashForest) -> Result<()> {
    if a.cols() < forest.dim() {
        return Err(Error::shape(format!(
            "input has {} columns, forest expects {}",
            a.cols(),
            forest.dim()
        )));
    }
    Ok(())
}

pub fn encode_tree(a: &Matrix<f64>, forest: &HashForest) -> Result<EncodingMatrix> {
    encode_tree_counted(a, forest).map(|(codes, _)| codes)
}

/// [`encode_tree`] that also reports the number of threshold comparisons made.
pub fn encode_tree_counted(a: &Matrix<f64>, forest: &HashForest) -> Result<(EncodingMatrix, u64)> {
    check_input(a, forest)?;
    let mut codes = Vec::with_capacity(a.rows() * forest.c());
    let mut comparisons = 0u64;
    for row in a.iter_rows() {
        for (tree, cols) in forest.trees.iter().zip(&forest.subspaces) {
            let internal = tree.split_idx.len();
            let mut node = 0;
            while node < internal {
                comparisons += 1;
                let x = row[cols[tree.split_idx[node]]];
                node = 2 * node + if x < tree.thresholds[node] { 1 } else { 2 };
            }
            codes.push((node - internal) as u32);
        }
    }
    Ok((EncodingMatrix::new(a.rows(), forest.c(), forest.k(), codes)?, comparisons))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForestParams {
    pub seed: u64,
    /// Learn on a seeded random subset of this many rows.
    pub sample_rows: Option<usize>,
}

/// Row-major `n × cw` view of one codebook's training vectors.
struct Points<'a> {
    data: &'a [f64],
    cw: usize,
}

impl Points<'_> {
    #[inline]
    fn at(&self, row: usize, d: usize) -> f64 {
        self.data[row * self.cw + d]
    }

    fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cw..(row + 1) * self.cw]
    }

    fn mean(&self, rows: &[usize]) -> Option<Vec<f64>> {
        if rows.is_empty() {
            return None;
        }
        let mut m = vec![0.0; self.cw];
        for &r in rows {
            for (s, &x) in m.iter_mut().zip(self.row(r)) {
                *s += x;
            }
        }
        let n = rows.len() as f64;
        m.iter_mut().for_each(|s| *s /= n);
        Some(m)
    }
}

/// Best split of `rows` along dimension `d` by summed within-child SSE over
/// the whole subvector. Returns `(loss, threshold)`; the threshold is `None`
/// when the bucket has fewer than two distinct values along `d`.
fn best_split(pts: &Points, rows: &[usize], d: usize) -> (f64, Option<f64>) {
    let cw = pts.cw;
    let n = rows.len();
    if n == 0 {
        return (0.0, None);
    }
    let mut order = rows.to_vec();
    order.sort_by(|&a, &b| pts.at(a, d).total_cmp(&pts.at(b, d)).then(a.cmp(&b)));

    let mut total_sum = vec![0.0; cw];
    let mut total_sq = vec![0.0; cw];
    for &r in &order {
        for (j, &x) in pts.row(r).iter().enumerate() {
            total_sum[j] += x;
            total_sq[j] += x * x;
        }
    }
    let sse = |sum: &[f64], sq: &[f64], count: f64| -> f64 {
        if count == 0.0 {
            return 0.0;
        }
        sum.iter()
            .zip(sq)
            .map(|(s, q)| (q - s * s / count).max(0.0))
            .sum()
    };
    let whole = sse(&total_sum, &total_sq, n as f64);

    let mut left_sum = vec![0.0; cw];
    let mut left_sq = vec![0.0; cw];
    let mut right_sum = vec![0.0; cw];
    let mut right_sq = vec![0.0; cw];
    let mut best: (f64, Option<f64>) = (whole, None);
    for i in 0..n - 1 {
        for (j, &x) in pts.row(order[i]).iter().enumerate() {
            left_sum[j] += x;
            left_sq[j] += x * x;
        }
        let lo = pts.at(order[i], d);
        let hi = pts.at(order[i + 1], d);
        if lo >= hi {
            continue;
        }
        for j in 0..cw {
            right_sum[j] = total_sum[j] - left_sum[j];
            right_sq[j] = total_sq[j] - left_sq[j];
        }
        let nl = (i + 1) as f64;
        let loss = sse(&left_sum, &left_sq, nl) + sse(&right_sum, &right_sq, n as f64 - nl);
        if best.1.is_none() || loss < best.0 {
            let mut mid = lo + (hi - lo) / 2.0;
            if mid <= lo {
                mid = hi;
            }
            best = (loss, Some(mid));
        }
    }
    best
}

fn learn_tree(pts: &Points, n: usize, k: usize) -> Result<(HashTree, Vec<f64>, bool)> {
    let levels = levels_for(k)?;
    let cw = pts.cw;
    let mut split_idx = vec![0usize; k - 1];
    let mut thresholds = vec![0.0f64; k - 1];

    let mut buckets: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut means: Vec<Vec<f64>> = vec![pts.mean(&buckets[0]).unwrap_or_else(|| vec![0.0; cw])];
    let mut parent_thresholds: Vec<Option<f64>> = vec![None];

    for level in 0..levels {
        let mut best_dim = 0;
        let mut best_loss = f64::INFINITY;
        let mut best_splits = Vec::new();
        for d in 0..cw {
            let splits: Vec<(f64, Option<f64>)> = buckets.iter().map(|b| best_split(pts, b, d)).collect();
            let loss: f64 = splits.iter().map(|s| s.0).sum();
            if loss < best_loss {
                best_loss = loss;
                best_dim = d;
                best_splits = splits;
            }
        }

        let first = (1 << level) - 1;
        let mut next_buckets = Vec::with_capacity(buckets.len() * 2);
        let mut next_means = Vec::with_capacity(buckets.len() * 2);
        let mut next_parents = Vec::with_capacity(buckets.len() * 2);
        for (b, rows) in buckets.iter().enumerate() {
            let thr = match best_splits[b].1 {
                Some(t) => t,
                // no usable split: keep the bucket whole on the right branch
                None => match rows.first() {
                    Some(&r) => pts.at(r, best_dim),
                    None => parent_thresholds[b].unwrap_or(0.0),
                },
            };
            split_idx[first + b] = best_dim;
            thresholds[first + b] = thr;
            let (left, right): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| pts.at(r, best_dim) < thr);
            for child in [left, right] {
                next_means.push(pts.mean(&child).unwrap_or_else(|| means[b].clone()));
                next_buckets.push(child);
                next_parents.push(Some(thr));
            }
        }
        buckets = next_buckets;
        means = next_means;
        parent_thresholds = next_parents;
    }
    let has_empty = buckets.iter().any(|b| b.is_empty());
    Ok((
        HashTree::new(split_idx, thresholds)?,
        means.into_iter().flatten().collect(),
        has_empty,
    ))
}

/// Learns one tree per contiguous subspace; leaf prototypes are bucket means.
pub fn learn_forest(
    a_train: &Matrix<f64>,
    c: usize,
    k: usize,
    params: &ForestParams,
) -> Result<(HashForest, PrototypeBook)> {
    let subspaces = contiguous_subspaces(a_train.cols(), c)?;
    learn_forest_on(a_train, subspaces, k, params)
}

pub fn learn_forest_on(
    a_train: &Matrix<f64>,
    subspaces: Vec<Vec<usize>>,
    k: usize,
    params: &ForestParams,
) -> Result<(HashForest, PrototypeBook)> {
    levels_for(k)?;
    if a_train.rows() < k {
        return Err(Error::InsufficientData {
            rows: a_train.rows(),
            k,
        });
    }
    let cw = validate_subspaces(a_train.cols(), &subspaces)?;
    let sampled;
    let train = match params.sample_rows {
        Some(s) if s < a_train.rows() => {
            if s < k {
                return Err(Error::InsufficientData { rows: s, k });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let mut idx = index::sample(&mut rng, a_train.rows(), s).into_vec();
            idx.sort_unstable();
            sampled = a_train.select_rows(&idx)?;
            &sampled
        }
        _ => a_train,
    };

    let mut trees = Vec::with_capacity(subspaces.len());
    let mut protos = Vec::with_capacity(subspaces.len() * k * cw);
    let mut degenerate = false;
    for cols in &subspaces {
        let data = gather_subspace(train, cols);
        let pts = Points { data: &data, cw };
        let (tree, leaf_means, has_empty) = learn_tree(&pts, train.rows(), k)?;
        degenerate |= has_empty;
        trees.push(tree);
        protos.extend(leaf_means);
    }
    let forest = HashForest::new(a_train.cols(), subspaces.clone(), trees)?;
    let mut book = PrototypeBook::new(a_train.cols(), k, subspaces, protos)?;
    book.degenerate = degenerate;
    Ok((forest, book))
}

/// Learns a forest on `a_train` and the lookup table of its prototypes against `b`.
pub fn fit(
    a_train: &Matrix<f64>,
    b: &Matrix<f64>,
    c: usize,
    k: usize,
    params: &ForestParams,
) -> Result<(HashForest, LookupTable)> {
    let (forest, book) = learn_forest(a_train, c, k, params)?;
    let lut = build_lut(b, &book)?;
    Ok((forest, lut))
}

/// `decode_accumulate(encode_tree(a, forest), lut)`.
pub fn amm_maddness(a: &Matrix<f64>, forest: &HashForest, lut: &LookupTable) -> Result<Matrix<f64>> {
    let codes = encode_tree(a, forest)?;
    decode_accumulate(&codes, lut)
}

/// Approximate convolution: im2col, table lookup, back to NCHW. `kernel` is
/// `(kh, kw)`; the forest must cover `C_i·kh·kw` columns.
pub fn amm_conv2d(
    x: &Tensor4,
    kernel: (usize, usize),
    forest: &HashForest,
    lut: &LookupTable,
    stride: usize,
    padding: usize,
) -> Result<Tensor4> {
    let (kh, kw) = kernel;
    if forest.dim() != x.c * kh * kw {
        return Err(Error::shape(format!(
            "forest covers {} columns, convolution lowers to {}",
            forest.dim(),
            x.c * kh * kw
        )));
    }
    let g = ConvGeometry::new(x.h, x.w, kh, kw, stride, padding)?;
    let cols = im2col(x, kh, kw, stride, padding)?;
    let out = amm_maddness(&cols, forest, lut)?;
    rows_to_tensor(&out, x.n, g.out_h, g.out_w)
}

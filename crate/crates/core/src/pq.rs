//! Product quantization. Prototypes come from k-means per subspace; rows
//! encode to their nearest prototype and decode by summing table rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Contiguous subspaces of width `dim / c`. `dim` must be divisible by `c`.
pub fn contiguous_subspaces(dim: usize, c: usize) -> Result<Vec<Vec<usize>>> {
    if c == 0 || dim == 0 {
        return Err(Error::param("need at least one codebook and one column"));
    }
    if !dim.is_multiple_of(c) {
        return Err(Error::param(format!(
            "D = {dim} is not divisible by C = {c}"
        )));
    }
    let cw = dim / c;
    Ok((0..c).map(|i| (i * cw..(i + 1) * cw).collect()).collect())
}

pub(crate) fn validate_subspaces(dim: usize, subspaces: &[Vec<usize>]) -> Result<usize> {
    let Some(first) = subspaces.first() else {
        return Err(Error::param("no subspaces"));
    };
    let cw = first.len();
    if cw == 0 {
        return Err(Error::param("empty subspace"));
    }
    let mut seen = vec![false; dim];
    for s in subspaces {
        if s.len() != cw {
            return Err(Error::param("subspaces differ in width"));
        }
        for &i in s {
            if i >= dim {
                return Err(Error::shape(format!("subspace index {i} outside D = {dim}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::param(format!("column {i} appears in two subspaces")));
            }
        }
    }
    Ok(cw)
}

/// Learned prototypes, `C × K × CW`, plus the column sets they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBook {
    dim: usize,
    k: usize,
    subspaces: Vec<Vec<usize>>,
    protos: Vec<f64>,
    /// Set when some subspace had fewer than K distinct training vectors,
    /// so several prototypes coincide.
    pub degenerate: bool,
}

impl PrototypeBook {
    pub fn new(dim: usize, k: usize, subspaces: Vec<Vec<usize>>, protos: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("K must be at least 1"));
        }
        let cw = validate_subspaces(dim, &subspaces)?;
        if protos.len() != subspaces.len() * k * cw {
            return Err(Error::shape(format!(
                "{} prototype values for C={} K={k} CW={cw}",
                protos.len(),
                subspaces.len()
            )));
        }
        if protos.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN prototype".into()));
        }
        Ok(Self {
            dim,
            k,
            subspaces,
            protos,
            degenerate: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c(&self) -> usize {
        self.subspaces.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cw(&self) -> usize {
        self.subspaces[0].len()
    }

    pub fn subspaces(&self) -> &[Vec<usize>] {
        &self.subspaces
    }

    pub fn prototype(&self, c: usize, k: usize) -> &[f64] {
        let cw = self.cw();
        let start = (c * self.k + k) * cw;
        &self.protos[start..start + cw]
    }

    pub fn values(&self) -> &[f64] {
        &self.protos
    }

    /// Zero-padded expansion: row `c·K + k` holds prototype `(c, k)`
    /// scattered into its subspace columns of a length-`D` vector.
    pub fn expanded(&self) -> Matrix<f64> {
        let mut out = Matrix::zeros(self.c() * self.k, self.dim).expect("non-empty book");
        for c in 0..self.c() {
            for k in 0..self.k {
                let row = out.row_mut(c * self.k + k);
                for (&col, &v) in self.subspaces[c].iter().zip(self.prototype(c, k)) {
                    row[col] = v;
                }
            }
        }
        out
    }
}

/// `N × C` prototype indices, each below `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingMatrix {
    n: usize,
    c: usize,
    k: usize,
    codes: Vec<u32>,
}

impl EncodingMatrix {
    pub fn new(n: usize, c: usize, k: usize, codes: Vec<u32>) -> Result<Self> {
        if codes.len() != n * c {
            return Err(Error::shape(format!("{} codes for {n}x{c}", codes.len())));
        }
        if let Some(&bad) = codes.iter().find(|&&x| x as usize >= k) {
            return Err(Error::CodeOutOfRange {
                code: bad as usize,
                k,
            });
        }
        Ok(Self { n, c, k, codes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize) -> usize {
        self.codes[n * self.c + c] as usize
    }

    pub fn row(&self, n: usize) -> &[u32] {
        &self.codes[n * self.c..(n + 1) * self.c]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.codes
    }

    /// One-hot view `N × C × K` with ones at the selected prototypes.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.c * self.k];
        for (i, &code) in self.codes.iter().enumerate() {
            out[i * self.k + code as usize] = 1.0;
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut codes = Vec::with_capacity(idx.len() * self.c);
        for &r in idx {
            codes.extend_from_slice(self.row(r));
        }
        Self {
            n: idx.len(),
            c: self.c,
            k: self.k,
            codes,
        }
    }
}

/// `C × K × M` table of prototype/weight-column dot products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    c: usize,
    k: usize,
    m: usize,
    values: Vec<f64>,
}

impl LookupTable {
    pub fn new(c: usize, k: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if c == 0 || k == 0 || m == 0 {
            return Err(Error::shape(format!("empty LUT {c}x{k}x{m}")));
        }
        if values.len() != c * k * m {
            return Err(Error::shape(format!(
                "{} LUT values for {c}x{k}x{m}",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN in lookup table".into()));
        }
        Ok(Self { c, k, m, values })
    }

    pub fn zeros(c: usize, k: usize, m: usize) -> Result<Self> {
        Self::new(c, k, m, vec![0.0; c * k * m])
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, c: usize, k: usize, m: usize) -> f64 {
        self.values[(c * self.k + k) * self.m + m]
    }

    /// The `M` outputs stored for prototype `(c, k)`.
    #[inline]
    pub fn entry(&self, c: usize, k: usize) -> &[f64] {
        let start = (c * self.k + k) * self.m;
        &self.values[start..start + self.m]
    }

    pub fn codebook(&self, c: usize) -> &[f64] {
        &self.values[c * self.k * self.m..(c + 1) * self.k * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls to this value.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iters: 100,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Objective after every assignment step.
    pub objective_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
#[inline]
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Random generator used for subspace `c` of a run seeded with `seed`.
pub fn subspace_rng(seed: u64, c: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// k-means++ seeding over `points` (row-major, `dim` wide).
pub fn kmeans_plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can walk past the last positive weight
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..start + dim]));
        }
    }
    centroids
}

/// Lloyd iterations from a given initialisation. Empty clusters are
/// re-seeded at the points farthest from their assigned centroid.
pub fn kmeans_lloyd(points: &[f64], dim: usize, init: Vec<f64>, max_iters: usize, tol: f64) -> KMeansFit {
    let n = points.len() / dim;
    let k = init.len() / dim;
    let mut centroids = init;
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut dists = vec![0.0; n];
    for iter in 0..=max_iters {
        let mut changed = false;
        let mut obj = 0.0;
        for i in 0..n {
            let (best, d) = nearest(&points[i * dim..(i + 1) * dim], &centroids, dim);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            dists[i] = d;
            obj += d;
        }
        let prev = trace.last().copied();
        trace.push(obj);
        let stalled = prev.is_some_and(|p: f64| p - obj <= tol * p);
        if !changed || stalled || iter == max_iters {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assignments[i];
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / inv;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            for i in 0..n {
                let a = assignments[i];
                dists[i] = sq_dist(&points[i * dim..(i + 1) * dim], &centroids[a * dim..(a + 1) * dim]);
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| dists[y].total_cmp(&dists[x]).then(x.cmp(&y)));
            for (&j, &p) in empty.iter().zip(order.iter().cycle()) {
                centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[p * dim..(p + 1) * dim]);
            }
        }
    }
    KMeansFit {
        centroids,
        assignments,
        objective_trace: trace,
    }
}

pub fn kmeans(points: &[f64], dim: usize, k: usize, params: &KMeansParams, rng: &mut impl Rng) -> KMeansFit {
    let init = kmeans_plus_plus_init(points, dim, k, rng);
    kmeans_lloyd(points, dim, init, params.max_iters, params.tol)
}

/// Gathers the subspace columns of every row into a dense `N × CW` buffer.
pub(crate) fn gather_subspace(a: &Matrix<f64>, cols: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows() * cols.len());
    for row in a.iter_rows() {
        out.extend(cols.iter().map(|&j| row[j]));
    }
    out
}

pub(crate) fn distinct_rows(points: &[f64], dim: usize) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .chunks_exact(dim)
        .map(|r| r.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Learns prototypes over contiguous subspaces. Returns the book and the
/// per-subspace objective traces.
pub fn learn_prototypes_traced(
    a_train: &Matrix<f64>,
    c: usize,
    k: usize,
    params: &KMeansParams,
) -> Result<(PrototypeBook, Vec<Vec<f64>>)> {
    let subspaces = contiguous_subspaces(a_train.cols(), c)?;
    learn_prototypes_on(a_train, subspaces, k, params)
}

pub fn learn_prototypes(a_train: &Matrix<f64>, c: usize, k: usize, params: &KMeansParams) -> Result<PrototypeBook> {
    learn_prototypes_traced(a_train, c, k, params).map(|(book, _)| book)
}

pub fn learn_prototypes_on(
    a_train: &Matrix<f64>,
    subspaces: Vec<Vec<usize>>,
    k: usize,
    params: &KMeansParams,
) -> Result<(PrototypeBook, Vec<Vec<f64>>)> {
    if k == 0 {
        return Err(Error::param("K must be at least 1"));
    }
    if a_train.rows() < k {
        return Err(Error::InsufficientData {
            rows: a_train.rows(),
            k,
        });
    }
    let cw = validate_subspaces(a_train.cols(), &subspaces)?;
    let mut protos = Vec::with_capacity(subspaces.len() * k * cw);
    let mut traces = Vec::with_capacity(subspaces.len());
    let mut degenerate = false;
    for (ci, cols) in subspaces.iter().enumerate() {
        let pts = gather_subspace(a_train, cols);
        degenerate |= distinct_rows(&pts, cw) < k;
        let mut rng = subspace_rng(params.seed, ci);
        let fit = kmeans(&pts, cw, k, params, &mut rng);
        protos.extend_from_slice(&fit.centroids);
        traces.push(fit.objective_trace);
    }
    let mut book = PrototypeBook::new(a_train.cols(), k, subspaces, protos)?;
    book.degenerate = degenerate;
    Ok((book, traces))
}

/// Nearest-prototype (squared ℓ2) code per row and subspace, lowest index on ties.
pub fn encode_pq(a: &Matrix<f64>, book: &PrototypeBook) -> Result<EncodingMatrix> {
    if a.cols() < book.dim() {
        return Err(Error::shape(format!(
            "input has {} columns, book expects {}",
            a.cols(),
            book.dim()
        )));
    }
    let cw = book.cw();
    let mut codes = Vec::with_capacity(a.rows() * book.c());
    let mut sub = vec![0.0; cw];
    for row in a.iter_rows() {
        for (c, cols) in book.subspaces().iter().enumerate() {
            for (s, &j) in sub.iter_mut().zip(cols) {
                *s = row[j];
            }
            let centroids = &book.values()[c * book.k() * cw..(c + 1) * book.k() * cw];
            codes.push(nearest(&sub, centroids, cw).0 as u32);
        }
    }
    EncodingMatrix::new(a.rows(), book.c(), book.k(), codes)
}

/// `L[c][k][m] = Σ_{i ∈ I_c} B[i][m] · P[c][k][i]`.
pub fn build_lut(b: &Matrix<f64>, book: &PrototypeBook) -> Result<LookupTable> {
    if b.rows() != book.dim() {
        return Err(Error::shape(format!(
            "B has {} rows, book expects D = {}",
            b.rows(),
            book.dim()
        )));
    }
    let m = b.cols();
    let mut values = vec![0.0; book.c() * book.k() * m];
    for (c, cols) in book.subspaces().iter().enumerate() {
        for k in 0..book.k() {
            let out = &mut values[(c * book.k() + k) * m..(c * book.k() + k + 1) * m];
            for (&i, &p) in cols.iter().zip(book.prototype(c, k)) {
                for (o, &w) in out.iter_mut().zip(b.row(i)) {
                    *o += p * w;
                }
            }
        }
    }
    LookupTable::new(book.c(), book.k(), m, values)
}

/// `out[n][m] = Σ_c L[c][code(n, c)][m]`, accumulated in codebook order.
pub fn decode_accumulate(codes: &EncodingMatrix, lut: &LookupTable) -> Result<Matrix<f64>> {
    if codes.c() != lut.c() {
        return Err(Error::shape(format!(
            "{} codebooks in codes, {} in LUT",
            codes.c(),
            lut.c()
        )));
    }
    if codes.k() > lut.k() {
        if let Some(&bad) = codes.as_slice().iter().find(|&&x| x as usize >= lut.k()) {
            return Err(Error::CodeOutOfRange {
                code: bad as usize,
                k: lut.k(),
            });
        }
    }
    let mut out = Matrix::zeros(codes.n(), lut.m())?;
    for n in 0..codes.n() {
        let row = out.row_mut(n);
        for c in 0..codes.c() {
            for (o, &v) in row.iter_mut().zip(lut.entry(c, codes.get(n, c))) {
                *o += v;
            }
        }
    }
    Ok(out)
}

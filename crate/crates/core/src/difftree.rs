//! Matrix form of the hash forest and its straight-through gradients.
//!
//! For codebook `c` with `K` leaves and `l = log2(K)` levels:
//!
//! * `S_c` is `(K−1) × l`, one-hot per row, picking the level of each node;
//! * `H_c` is `K × (K−1)` over `{−1, 0, +1}`, the path signs from root to
//!   each leaf (`−1` = left);
//! * `θ_c` holds the node thresholds;
//! * `X_c` is the `l`-vector of input columns the levels split on.
//!
//! The hard code is `argmax(H_c · sign(S_c·X_c − θ_c))`, where only the true
//! leaf collects all `l` votes. The soft relaxation replaces `sign` by
//! `tanh(slope · ·)` and the argmax by a softmax with temperature; it is used
//! for the threshold gradients only, while the forward value and the LUT
//! gradients go through the hard one-hot path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maddness::HashForest;
use crate::matrix::Matrix;
use crate::metrics::frobenius_error;
use crate::pq::{decode_accumulate, EncodingMatrix, LookupTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftParams {
    pub temperature: f64,
    pub slope: f64,
}

impl Default for SoftParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            slope: 1.0,
        }
    }
}

impl SoftParams {
    pub fn new(temperature: f64, slope: f64) -> Result<Self> {
        if !(temperature > 0.0 && slope > 0.0) {
            return Err(Error::param("temperature and slope must be positive"));
        }
        Ok(Self { temperature, slope })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeMatrices {
    k: usize,
    levels: usize,
    dim: usize,
    pub s: Vec<Matrix<f64>>,
    pub h: Vec<Matrix<f64>>,
    /// `C × (K−1)`.
    pub theta: Matrix<f64>,
    /// Input column read by each level, per codebook.
    pub dim_select: Vec<Vec<usize>>,
}

/// `diag(blocks...)`.
pub fn block_diag(blocks: &[Matrix<f64>]) -> Result<Matrix<f64>> {
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let cols: usize = blocks.iter().map(|b| b.cols()).sum();
    let mut out = Matrix::zeros(rows, cols)?;
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for r in 0..b.rows() {
            out.row_mut(r0 + r)[c0..c0 + b.cols()].copy_from_slice(b.row(r));
        }
        r0 += b.rows();
        c0 += b.cols();
    }
    Ok(out)
}

fn matvec(m: &Matrix<f64>, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.iter_rows()) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

impl TreeMatrices {
    /// Matrix form of a forest whose trees split on one dimension per level.
    pub fn from_forest(forest: &HashForest) -> Result<Self> {
        let k = forest.k();
        let levels = forest.levels();
        let internal = k - 1;

        let mut s = Matrix::zeros(internal.max(1), levels.max(1))?;
        if levels > 0 {
            for j in 0..internal {
                let level = (usize::BITS - 1 - (j + 1).leading_zeros()) as usize;
                s[(j, level)] = 1.0;
            }
        }
        let mut h = Matrix::zeros(k, internal.max(1))?;
        for leaf in 0..k {
            let mut node = 0;
            for l in 0..levels {
                let right = (leaf >> (levels - 1 - l)) & 1;
                h[(leaf, node)] = if right == 1 { 1.0 } else { -1.0 };
                node = 2 * node + 1 + right;
            }
        }

        let mut theta = Matrix::zeros(forest.c(), internal.max(1))?;
        let mut dim_select = Vec::with_capacity(forest.c());
        for (c, (tree, cols)) in forest.trees().iter().zip(forest.subspaces()).enumerate() {
            let dims = tree.level_dims().ok_or_else(|| {
                Error::param(format!("tree {c} splits on several dimensions within one level"))
            })?;
            dim_select.push(dims.iter().map(|&d| cols[d]).collect());
            theta.row_mut(c)[..internal].copy_from_slice(&tree.thresholds);
        }
        Ok(Self {
            k,
            levels,
            dim: forest.dim(),
            s: vec![s; forest.c()],
            h: vec![h; forest.c()],
            theta,
            dim_select,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.s.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Copy of `forest` carrying this instance's thresholds.
    pub fn apply_thresholds(&self, forest: &HashForest) -> Result<HashForest> {
        if forest.c() != self.c() || forest.k() != self.k {
            return Err(Error::shape("forest does not match the tree matrices"));
        }
        let mut out = forest.clone();
        for (c, tree) in out.trees_mut().iter_mut().enumerate() {
            let n = tree.thresholds.len();
            tree.thresholds.copy_from_slice(&self.theta.row(c)[..n]);
        }
        Ok(out)
    }

    fn check_input(&self, x: &Matrix<f64>) -> Result<()> {
        if x.cols() < self.dim {
            return Err(Error::shape(format!(
                "input has {} columns, trees read up to {}",
                x.cols(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `S_c · X_c − θ_c` for one row and codebook.
    fn preactivation(&self, row: &[f64], c: usize, xs: &mut Vec<f64>, z: &mut [f64]) {
        xs.clear();
        xs.extend(self.dim_select[c].iter().map(|&j| row[j]));
        if self.levels == 0 {
            return;
        }
        matvec(&self.s[c], xs, z);
        for (zj, t) in z.iter_mut().zip(self.theta.row(c)) {
            *zj -= t;
        }
    }

    /// Per-leaf vote counts `H_c · sign(S_c·X_c − θ_c)` for one row.
    pub fn hard_scores(&self, row: &[f64], c: usize) -> Vec<f64> {
        let mut xs = Vec::with_capacity(self.levels);
        let mut z = vec![0.0; self.k - 1];
        let mut scores = vec![0.0; self.k];
        self.preactivation(row, c, &mut xs, &mut z);
        let signs: Vec<f64> = z.iter().map(|&v| sign(v)).collect();
        if self.levels > 0 {
            matvec(&self.h[c], &signs, &mut scores);
        }
        scores
    }

    /// Block-diagonal `S = diag(S_1, …, S_C)`.
    pub fn stacked_s(&self) -> Result<Matrix<f64>> {
        block_diag(&self.s)
    }

    /// Block-diagonal `H = diag(H_1, …, H_C)`.
    pub fn stacked_h(&self) -> Result<Matrix<f64>> {
        block_diag(&self.h)
    }
}

pub fn encode_hard(tm: &TreeMatrices, x: &Matrix<f64>) -> Result<EncodingMatrix> {
    tm.check_input(x)?;
    let mut codes = Vec::with_capacity(x.rows() * tm.c());
    let mut xs = Vec::with_capacity(tm.levels);
    let mut z = vec![0.0; tm.k - 1];
    let mut signs = vec![0.0; tm.k - 1];
    let mut scores = vec![0.0; tm.k];
    for row in x.iter_rows() {
        for c in 0..tm.c() {
            if tm.levels == 0 {
                codes.push(0);
                continue;
            }
            tm.preactivation(row, c, &mut xs, &mut z);
            for (s, &v) in signs.iter_mut().zip(&z) {
                *s = sign(v);
            }
            matvec(&tm.h[c], &signs, &mut scores);
            codes.push(argmax(&scores) as u32);
        }
    }
    EncodingMatrix::new(x.rows(), tm.c(), tm.k, codes)
}

/// Soft assignments, `N × C × K`, each `K`-slice a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignments {
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub probs: Vec<f64>,
}

impl SoftAssignments {
    pub fn slice(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.k;
        &self.probs[start..start + self.k]
    }
}

/// Softmax of `H_c · tanh(slope · (S_c·X_c − θ_c)) / temperature` for one
/// row and codebook; also returns the tanh activations.
fn soft_slice(tm: &TreeMatrices, sp: &SoftParams, row: &[f64], c: usize, xs: &mut Vec<f64>, z: &mut [f64], probs: &mut [f64]) {
    if tm.levels == 0 {
        probs[0] = 1.0;
        return;
    }
    tm.preactivation(row, c, xs, z);
    for v in z.iter_mut() {
        *v = (sp.slope * *v).tanh();
    }
    matvec(&tm.h[c], z, probs);
    probs.iter_mut().for_each(|p| *p /= sp.temperature);
    softmax_in_place(probs);
}

pub fn encode_soft(tm: &TreeMatrices, sp: &SoftParams, x: &Matrix<f64>) -> Result<SoftAssignments> {
    tm.check_input(x)?;
    let k = tm.k;
    let mut probs = vec![0.0; x.rows() * tm.c() * k];
    let mut xs = Vec::with_capacity(tm.levels);
    let mut z = vec![0.0; k - 1];
    for (n, row) in x.iter_rows().enumerate() {
        for c in 0..tm.c() {
            let start = (n * tm.c() + c) * k;
            soft_slice(tm, sp, row, c, &mut xs, &mut z, &mut probs[start..start + k]);
        }
    }
    Ok(SoftAssignments {
        n: x.rows(),
        c: tm.c(),
        k,
        probs,
    })
}

fn check_lut(tm: &TreeMatrices, lut: &LookupTable) -> Result<()> {
    if lut.c() != tm.c() || lut.k() != tm.k {
        return Err(Error::shape(format!(
            "LUT is {}x{}, trees are C={} K={}",
            lut.c(),
            lut.k(),
            tm.c(),
            tm.k
        )));
    }
    Ok(())
}

/// Forward value with the hard one-hot assignment: `Σ_c Σ_k E·L`.
pub fn amm_ste_forward(tm: &TreeMatrices, lut: &LookupTable, x: &Matrix<f64>) -> Result<Matrix<f64>> {
    check_lut(tm, lut)?;
    let codes = encode_hard(tm, x)?;
    decode_accumulate(&codes, lut)
}

/// Output with the soft assignment substituted for the hard one.
pub fn soft_forward(tm: &TreeMatrices, sp: &SoftParams, lut: &LookupTable, x: &Matrix<f64>) -> Result<Matrix<f64>> {
    check_lut(tm, lut)?;
    let soft = encode_soft(tm, sp, x)?;
    let mut out = Matrix::zeros(x.rows(), lut.m())?;
    for n in 0..x.rows() {
        let row = out.row_mut(n);
        for c in 0..tm.c() {
            for (k, &p) in soft.slice(n, c).iter().enumerate() {
                for (o, &l) in row.iter_mut().zip(lut.entry(c, k)) {
                    *o += p * l;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteGradients {
    /// Same layout as the LUT, `C × K × M`.
    pub d_lut: Vec<f64>,
    /// `C × (K−1)`.
    pub d_theta: Matrix<f64>,
}

/// Gradients of `Σ upstream ⊙ output` with respect to the LUT (hard path)
/// and the thresholds (soft surrogate).
pub fn amm_ste_backward(
    tm: &TreeMatrices,
    sp: &SoftParams,
    lut: &LookupTable,
    x: &Matrix<f64>,
    upstream: &Matrix<f64>,
) -> Result<SteGradients> {
    check_lut(tm, lut)?;
    if upstream.shape() != (x.rows(), lut.m()) {
        return Err(Error::shape(format!(
            "upstream gradient {:?}, output is {}x{}",
            upstream.shape(),
            x.rows(),
            lut.m()
        )));
    }
    let codes = encode_hard(tm, x)?;
    let (k, m) = (tm.k, lut.m());
    let mut d_lut = vec![0.0; tm.c() * k * m];
    let mut d_theta = Matrix::zeros(tm.c(), (k - 1).max(1))?;

    let mut xs = Vec::with_capacity(tm.levels);
    let mut t = vec![0.0; k - 1];
    let mut p = vec![0.0; k];
    let mut du = vec![0.0; k];
    for (n, row) in x.iter_rows().enumerate() {
        let g_out = upstream.row(n);
        for c in 0..tm.c() {
            let code = codes.get(n, c);
            let start = (c * k + code) * m;
            for (d, &g) in d_lut[start..start + m].iter_mut().zip(g_out) {
                *d += g;
            }
            if tm.levels == 0 {
                continue;
            }

            soft_slice(tm, sp, row, c, &mut xs, &mut t, &mut p);
            // dℓ/dp_k = <upstream, L[c][k]>
            let mut mean = 0.0;
            for (kk, duk) in du.iter_mut().enumerate() {
                *duk = g_out.iter().zip(lut.entry(c, kk)).map(|(a, b)| a * b).sum();
                mean += p[kk] * *duk;
            }
            for (duk, &pk) in du.iter_mut().zip(&p) {
                *duk = pk * (*duk - mean) / sp.temperature;
            }
            let h = &tm.h[c];
            let theta_grad = d_theta.row_mut(c);
            for j in 0..k - 1 {
                let dt: f64 = (0..k).map(|kk| h[(kk, j)] * du[kk]).sum();
                theta_grad[j] -= dt * sp.slope * (1.0 - t[j] * t[j]);
            }
        }
    }
    Ok(SteGradients { d_lut, d_theta })
}

/// Training targets for [`finetune_toy`].
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Mean squared error against these outputs.
    Regression(Matrix<f64>),
    /// Softmax cross-entropy over the `M` outputs as class logits.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix<f64>,
    pub target: Target,
    /// Exact product the approximation is compared against in the metrics.
    pub reference: Option<Matrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_theta_scale: f64,
    pub lr_min: f64,
    pub soft: SoftParams,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-2,
            lr_theta_scale: 0.5,
            lr_min: 0.0,
            soft: SoftParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub rel_frobenius: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub forest: HashForest,
    pub lut: LookupTable,
    pub history: Vec<EpochMetrics>,
    pub initial_loss: f64,
    /// Loss of the returned parameters.
    pub best_loss: f64,
    pub best_epoch: usize,
}

impl FinetuneOutcome {
    /// `epoch,loss,lr,rel_frobenius` rows with a header.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr,rel_frobenius\n");
        for h in &self.history {
            let rel = h.rel_frobenius.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", h.epoch, h.loss, h.lr, rel));
        }
        s
    }
}

/// Cosine-annealed rate for `epoch` of `total`.
pub fn cosine_lr(lr: f64, lr_min: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    let phase = std::f64::consts::PI * epoch as f64 / total as f64;
    lr_min + (lr - lr_min) * (1.0 + phase.cos()) / 2.0
}

/// Loss and its output gradient. Accuracy is `Some` for classification.
fn loss_and_grad(out: &Matrix<f64>, target: &Target) -> Result<(f64, Matrix<f64>, Option<f64>)> {
    let (n, m) = out.shape();
    match target {
        Target::Regression(y) => {
            if y.shape() != out.shape() {
                return Err(Error::shape("regression targets do not match the output"));
            }
            let scale = 1.0 / (n * m) as f64;
            let mut grad = Matrix::zeros(n, m)?;
            let mut loss = 0.0;
            for ((g, &o), &t) in grad.as_mut_slice().iter_mut().zip(out.as_slice()).zip(y.as_slice()) {
                let d = o - t;
                loss += d * d * scale;
                *g = 2.0 * d * scale;
            }
            Ok((loss, grad, None))
        }
        Target::Classes(labels) => {
            if labels.len() != n {
                return Err(Error::shape("one label per row required"));
            }
            let mut grad = Matrix::zeros(n, m)?;
            let mut loss = 0.0;
            let mut correct = 0usize;
            for (i, &label) in labels.iter().enumerate() {
                if label >= m {
                    return Err(Error::param(format!("label {label} with {m} outputs")));
                }
                let logits = out.row(i);
                if argmax(logits) == label {
                    correct += 1;
                }
                let g = grad.row_mut(i);
                g.copy_from_slice(logits);
                softmax_in_place(g);
                loss -= g[label].max(f64::MIN_POSITIVE).ln() / n as f64;
                g[label] -= 1.0;
                g.iter_mut().for_each(|v| *v /= n as f64);
            }
            Ok((loss, grad, Some(correct as f64 / n as f64)))
        }
    }
}

/// Full-batch gradient descent on the LUT and thresholds with cosine
/// annealing. Thresholds move at `lr_theta_scale` times the LUT rate.
/// Returns the parameters with the lowest training loss seen, the starting
/// point included, so the returned loss never exceeds the initial one.
pub fn finetune_toy(
    forest: &HashForest,
    lut: &LookupTable,
    data: &Dataset,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let mut tm = TreeMatrices::from_forest(forest)?;
    check_lut(&tm, lut)?;
    let mut lut = lut.clone();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, usize, Matrix<f64>, LookupTable)> = None;
    let mut initial_loss = f64::NAN;

    for epoch in 0..=cfg.epochs {
        let out = amm_ste_forward(&tm, &lut, &data.x)?;
        let (loss, grad, accuracy) = loss_and_grad(&out, &data.target)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss diverged at epoch {epoch}: {loss}")));
        }
        if epoch == 0 {
            initial_loss = loss;
        }
        let rel_frobenius = match &data.reference {
            Some(r) => Some(frobenius_error(&out, r)?.rel_frobenius),
            None => None,
        };
        let lr = if epoch < cfg.epochs {
            cosine_lr(cfg.lr, cfg.lr_min, epoch, cfg.epochs)
        } else {
            0.0
        };
        history.push(EpochMetrics {
            epoch,
            loss,
            lr,
            rel_frobenius,
            accuracy,
        });
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, epoch, tm.theta.clone(), lut.clone()));
        }
        if epoch == cfg.epochs || lr == 0.0 {
            continue;
        }

        let grads = amm_ste_backward(&tm, &cfg.soft, &lut, &data.x, &grad)?;
        for (v, g) in lut.values_mut().iter_mut().zip(&grads.d_lut) {
            *v -= lr * g;
        }
        let theta_lr = lr * cfg.lr_theta_scale;
        for (t, g) in tm.theta.as_mut_slice().iter_mut().zip(grads.d_theta.as_slice()) {
            *t -= theta_lr * g;
        }
    }

    let (best_loss, best_epoch, theta, best_lut) = best.expect("at least one epoch evaluated");
    tm.theta = theta;
    Ok(FinetuneOutcome {
        forest: tm.apply_thresholds(forest)?,
        lut: best_lut,
        history,
        initial_loss,
        best_loss,
        best_epoch,
    })
}

/// A random, well-conditioned problem for checking the analytic gradients.
#[derive(Debug, Clone)]
pub struct GradcheckInstance {
    pub forest: HashForest,
    pub tm: TreeMatrices,
    pub soft: SoftParams,
    pub lut: LookupTable,
    pub x: Matrix<f64>,
    pub upstream: Matrix<f64>,
}

/// Smallest `|S·X − θ|` over all rows, codebooks and nodes.
pub fn min_margin(tm: &TreeMatrices, x: &Matrix<f64>) -> Result<f64> {
    tm.check_input(x)?;
    let mut xs = Vec::with_capacity(tm.levels);
    let mut z = vec![0.0; tm.k - 1];
    let mut best = f64::INFINITY;
    for row in x.iter_rows() {
        for c in 0..tm.c() {
            tm.preactivation(row, c, &mut xs, &mut z);
            best = z.iter().fold(best, |b, v| b.min(v.abs()));
        }
    }
    Ok(best)
}

/// Draws a random instance from `seed`. Input
/// rows closer than `margin` to any split are redrawn so the hard path is
/// locally constant.
pub fn gradcheck_instance(seed: u64, c: usize, k: usize, cw: usize, n: usize, m: usize, margin: f64) -> Result<GradcheckInstance> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let forest = crate::synth::random_forest(c, k, cw, rng.random());
    let tm = TreeMatrices::from_forest(&forest)?;
    let soft = SoftParams::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0))?;
    let lut = LookupTable::new(c, k, m, (0..c * k * m).map(|_| rng.sample(StandardNormal)).collect())?;
    let d = c * cw;
    let mut x = Matrix::zeros(n, d)?;
    for i in 0..n {
        for _attempt in 0..1000 {
            x.row_mut(i).iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            if min_margin(&tm, &x.select_rows(&[i])?)? >= margin {
                break;
            }
        }
    }
    let upstream = Matrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))?;
    Ok(GradcheckInstance { forest, tm, soft, lut, x, upstream })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckReport {
    /// Worst relative error of `dθ` against central differences of the
    /// soft surrogate.
    pub max_rel_theta: f64,
    /// Worst relative error of `dL` against central differences of the
    /// hard forward.
    pub max_rel_lut: f64,
    pub min_margin: f64,
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(floor)
}

fn weighted_sum(a: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(w.as_slice()).map(|(x, y)| x * y).sum()
}

/// Compares [`amm_ste_backward`] with central differences of
/// `Σ upstream ⊙ output`. Components are scored relative to the largest
/// component magnitude times `1e-6` at least, so exact zeros do not divide.
pub fn gradcheck(inst: &GradcheckInstance, h_theta: f64, h_lut: f64) -> Result<GradcheckReport> {
    let GradcheckInstance { tm, soft, lut, x, upstream, .. } = inst;
    let grads = amm_ste_backward(tm, soft, lut, x, upstream)?;
    let internal = tm.k - 1;

    let theta_floor = grads.d_theta.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs())) * 1e-6;
    let mut max_rel_theta = 0.0f64;
    let mut probe = tm.clone();
    for c in 0..tm.c() {
        for j in 0..internal {
            let base = tm.theta[(c, j)];
            probe.theta[(c, j)] = base + h_theta;
            let plus = weighted_sum(&soft_forward(&probe, soft, lut, x)?, upstream);
            probe.theta[(c, j)] = base - h_theta;
            let minus = weighted_sum(&soft_forward(&probe, soft, lut, x)?, upstream);
            probe.theta[(c, j)] = base;
            let fd = (plus - minus) / (2.0 * h_theta);
            max_rel_theta = max_rel_theta.max(relative_error(grads.d_theta[(c, j)], fd, theta_floor.max(1e-300)));
        }
    }

    let lut_floor = grads.d_lut.iter().fold(0.0f64, |a, v| a.max(v.abs())) * 1e-6;
    let mut max_rel_lut = 0.0f64;
    let mut probe_lut = lut.clone();
    for i in 0..lut.values().len() {
        let base = lut.values()[i];
        probe_lut.values_mut()[i] = base + h_lut;
        let plus = weighted_sum(&amm_ste_forward(tm, &probe_lut, x)?, upstream);
        probe_lut.values_mut()[i] = base - h_lut;
        let minus = weighted_sum(&amm_ste_forward(tm, &probe_lut, x)?, upstream);
        probe_lut.values_mut()[i] = base;
        let fd = (plus - minus) / (2.0 * h_lut);
        max_rel_lut = max_rel_lut.max(relative_error(grads.d_lut[i], fd, lut_floor.max(1e-300)));
    }

    Ok(GradcheckReport {
        max_rel_theta,
        max_rel_lut,
        min_margin: min_margin(tm, x)?,
    })
}

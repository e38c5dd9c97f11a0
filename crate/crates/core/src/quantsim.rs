//! INT8 lookup tables with saturating INT24 accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{frobenius_error, ErrorReport};
use crate::pq::{decode_accumulate, EncodingMatrix, LookupTable};

pub const ACC24_MIN: i32 = -(1 << 23);
pub const ACC24_MAX: i32 = (1 << 23) - 1;
pub const MAX_CODEBOOKS: usize = 1 << 15;

/// Symmetric INT8 table, one scale per codebook (zero point 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLut {
    c: usize,
    k: usize,
    m: usize,
    scales: Vec<f64>,
    q: Vec<i8>,
}

impl QuantLut {
    pub fn new(c: usize, k: usize, m: usize, scales: Vec<f64>, q: Vec<i8>) -> Result<Self> {
        if scales.len() != c || q.len() != c * k * m {
            return Err(Error::shape(format!(
                "{} scales and {} entries for {c}x{k}x{m}",
                scales.len(),
                q.len()
            )));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("scales must be positive and finite"));
        }
        if q.contains(&i8::MIN) {
            return Err(Error::param("quantized entries are limited to ±127"));
        }
        Ok(Self { c, k, m, scales, q })
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

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn values(&self) -> &[i8] {
        &self.q
    }

    #[inline]
    pub fn entry(&self, c: usize, k: usize) -> &[i8] {
        let start = (c * self.k + k) * self.m;
        &self.q[start..start + self.m]
    }

    pub fn shared_scale(&self) -> Option<f64> {
        let first = self.scales[0];
        self.scales.iter().all(|&s| s == first).then_some(first)
    }

    pub fn dequantize(&self) -> LookupTable {
        let per_book = self.k * self.m;
        let values = self
            .q
            .iter()
            .enumerate()
            .map(|(i, &q)| q as f64 * self.scales[i / per_book])
            .collect();
        LookupTable::new(self.c, self.k, self.m, values).expect("dimensions already checked")
    }
}

fn quantize_with(lut: &LookupTable, scales: Vec<f64>) -> Result<QuantLut> {
    let per_book = lut.k() * lut.m();
    let q = lut
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v / scales[i / per_book]).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantLut::new(lut.c(), lut.k(), lut.m(), scales, q)
}

fn scale_for(max_abs: f64) -> f64 {
    if max_abs > 0.0 {
        max_abs / 127.0
    } else {
        1.0
    }
}

fn check_finite(lut: &LookupTable) -> Result<()> {
    if lut.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite LUT entry".into()));
    }
    Ok(())
}

/// Per-codebook scale `max|L[c]| / 127`, round half to even.
pub fn quantize_lut(lut: &LookupTable) -> Result<QuantLut> {
    check_finite(lut)?;
    let scales = (0..lut.c())
        .map(|c| scale_for(lut.codebook(c).iter().fold(0.0, |a: f64, v| a.max(v.abs()))))
        .collect();
    quantize_with(lut, scales)
}

/// One scale for the whole table, so the integer accumulator needs no rescaling.
pub fn quantize_lut_shared(lut: &LookupTable) -> Result<QuantLut> {
    check_finite(lut)?;
    let s = scale_for(lut.values().iter().fold(0.0, |a: f64, v| a.max(v.abs())));
    quantize_with(lut, vec![s; lut.c()])
}

/// 24-bit signed accumulator that clamps instead of wrapping. The flag is
/// sticky once any addition overflowed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Acc24 {
    value: i32,
    saturated: bool,
}

impl Acc24 {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: i32) {
        let sum = self.value as i64 + x as i64;
        if sum > ACC24_MAX as i64 {
            self.value = ACC24_MAX;
            self.saturated = true;
        } else if sum < ACC24_MIN as i64 {
            self.value = ACC24_MIN;
            self.saturated = true;
        } else {
            self.value = sum as i32;
        }
    }

    pub fn value(&self) -> i32 {
        self.value
    }

    /// Adds another accumulator's value; the sticky flag carries over.
    pub fn absorb(&mut self, other: &Acc24) {
        self.add(other.value);
        self.saturated |= other.saturated;
    }

    pub fn saturated(&self) -> bool {
        self.saturated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantDecode {
    /// Raw INT24 sums of the INT8 entries.
    pub ints: Matrix<i32>,
    /// `Σ_c Δ_c · q`, accumulated in f64 in codebook order.
    pub dequant: Matrix<f64>,
    pub saturated: bool,
}

pub(crate) fn check_codes(codes: &EncodingMatrix, qlut: &QuantLut) -> Result<()> {
    if codes.c() != qlut.c() {
        return Err(Error::shape(format!(
            "{} codebooks in codes, {} in LUT",
            codes.c(),
            qlut.c()
        )));
    }
    if codes.c() > MAX_CODEBOOKS {
        return Err(Error::param(format!(
            "C = {} exceeds {MAX_CODEBOOKS}; INT24 headroom is not guaranteed",
            codes.c()
        )));
    }
    if let Some(&bad) = codes.as_slice().iter().find(|&&x| x as usize >= qlut.k()) {
        return Err(Error::CodeOutOfRange {
            code: bad as usize,
            k: qlut.k(),
        });
    }
    Ok(())
}

pub fn decode_quantized(codes: &EncodingMatrix, qlut: &QuantLut) -> Result<QuantDecode> {
    check_codes(codes, qlut)?;
    let (n, m) = (codes.n(), qlut.m());
    let mut ints = Matrix::zeros(n, m)?;
    let mut dequant = Matrix::zeros(n, m)?;
    let mut saturated = false;
    let mut accs = vec![Acc24::new(); m];
    for row in 0..n {
        accs.iter_mut().for_each(|a| *a = Acc24::new());
        let deq = dequant.row_mut(row);
        for c in 0..codes.c() {
            let scale = qlut.scales[c];
            for ((acc, d), &q) in accs.iter_mut().zip(deq.iter_mut()).zip(qlut.entry(c, codes.get(row, c))) {
                acc.add(q as i32);
                *d += scale * q as f64;
            }
        }
        for (o, acc) in ints.row_mut(row).iter_mut().zip(&accs) {
            *o = acc.value();
            saturated |= acc.saturated();
        }
    }
    Ok(QuantDecode {
        ints,
        dequant,
        saturated,
    })
}

/// Dequantized decode against the float decode of the same codes.
pub fn quant_error_report(lut: &LookupTable, qlut: &QuantLut, codes: &EncodingMatrix) -> Result<ErrorReport> {
    let float = decode_accumulate(codes, lut)?;
    let quant = decode_quantized(codes, qlut)?;
    frobenius_error(&quant.dequant, &float)
}

/// Worst-case elementwise deviation of the dequantized decode: `Σ_c Δ_c / 2`.
pub fn dequant_error_bound(qlut: &QuantLut) -> f64 {
    qlut.scales.iter().map(|s| s / 2.0).sum()
}

//! `MADL` model bundles.
//!
//! Layout (little-endian): magic `4D 41 44 4C 01`; u32 `D, M, C, K, CW`;
//! `C × CW` u32 subspace columns; per codebook `K − 1` u32 split indices
//! (into the subspace) followed by `K − 1` f32 thresholds in level order;
//! `C·K·M` f32 LUT entries; one flag byte, and when it is 1, `C` f32 scales
//! and `C·K·M` i8 codes. An optional trailing block stores the encoder
//! kind: one byte (0 trees, 1 prototypes), then for prototypes `C·K·CW`
//! f32 values. Files that stop after the quantized section hold trees.

use std::path::Path;

use crate::error::{Error, Result};
use crate::maddness::{encode_tree, HashForest, HashTree};
use crate::matrix::Matrix;
use crate::pq::{encode_pq, EncodingMatrix, LookupTable, PrototypeBook};
use crate::quantsim::QuantLut;

pub const MAGIC: [u8; 5] = *b"MADL\x01";

const TAG_TREES: u8 = 0;
const TAG_PROTOTYPES: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Trees(HashForest),
    Prototypes(PrototypeBook),
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Self::Trees(f) => f.dim(),
            Self::Prototypes(b) => b.dim(),
        }
    }

    pub fn c(&self) -> usize {
        match self {
            Self::Trees(f) => f.c(),
            Self::Prototypes(b) => b.c(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Trees(f) => f.k(),
            Self::Prototypes(b) => b.k(),
        }
    }

    pub fn cw(&self) -> usize {
        match self {
            Self::Trees(f) => f.cw(),
            Self::Prototypes(b) => b.cw(),
        }
    }

    pub fn subspaces(&self) -> &[Vec<usize>] {
        match self {
            Self::Trees(f) => f.subspaces(),
            Self::Prototypes(b) => b.subspaces(),
        }
    }

    pub fn encode(&self, a: &Matrix<f64>) -> Result<EncodingMatrix> {
        match self {
            Self::Trees(f) => encode_tree(a, f),
            Self::Prototypes(b) => encode_pq(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    encoder: Encoder,
    lut: LookupTable,
    quant: Option<QuantLut>,
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

impl ModelBundle {
    /// Checks that the parts agree and rounds every float to its stored
    /// f32 value, so a saved bundle loads back equal.
    pub fn new(encoder: Encoder, lut: LookupTable, quant: Option<QuantLut>) -> Result<Self> {
        if lut.c() != encoder.c() || lut.k() != encoder.k() {
            return Err(Error::Consistency(format!(
                "LUT is C={} K={}, encoder is C={} K={}",
                lut.c(),
                lut.k(),
                encoder.c(),
                encoder.k()
            )));
        }
        if let Some(q) = &quant {
            if (q.c(), q.k(), q.m()) != (lut.c(), lut.k(), lut.m()) {
                return Err(Error::Consistency("quantized LUT dims differ from the float LUT".into()));
            }
        }
        let encoder = match encoder {
            Encoder::Trees(f) => {
                let trees = f
                    .trees()
                    .iter()
                    .map(|t| HashTree::new(t.split_idx.clone(), t.thresholds.iter().map(|&v| f32_round(v)).collect()))
                    .collect::<Result<Vec<_>>>()?;
                Encoder::Trees(HashForest::new(f.dim(), f.subspaces().to_vec(), trees)?)
            }
            Encoder::Prototypes(b) => Encoder::Prototypes(PrototypeBook::new(
                b.dim(),
                b.k(),
                b.subspaces().to_vec(),
                b.values().iter().map(|&v| f32_round(v)).collect(),
            )?),
        };
        let lut = LookupTable::new(lut.c(), lut.k(), lut.m(), lut.values().iter().map(|&v| f32_round(v)).collect())?;
        let quant = match quant {
            Some(q) => Some(QuantLut::new(
                q.c(),
                q.k(),
                q.m(),
                q.scales().iter().map(|&s| f32_round(s)).collect(),
                q.values().to_vec(),
            )?),
            None => None,
        };
        Ok(Self { encoder, lut, quant })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn lut(&self) -> &LookupTable {
        &self.lut
    }

    pub fn quant(&self) -> Option<&QuantLut> {
        self.quant.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn m(&self) -> usize {
        self.lut.m()
    }

    pub fn with_quant(self, quant: QuantLut) -> Result<Self> {
        Self::new(self.encoder, self.lut, Some(quant))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, k, cw, m) = (self.encoder.c(), self.encoder.k(), self.encoder.cw(), self.lut.m());
        let mut out = Vec::with_capacity(32 + c * k * m * 5);
        out.extend_from_slice(&MAGIC);
        for v in [self.encoder.dim(), m, c, k, cw] {
            put_u32(&mut out, v);
        }
        for s in self.encoder.subspaces() {
            s.iter().for_each(|&i| put_u32(&mut out, i));
        }
        match &self.encoder {
            Encoder::Trees(f) => {
                for t in f.trees() {
                    t.split_idx.iter().for_each(|&i| put_u32(&mut out, i));
                    t.thresholds.iter().for_each(|&v| put_f32(&mut out, v));
                }
            }
            Encoder::Prototypes(_) => {
                // placeholder trees keep the fixed layout readable
                for _ in 0..c {
                    (0..k - 1).for_each(|_| put_u32(&mut out, 0));
                    (0..k - 1).for_each(|_| put_f32(&mut out, 0.0));
                }
            }
        }
        self.lut.values().iter().for_each(|&v| put_f32(&mut out, v));
        match &self.quant {
            Some(q) => {
                out.push(1);
                q.scales().iter().for_each(|&s| put_f32(&mut out, s));
                out.extend(q.values().iter().map(|&v| v as u8));
            }
            None => out.push(0),
        }
        match &self.encoder {
            Encoder::Trees(_) => out.push(TAG_TREES),
            Encoder::Prototypes(b) => {
                out.push(TAG_PROTOTYPES);
                b.values().iter().for_each(|&v| put_f32(&mut out, v));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a MADL v1 file".into()));
        }
        let dim = r.u32()?;
        let m = r.u32()?;
        let c = r.u32()?;
        let k = r.u32()?;
        let cw = r.u32()?;
        if c == 0 || k == 0 || cw == 0 || m == 0 || c.checked_mul(cw).is_none_or(|w| w > dim) {
            return Err(Error::Consistency(format!("header D={dim} M={m} C={c} K={k} CW={cw}")));
        }
        let ckm = c
            .checked_mul(k)
            .and_then(|v| v.checked_mul(m))
            .ok_or_else(|| Error::Consistency("C·K·M overflows".into()))?;
        let index_bytes = c.saturating_mul(cw + 2 * (k - 1)).saturating_mul(4);
        if r.remaining() < index_bytes {
            return Err(Error::Format(format!("truncated: {} bytes left for {index_bytes} bytes of trees", r.remaining())));
        }
        let subspaces = (0..c)
            .map(|_| (0..cw).map(|_| r.u32()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut trees = Vec::with_capacity(c);
        for _ in 0..c {
            let split = (0..k - 1).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let thr = (0..k - 1).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            trees.push((split, thr));
        }
        let lut_bytes = ckm.saturating_mul(4).saturating_add(1);
        let quant_bytes = [0, c.saturating_mul(4).saturating_add(ckm)];
        let tail_bytes = [0, 1, c.saturating_mul(k).saturating_mul(cw).saturating_mul(4).saturating_add(1)];
        let fits = quant_bytes
            .iter()
            .any(|q| tail_bytes.iter().any(|t| lut_bytes.saturating_add(*q).saturating_add(*t) == r.remaining()));
        if !fits {
            return Err(Error::Consistency(format!(
                "{} bytes after the trees do not fit C·K·M = {ckm} LUT entries",
                r.remaining()
            )));
        }
        let lut_vals = (0..ckm).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let quant = match r.u8()? {
            0 => None,
            1 => {
                let scales = (0..c).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                let q = r.take(ckm)?.iter().map(|&b| b as i8).collect();
                Some(QuantLut::new(c, k, m, scales, q)?)
            }
            f => return Err(Error::Format(format!("quantized-section flag {f}"))),
        };
        let tag = if r.remaining() == 0 { TAG_TREES } else { r.u8()? };
        let encoder = match tag {
            TAG_TREES => {
                let trees = trees
                    .into_iter()
                    .map(|(s, t)| HashTree::new(s, t))
                    .collect::<Result<Vec<_>>>()?;
                Encoder::Trees(HashForest::new(dim, subspaces, trees)?)
            }
            TAG_PROTOTYPES => {
                let protos = (0..c * k * cw).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                Encoder::Prototypes(PrototypeBook::new(dim, k, subspaces, protos)?)
            }
            t => return Err(Error::Format(format!("unknown encoder tag {t}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::Consistency(format!("{} trailing bytes", r.remaining())));
        }
        let lut = LookupTable::new(c, k, m, lut_vals)?;
        Self::new(encoder, lut, quant)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub(crate) fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
}

//! Cycle-level model of the table-lookup matmul accelerator.
//!
//! One unit has `n_enc` tree encoders that start one traversal per cycle,
//! each spending one cycle per tree level, so together they deliver one
//! encoding per cycle once the pipeline is full. Every encoding (one row,
//! one codebook) is broadcast to the decoders; decoder `d` owns output
//! column `d` of the current tile and does one INT8 lookup plus INT24
//! accumulation per cycle. After the last codebook of a row the decoder
//! results are latched into an output register and leave through a
//! `w_dec`-wide multiplexer in decoder order while the next row accumulates.
//! A row cannot latch while the previous one is still draining; the stall
//! propagates back to the encoders.
//!
//! Energy is counted per event: encoder busy cycles, lookups and
//! accumulations, scaled by an overhead factor for unitemised power.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pq::EncodingMatrix;
use crate::quantsim::{check_codes, Acc24, QuantLut};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelConfig {
    pub n_enc: usize,
    /// Decoders per unit.
    pub n_dec: usize,
    /// Codebooks a decoder's LUT holds.
    pub c_dec: usize,
    /// Results the output mux retires per cycle.
    pub w_dec: usize,
    pub k: usize,
    pub cw: usize,
    pub clock_hz: f64,
    pub units: usize,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self {
            n_enc: 4,
            n_dec: 64,
            c_dec: 16,
            w_dec: 8,
            k: 16,
            cw: 9,
            clock_hz: 624e6,
            units: 1,
        }
    }
}

impl AccelConfig {
    /// Four default units: 256 decoders in total, 32 results per cycle.
    pub fn four_unit_system() -> Self {
        Self {
            units: 4,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.k.trailing_zeros() as usize
    }

    pub fn total_decoders(&self) -> usize {
        self.n_dec * self.units
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || !self.k.is_power_of_two() {
            return Err(Error::Config(format!("K = {} must be a power of two ≥ 2", self.k)));
        }
        if self.n_enc == 0 || self.n_dec == 0 || self.c_dec == 0 || self.w_dec == 0 || self.cw == 0 || self.units == 0 {
            return Err(Error::Config("all unit counts must be at least 1".into()));
        }
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return Err(Error::Config("clock must be positive".into()));
        }
        let need = self.n_dec.div_ceil(self.c_dec);
        if self.w_dec < need {
            return Err(Error::Config(format!(
                "W_dec = {} cannot drain {} decoders within {} cycles (needs ≥ {need})",
                self.w_dec, self.n_dec, self.c_dec
            )));
        }
        Ok(())
    }

    /// Peak throughput with every decoder busy, TOp/s.
    pub fn peak_throughput_tops(&self) -> f64 {
        (self.total_decoders() * self.cw * 2) as f64 * self.clock_hz / 1e12
    }

    /// Stored LUT bytes per weight byte: `K / CW` (INT8 both sides).
    pub fn lut_to_weight_ratio(&self) -> f64 {
        self.k as f64 / self.cw as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub e_lookup_pj: f64,
    pub e_encoder_pj: f64,
    pub e_accum_pj: f64,
    pub overhead_factor: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_lookup_pj: 0.26,
            e_encoder_pj: 0.33,
            e_accum_pj: 0.030,
            overhead_factor: 1.0,
        }
    }
}

impl EnergyModel {
    pub fn with_overhead(overhead_factor: f64) -> Self {
        Self {
            overhead_factor,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.e_lookup_pj, self.e_encoder_pj, self.e_accum_pj];
        if all.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("event energies must be finite and non-negative".into()));
        }
        if !(self.overhead_factor >= 1.0 && self.overhead_factor.is_finite()) {
            return Err(Error::Config("overhead factor must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn energy_pj(&self, encoder_busy_cycles: u64, lookups: u64) -> f64 {
        (encoder_busy_cycles as f64 * self.e_encoder_pj
            + lookups as f64 * (self.e_lookup_pj + self.e_accum_pj))
            * self.overhead_factor
    }
}

/// Peak efficiency in TOp/s/W (identical to Op/pJ) with all encoders and
/// decoders busy every cycle.
pub fn peak_efficiency(cfg: &AccelConfig, em: &EnergyModel) -> f64 {
    let ops = (cfg.n_dec * cfg.cw * 2) as f64;
    let per_cycle_pj = cfg.n_enc as f64 * em.e_encoder_pj + cfg.n_dec as f64 * (em.e_lookup_pj + em.e_accum_pj);
    ops / (per_cycle_pj * em.overhead_factor)
}

/// Block of the `N × C × M` problem mapped onto one unit pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub unit: usize,
    pub rows: Range<usize>,
    pub codebooks: Range<usize>,
    pub cols: Range<usize>,
}

impl Tile {
    pub fn lookups(&self) -> u64 {
        (self.rows.len() * self.codebooks.len() * self.cols.len()) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub n_tiles: usize,
    pub d_tiles: usize,
    pub m_tiles: usize,
    /// Ordered by row block, then column block, then codebook block;
    /// dealt round-robin to units.
    pub tiles: Vec<Tile>,
    /// Depth of the adder tree combining codebook-direction partial sums.
    pub adder_stages: usize,
    /// Cycle estimate from the closed form, assuming no mux stalls.
    pub est_cycles: u64,
}

impl TilePlan {
    pub fn needs_adder(&self) -> bool {
        self.d_tiles > 1
    }

    pub fn unit_tiles(&self, unit: usize) -> impl Iterator<Item = &Tile> {
        self.tiles.iter().filter(move |t| t.unit == unit)
    }
}

fn split(len: usize, parts: usize) -> Vec<Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let size = base + usize::from(i < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

fn chunks(len: usize, width: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(width))
        .map(|i| i * width..((i + 1) * width).min(len))
        .collect()
}

/// Cycles for one tile run on its own: pipeline fill, one lookup cycle per
/// (row, codebook), final drain.
pub fn standalone_tile_cycles(cfg: &AccelConfig, tile: &Tile) -> u64 {
    let drain = tile.cols.len().div_ceil(cfg.w_dec);
    (cfg.levels() + tile.rows.len() * tile.codebooks.len() + drain) as u64
}

pub fn tile_plan(cfg: &AccelConfig, n: usize, c: usize, m: usize) -> Result<TilePlan> {
    cfg.validate()?;
    if n == 0 || c == 0 || m == 0 {
        return Err(Error::shape("problem dimensions must be at least 1"));
    }
    let col_blocks = chunks(m, cfg.n_dec);
    let cb_blocks = chunks(c, cfg.c_dec);
    let per_row_block = col_blocks.len() * cb_blocks.len();
    let n_tiles = cfg.units.div_ceil(per_row_block).clamp(1, n);
    let row_blocks = split(n, n_tiles);

    let mut tiles = Vec::with_capacity(n_tiles * per_row_block);
    for rows in &row_blocks {
        for cols in &col_blocks {
            for cbs in &cb_blocks {
                tiles.push(Tile {
                    unit: tiles.len() % cfg.units,
                    rows: rows.clone(),
                    codebooks: cbs.clone(),
                    cols: cols.clone(),
                });
            }
        }
    }
    let adder_stages = if cb_blocks.len() > 1 {
        cb_blocks.len().next_power_of_two().trailing_zeros() as usize
    } else {
        0
    };
    let mut plan = TilePlan {
        n_tiles,
        d_tiles: cb_blocks.len(),
        m_tiles: col_blocks.len(),
        tiles,
        adder_stages,
        est_cycles: 0,
    };
    plan.est_cycles = (0..cfg.units)
        .map(|u| {
            let unit: Vec<&Tile> = plan.unit_tiles(u).collect();
            if unit.is_empty() {
                return 0;
            }
            let sum: u64 = unit.iter().map(|t| standalone_tile_cycles(cfg, t)).sum();
            // back-to-back tiles share the fill and hide all but the last drain
            let hidden: u64 = unit[..unit.len() - 1]
                .iter()
                .map(|t| (cfg.levels() + t.cols.len().div_ceil(cfg.w_dec)) as u64)
                .sum();
            sum - hidden
        })
        .max()
        .unwrap_or(0)
        + adder_stages as u64;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub unit: usize,
    pub tiles: usize,
    pub cycles: u64,
    pub encodings: u64,
    pub lookups: u64,
    pub encoder_busy_cycles: u64,
    pub stall_cycles: u64,
    pub energy_pj: f64,
}

impl UnitReport {
    /// Parallel composition: cycles take the maximum, counts add up.
    pub fn merge(&self, other: &Self) -> Self {
        Self {
            unit: self.unit.min(other.unit),
            tiles: self.tiles + other.tiles,
            cycles: self.cycles.max(other.cycles),
            encodings: self.encodings + other.encodings,
            lookups: self.lookups + other.lookups,
            encoder_busy_cycles: self.encoder_busy_cycles + other.encoder_busy_cycles,
            stall_cycles: self.stall_cycles + other.stall_cycles,
            energy_pj: self.energy_pj + other.energy_pj,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n: usize,
    pub c: usize,
    pub m: usize,
    pub cycles: u64,
    pub lookups: u64,
    /// `lookups · CW · 2`.
    pub ops: u64,
    pub encodings: u64,
    pub stall_cycles: u64,
    pub adder_stages: usize,
    pub clock_hz: f64,
    pub throughput_tops: f64,
    pub peak_throughput_tops: f64,
    pub energy_pj: f64,
    pub power_mw: f64,
    pub efficiency_tops_per_w: f64,
    pub utilization: f64,
    pub lut_to_weight_ratio: f64,
    pub units: Vec<UnitReport>,
}

impl SimReport {
    pub const CSV_HEADER: &'static str = "n,c,m,units,cycles,lookups,ops,encodings,stall_cycles,adder_stages,clock_mhz,throughput_tops,peak_throughput_tops,energy_pj,power_mw,efficiency_tops_per_w,utilization,lut_to_weight_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.c,
            self.m,
            self.units.len(),
            self.cycles,
            self.lookups,
            self.ops,
            self.encodings,
            self.stall_cycles,
            self.adder_stages,
            self.clock_hz / 1e6,
            self.throughput_tops,
            self.peak_throughput_tops,
            self.energy_pj,
            self.power_mw,
            self.efficiency_tops_per_w,
            self.utilization,
            self.lut_to_weight_ratio,
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// What one encoder is doing during a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderState {
    Idle,
    /// Comparing at this tree level.
    Level(usize),
    /// Traversal done, waiting for the decoders.
    Holding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleTrace {
    pub unit: usize,
    pub cycle: u64,
    pub encoders: Vec<EncoderState>,
    /// Decoders performing a lookup this cycle (always the lowest indices).
    pub active_decoders: usize,
    pub n_dec: usize,
    /// Row and column range leaving through the mux this cycle.
    pub retired: Option<(usize, Range<usize>)>,
}

impl CycleTrace {
    pub const CSV_HEADER: &'static str = "unit,cycle,encoders,decoder_valid,retired";

    pub fn csv_line(&self) -> String {
        let mut enc = String::new();
        for (i, e) in self.encoders.iter().enumerate() {
            if i > 0 {
                enc.push(' ');
            }
            match e {
                EncoderState::Idle => enc.push('-'),
                EncoderState::Level(l) => write!(enc, "L{l}").unwrap(),
                EncoderState::Holding => enc.push('H'),
            }
        }
        let valid: String = (0..self.n_dec)
            .map(|d| if d < self.active_decoders { '1' } else { '0' })
            .collect();
        let retired = match &self.retired {
            Some((row, cols)) => format!("{row}:{}-{}", cols.start, cols.end - 1),
            None => String::new(),
        };
        format!("{},{},{},{},{}", self.unit, self.cycle, enc, valid, retired)
    }
}

/// Operands for the functional (bit-exact) mode.
#[derive(Debug, Clone, Copy)]
pub struct Functional<'a> {
    pub codes: &'a EncodingMatrix,
    pub qlut: &'a QuantLut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub report: SimReport,
    /// INT24 results, present in functional mode.
    pub ints: Option<Matrix<i32>>,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    tile: usize,
    row: usize,
    codebook: usize,
    last_of_row: bool,
}

#[derive(Debug, Clone, Copy)]
enum Encoder {
    Idle,
    Busy { job: usize, level: usize },
    Holding { job: usize },
}

struct OutReg {
    tile: usize,
    row: usize,
    values: Vec<Acc24>,
    drained: usize,
}

struct UnitSim<'a> {
    cfg: &'a AccelConfig,
    tiles: Vec<&'a Tile>,
    jobs: Vec<Job>,
}

impl<'a> UnitSim<'a> {
    fn new(cfg: &'a AccelConfig, tiles: Vec<&'a Tile>) -> Self {
        let mut jobs = Vec::new();
        for (ti, t) in tiles.iter().enumerate() {
            for row in t.rows.clone() {
                for cb in t.codebooks.clone() {
                    jobs.push(Job {
                        tile: ti,
                        row,
                        codebook: cb,
                        last_of_row: cb + 1 == t.codebooks.end,
                    });
                }
            }
        }
        Self { cfg, tiles, jobs }
    }

    /// Runs to completion. `retire` receives every drained slice of results.
    fn run(
        &self,
        unit: usize,
        functional: Option<Functional>,
        mut retire: impl FnMut(&Tile, usize, usize, &[Acc24]),
        trace: &mut Option<&mut dyn FnMut(&CycleTrace)>,
    ) -> UnitReport {
        let cfg = self.cfg;
        let levels = cfg.levels();
        let mut encoders = vec![Encoder::Idle; cfg.n_enc];
        let mut next_issue = 0usize;
        let mut next_consume = 0usize;
        let mut acc: Vec<Acc24> = vec![Acc24::new(); cfg.n_dec];
        let mut out_reg: Option<OutReg> = None;

        let mut cycle = 0u64;
        let mut lookups = 0u64;
        let mut busy = 0u64;
        let mut stalls = 0u64;
        let mut last_active = None;

        while next_consume < self.jobs.len() || out_reg.is_some() {
            let mut retired = None;
            let mut active = 0;

            // mux: results latched in an earlier cycle leave w_dec at a time
            if let Some(reg) = out_reg.as_mut() {
                let tile = self.tiles[reg.tile];
                let start = reg.drained;
                let end = (start + cfg.w_dec).min(reg.values.len());
                retire(tile, reg.row, start, &reg.values[start..end]);
                retired = Some((reg.row, tile.cols.start + start..tile.cols.start + end));
                reg.drained = end;
                if end == reg.values.len() {
                    out_reg = None;
                }
            }

            // decoders: consume the next encoding if its encoder holds it
            let holder = encoders
                .iter()
                .position(|e| matches!(e, Encoder::Holding { job } if *job == next_consume));
            if let Some(e) = holder {
                let job = self.jobs[next_consume];
                if job.last_of_row && out_reg.is_some() {
                    stalls += 1;
                } else {
                    let tile = self.tiles[job.tile];
                    active = tile.cols.len();
                    if job.codebook == tile.codebooks.start {
                        acc[..active].iter_mut().for_each(|a| *a = Acc24::new());
                    }
                    if let Some(f) = functional {
                        let entry = f.qlut.entry(job.codebook, f.codes.get(job.row, job.codebook));
                        for (a, &q) in acc[..active].iter_mut().zip(&entry[tile.cols.clone()]) {
                            a.add(q as i32);
                        }
                    }
                    lookups += active as u64;
                    encoders[e] = Encoder::Idle;
                    next_consume += 1;
                    if job.last_of_row {
                        out_reg = Some(OutReg {
                            tile: job.tile,
                            row: job.row,
                            values: acc[..active].to_vec(),
                            drained: 0,
                        });
                    }
                }
            }

            // one new traversal per cycle on a free encoder
            if next_issue < self.jobs.len() {
                if let Some(e) = encoders.iter().position(|e| matches!(e, Encoder::Idle)) {
                    encoders[e] = Encoder::Busy { job: next_issue, level: 0 };
                    next_issue += 1;
                }
            }

            let snapshot: Option<Vec<EncoderState>> = trace.as_ref().map(|_| {
                encoders
                    .iter()
                    .map(|e| match *e {
                        Encoder::Idle => EncoderState::Idle,
                        Encoder::Busy { level, .. } => EncoderState::Level(level),
                        Encoder::Holding { .. } => EncoderState::Holding,
                    })
                    .collect()
            });

            // each busy encoder resolves one tree level
            for e in encoders.iter_mut() {
                if let Encoder::Busy { job, level } = *e {
                    busy += 1;
                    *e = if level + 1 == levels {
                        Encoder::Holding { job }
                    } else {
                        Encoder::Busy { job, level: level + 1 }
                    };
                }
            }

            if active > 0 || retired.is_some() || busy > 0 {
                last_active = Some(cycle);
            }
            if let (Some(cb), Some(encoders)) = (trace.as_mut(), snapshot) {
                cb(&CycleTrace {
                    unit,
                    cycle,
                    encoders,
                    active_decoders: active,
                    n_dec: cfg.n_dec,
                    retired,
                });
            }
            cycle += 1;
        }

        UnitReport {
            unit,
            tiles: self.tiles.len(),
            cycles: last_active.map_or(0, |c| c + 1),
            encodings: self.jobs.len() as u64,
            lookups,
            encoder_busy_cycles: busy,
            stall_cycles: stalls,
            energy_pj: 0.0,
        }
    }
}

/// Simulates `N × C` encodings against `M` output columns. With
/// `functional` operands the INT24 results are computed along the way.
pub fn simulate_matmul(
    cfg: &AccelConfig,
    em: &EnergyModel,
    n: usize,
    c: usize,
    m: usize,
    functional: Option<Functional>,
) -> Result<SimOutput> {
    simulate_matmul_traced(cfg, em, n, c, m, functional, None)
}

pub fn simulate_matmul_traced(
    cfg: &AccelConfig,
    em: &EnergyModel,
    n: usize,
    c: usize,
    m: usize,
    functional: Option<Functional>,
    mut trace: Option<&mut dyn FnMut(&CycleTrace)>,
) -> Result<SimOutput> {
    em.validate()?;
    let plan = tile_plan(cfg, n, c, m)?;
    if let Some(f) = functional {
        check_codes(f.codes, f.qlut)?;
        if f.codes.n() != n || f.codes.c() != c || f.qlut.m() != m {
            return Err(Error::shape(format!(
                "operands are {}x{} codes and {} columns, simulation is {n}x{c}x{m}",
                f.codes.n(),
                f.codes.c(),
                f.qlut.m()
            )));
        }
        if f.qlut.k() != cfg.k {
            return Err(Error::shape(format!("LUT has K = {}, accelerator K = {}", f.qlut.k(), cfg.k)));
        }
    }

    let mut partial: Option<Vec<Acc24>> = functional.map(|_| vec![Acc24::new(); n * m]);
    let mut units = Vec::with_capacity(cfg.units);
    for u in 0..cfg.units {
        let tiles: Vec<&Tile> = plan.unit_tiles(u).collect();
        let sim = UnitSim::new(cfg, tiles);
        let mut report = sim.run(
            u,
            functional,
            |tile, row, offset, vals| {
                if let Some(p) = partial.as_mut() {
                    for (i, v) in vals.iter().enumerate() {
                        // inter-tile adder for codebook-direction partial sums
                        p[row * m + tile.cols.start + offset + i].absorb(v);
                    }
                }
            },
            &mut trace,
        );
        report.energy_pj = em.energy_pj(report.encoder_busy_cycles, report.lookups);
        units.push(report);
    }

    let total = units
        .iter()
        .skip(1)
        .fold(units[0].clone(), |a, b| a.merge(b));
    let cycles = total.cycles + plan.adder_stages as u64;
    let ops = total.lookups * (cfg.cw as u64) * 2;
    let seconds = cycles as f64 / cfg.clock_hz;
    let throughput_tops = ops as f64 / seconds / 1e12;
    let power_w = total.energy_pj * 1e-12 / seconds;
    let report = SimReport {
        n,
        c,
        m,
        cycles,
        lookups: total.lookups,
        ops,
        encodings: total.encodings,
        stall_cycles: total.stall_cycles,
        adder_stages: plan.adder_stages,
        clock_hz: cfg.clock_hz,
        throughput_tops,
        peak_throughput_tops: cfg.peak_throughput_tops(),
        energy_pj: total.energy_pj,
        power_mw: power_w * 1e3,
        efficiency_tops_per_w: throughput_tops / power_w,
        utilization: total.lookups as f64 / (cycles as f64 * cfg.total_decoders() as f64),
        lut_to_weight_ratio: cfg.lut_to_weight_ratio(),
        units,
    };

    let (ints, saturated) = match partial {
        Some(p) => {
            let saturated = p.iter().any(|a| a.saturated());
            (Some(Matrix::from_vec(n, m, p.iter().map(|a| a.value()).collect())?), saturated)
        }
        None => (None, false),
    };
    Ok(SimOutput {
        report,
        ints,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantsim::decode_quantized;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_operands(n: usize, c: usize, k: usize, m: usize, seed: u64) -> (EncodingMatrix, QuantLut) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = EncodingMatrix::new(n, c, k, (0..n * c).map(|_| rng.random_range(0..k as u32)).collect()).unwrap();
        let q = (0..c * k * m).map(|_| rng.random_range(-127..=127i8)).collect();
        (codes, QuantLut::new(c, k, m, vec![0.01; c], q).unwrap())
    }

    #[test]
    fn default_config_is_valid() {
        AccelConfig::default().validate().unwrap();
        AccelConfig::four_unit_system().validate().unwrap();
    }

    #[test]
    fn mux_invariant_enforced() {
        let cfg = AccelConfig { w_dec: 3, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = AccelConfig { k: 12, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(simulate_matmul(&AccelConfig { w_dec: 3, ..Default::default() }, &EnergyModel::default(), 1, 1, 1, None).is_err());
    }

    #[test]
    fn single_row_pipeline_arithmetic() {
        let out = simulate_matmul(&AccelConfig::default(), &EnergyModel::default(), 1, 16, 64, None).unwrap();
        assert_eq!(out.report.cycles, 4 + 16 + 8);
        assert_eq!(out.report.lookups, 16 * 64);
        assert_eq!(out.report.ops, 16 * 64 * 18);
    }

    #[test]
    fn steady_state_uses_every_decoder() {
        let cfg = AccelConfig::default();
        let mut lines = Vec::new();
        let mut cb = |t: &CycleTrace| lines.push(t.clone());
        simulate_matmul_traced(&cfg, &EnergyModel::default(), 20, 16, 64, None, Some(&mut cb)).unwrap();
        let fill = cfg.levels();
        for t in &lines[fill..fill + 20 * 16] {
            assert_eq!(t.active_decoders, 64, "cycle {}", t.cycle);
        }
        // staggered encoders: all four busy once the pipeline is full
        assert!(lines[10].encoders.iter().all(|e| matches!(e, EncoderState::Level(_))));
        assert_eq!(lines[0].encoders[0], EncoderState::Level(0));
    }

    #[test]
    fn short_windows_stall_on_the_mux() {
        // C = 2 cycles per row but 8 cycles to drain 64 results
        let out = simulate_matmul(&AccelConfig::default(), &EnergyModel::default(), 10, 2, 64, None).unwrap();
        assert!(out.report.stall_cycles > 0);
        assert_eq!(out.report.cycles, 4 + 2 + 10 * 8);
    }

    #[test]
    fn energy_scales_with_work() {
        let cfg = AccelConfig::default();
        let em = EnergyModel::default();
        let a = simulate_matmul(&cfg, &em, 1000, 16, 64, None).unwrap().report;
        let b = simulate_matmul(&cfg, &em, 2000, 16, 64, None).unwrap().report;
        let ratio = b.energy_pj / a.energy_pj;
        assert!((ratio - 2.0).abs() < 1e-3, "{ratio}");
        assert!((b.cycles as f64 / a.cycles as f64 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn throughput_and_efficiency_identities() {
        let cfg = AccelConfig::four_unit_system();
        let em = EnergyModel::with_overhead(1.2);
        let r = simulate_matmul(&cfg, &em, 300, 20, 200, None).unwrap().report;
        let expect = r.ops as f64 / r.cycles as f64 * cfg.clock_hz / 1e12;
        assert!((r.throughput_tops - expect).abs() <= 1e-9 * expect);
        let eff = r.ops as f64 / r.energy_pj;
        assert!((r.efficiency_tops_per_w - eff).abs() <= 1e-9 * eff);
        assert!(r.utilization > 0.0 && r.utilization <= 1.0);
    }

    #[test]
    fn peak_efficiency_closed_form() {
        let cfg = AccelConfig::default();
        let e = 0.5;
        let em = EnergyModel { e_lookup_pj: e, e_encoder_pj: e, e_accum_pj: e, overhead_factor: 1.0 };
        let hand = (64.0 * 9.0 * 2.0) / (4.0 * e + 64.0 * 2.0 * e);
        assert!((peak_efficiency(&cfg, &em) - hand).abs() < 1e-12);
        let eff = peak_efficiency(&cfg, &EnergyModel::default());
        assert!((eff - 1152.0 / 19.88).abs() < 1e-9);
    }

    #[test]
    fn plan_single_tile() {
        let plan = tile_plan(&AccelConfig::default(), 100, 16, 64).unwrap();
        assert_eq!(plan.tiles.len(), 1);
        assert!(!plan.needs_adder());
        assert_eq!(plan.adder_stages, 0);
    }

    #[test]
    fn plan_codebook_split_needs_adder() {
        let plan = tile_plan(&AccelConfig::default(), 100, 32, 64).unwrap();
        assert_eq!(plan.d_tiles, 2);
        assert_eq!(plan.tiles.len(), 2);
        assert!(plan.needs_adder());
        assert_eq!(plan.adder_stages, 1);
    }

    #[test]
    fn plan_covers_problem_exactly() {
        let cfg = AccelConfig { units: 3, ..Default::default() };
        let plan = tile_plan(&cfg, 37, 40, 150).unwrap();
        let mut seen = vec![0u8; 37 * 40 * 150];
        for t in &plan.tiles {
            for r in t.rows.clone() {
                for c in t.codebooks.clone() {
                    for m in t.cols.clone() {
                        seen[(r * 40 + c) * 150 + m] += 1;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn tiled_cycles_compose_with_overlap() {
        let cfg = AccelConfig::default();
        for (n, c, m) in [(64, 32, 128), (40, 48, 64), (16, 16, 192)] {
            let plan = tile_plan(&cfg, n, c, m).unwrap();
            let sim = simulate_matmul(&cfg, &EnergyModel::default(), n, c, m, None).unwrap();
            assert_eq!(sim.report.cycles, plan.est_cycles, "{n}x{c}x{m}");
            let standalone: u64 = plan.tiles.iter().map(|t| standalone_tile_cycles(&cfg, t)).sum();
            let overlap: u64 = plan.tiles[..plan.tiles.len() - 1]
                .iter()
                .map(|t| (cfg.levels() + t.cols.len().div_ceil(cfg.w_dec)) as u64)
                .sum();
            assert_eq!(sim.report.cycles, standalone - overlap + plan.adder_stages as u64);
            // each tile alone matches its standalone formula
            for t in &plan.tiles {
                let alone = simulate_matmul(&cfg, &EnergyModel::default(), t.rows.len(), t.codebooks.len(), t.cols.len(), None).unwrap();
                assert_eq!(alone.report.cycles, standalone_tile_cycles(&cfg, t));
            }
        }
    }

    #[test]
    fn functional_mode_matches_quantsim() {
        for (seed, (n, c, m, units)) in [(5, 16, 64, 1), (9, 40, 100, 1), (7, 33, 300, 4), (1, 1, 1, 2)].into_iter().enumerate() {
            let cfg = AccelConfig { units, ..Default::default() };
            let (codes, qlut) = random_operands(n, c, 16, m, seed as u64);
            let sim = simulate_matmul(&cfg, &EnergyModel::default(), n, c, m, Some(Functional { codes: &codes, qlut: &qlut })).unwrap();
            let reference = decode_quantized(&codes, &qlut).unwrap();
            assert_eq!(sim.ints.unwrap(), reference.ints);
            assert!(!sim.saturated);
        }
    }

    #[test]
    fn merge_is_associative() {
        let r = |u, c, l| UnitReport { unit: u, tiles: 1, cycles: c, encodings: l, lookups: l * 3, encoder_busy_cycles: l, stall_cycles: 0, energy_pj: l as f64 * 0.5 };
        let (a, b, c) = (r(0, 10, 4), r(1, 30, 7), r(2, 20, 9));
        assert_eq!(a.merge(&b).merge(&c), a.merge(&b.merge(&c)));
    }

    #[test]
    fn trace_lines_are_csv() {
        let cfg = AccelConfig::default();
        let mut lines = Vec::new();
        let mut cb = |t: &CycleTrace| lines.push(t.csv_line());
        simulate_matmul_traced(&cfg, &EnergyModel::default(), 1, 16, 64, None, Some(&mut cb)).unwrap();
        assert_eq!(lines.len(), 28);
        assert!(lines[0].starts_with("0,0,L0 - - -,"));
        assert!(lines[27].ends_with(",0:56-63"));
        assert!(lines[10].contains(&"1".repeat(64)));
    }
}

use std::time::Instant;

use maddness::im2col::rows_to_tensor;
use maddness::maddness::{amm_maddness, fit, ForestParams};
use maddness::pq::{build_lut, decode_accumulate, encode_pq, learn_prototypes, KMeansParams};
use maddness::quantsim::{decode_quantized, quantize_lut};
use maddness::{encode_tree, frobenius_error, im2col, matmul_exact, synth, Error, Matrix};

use crate::{conv_approx, conv_case, conv_exact, sim_cost, Suite};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: &'static str,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub c: usize,
    pub k: usize,
    pub rel_frobenius: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub sim_cycles: Option<u64>,
    pub sim_energy_pj: Option<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BenchRow {
    pub const HEADER: &'static str = "method,n,d,m,c,k,rel_frobenius,wall_time_s,sim_cycles,sim_energy_pj";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.n,
            self.d,
            self.m,
            self.c,
            self.k,
            opt(self.rel_frobenius),
            opt(self.wall_time_s),
            opt(self.sim_cycles),
            opt(self.sim_energy_pj),
        )
    }
}

pub fn to_csv(rows: &[(u64, BenchRow)]) -> String {
    let mut out = format!("seed,{}\n", BenchRow::HEADER);
    for (seed, r) in rows {
        out.push_str(&format!("{seed},{}\n", r.csv()));
    }
    out
}

/// Flattened result plus the matching reference, for one method.
/// Output, optional simulated (cycles, energy), optional wall time.
type Timed = (Matrix<f64>, Option<(u64, f64)>, Option<f64>);
type Operands<'g> = (Matrix<f64>, Matrix<f64>, Matrix<f64>, Matrix<f64>, &'g [(usize, usize)]);
type Eval<'a> = Box<dyn FnMut() -> Result<(Matrix<f64>, Option<(u64, f64)>), Error> + 'a>;

struct Timer(bool);

impl Timer {
    fn time(&self, f: &mut Eval) -> Result<Timed, Error> {
        let start = Instant::now();
        let (m, sim) = f()?;
        Ok((m, sim, self.0.then(|| start.elapsed().as_secs_f64())))
    }
}

const GAUSSIAN_GRID: [(usize, usize); 7] = [(1, 16), (4, 16), (16, 4), (16, 8), (16, 16), (32, 16), (64, 16)];
const CONV_GRID: [(usize, usize); 5] = [(1, 16), (3, 16), (9, 4), (9, 8), (9, 16)];

pub fn run(suite: Suite, seeds: u64, timing: bool) -> Result<Vec<(u64, BenchRow)>, Error> {
    let timer = Timer(timing);
    let mut rows = Vec::new();
    for seed in 0..seeds {
        // training rows come from an independent draw
        let (train, a, b, reference, grid): Operands = match suite {
            Suite::Gaussian => {
                let a = synth::gaussian(512, 64, seed);
                let b = synth::gaussian(64, 32, seed.wrapping_add(2000));
                let exact = matmul_exact(&a, &b)?;
                (synth::gaussian(512, 64, seed.wrapping_add(1000)), a, b, exact, &GAUSSIAN_GRID)
            }
            Suite::Conv => {
                let (x, w) = conv_case(seed);
                let (cols, wm, direct) = conv_exact(&x, &w)?;
                let (xt, _) = conv_case(seed.wrapping_add(1000));
                (im2col(&xt, 3, 3, 1, 1)?, cols, wm, direct, &CONV_GRID)
            }
        };
        let (n, d, m) = (a.rows(), a.cols(), b.cols());
        let conv = matches!(suite, Suite::Conv);
        let flatten = |out: Matrix<f64>| -> Result<Matrix<f64>, Error> {
            if conv {
                let t = rows_to_tensor(&out, 4, 12, 12)?;
                Matrix::from_vec(1, t.len(), t.as_slice().to_vec())
            } else {
                Ok(out)
            }
        };

        let mut push = |method: &'static str, c: usize, k: usize, mut eval: Eval| -> Result<(), Error> {
            let (out, sim, wall) = timer.time(&mut eval)?;
            let rel = frobenius_error(&out, &reference)?.rel_frobenius;
            rows.push((
                seed,
                BenchRow {
                    method,
                    n,
                    d,
                    m,
                    c,
                    k,
                    rel_frobenius: Some(rel),
                    wall_time_s: wall,
                    sim_cycles: sim.map(|s| s.0),
                    sim_energy_pj: sim.map(|s| s.1),
                },
            ));
            Ok(())
        };

        push("exact", d, 0, Box::new(|| Ok((flatten(matmul_exact(&a, &b)?)?, None))))?;
        for &(c, k) in grid {
            if d % c != 0 {
                continue;
            }
            push(
                "pq",
                c,
                k,
                Box::new(|| {
                    let book = learn_prototypes(&train, c, k, &KMeansParams { seed, ..Default::default() })?;
                    let out = decode_accumulate(&encode_pq(&a, &book)?, &build_lut(&b, &book)?)?;
                    Ok((flatten(out)?, None))
                }),
            )?;
            let (forest, lut) = fit(&train, &b, c, k, &ForestParams { seed, ..Default::default() })?;
            push(
                "maddness",
                c,
                k,
                Box::new(|| {
                    let out = if conv {
                        let (x, _) = conv_case(seed);
                        conv_approx(&x, &forest, &lut)?
                    } else {
                        amm_maddness(&a, &forest, &lut)?
                    };
                    Ok((out, None))
                }),
            )?;
            push(
                "maddness-int8",
                c,
                k,
                Box::new(|| {
                    let q = quantize_lut(&lut)?;
                    let codes = encode_tree(&a, &forest)?;
                    let out = decode_quantized(&codes, &q)?.dequant;
                    let sim = sim_cost(n, c, k, d / c, m)?;
                    Ok((flatten(out)?, Some((sim.cycles, sim.energy_pj))))
                }),
            )?;
        }
    }
    Ok(rows)
}

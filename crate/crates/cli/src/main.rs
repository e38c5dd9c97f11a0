use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use maddness::accel::{simulate_matmul, simulate_matmul_traced, AccelConfig, CycleTrace, EnergyModel, Functional, SimReport};
use maddness::difftree::{finetune_toy, gradcheck, gradcheck_instance, Dataset, FinetuneConfig, SoftParams, Target};
use maddness::im2col::weights_to_matrix;
use maddness::io::{load_f64, write_matrix, MatrixFile};
use maddness::maddness::{amm_conv2d, learn_forest, ForestParams};
use maddness::pq::{build_lut, decode_accumulate, learn_prototypes, KMeansParams};
use maddness::quantsim::{decode_quantized, dequant_error_bound, quantize_lut, quantize_lut_shared};
use maddness::{conv2d_direct, frobenius_error, im2col, matmul_exact, synth, Encoder, Error, Matrix, ModelBundle};

mod bench;

#[derive(Parser)]
#[command(name = "maddness", version, about = "Lookup-table approximate matrix multiplication")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pq,
    Maddness,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Gaussian,
    Blobs,
    Product,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    F64,
    F32,
    I8,
    I32,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Suite {
    Gaussian,
    Conv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded synthetic matrix.
    Gen {
        #[arg(long, value_enum, default_value = "gaussian")]
        kind: GenKind,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Blob count, or prototypes per subspace for `product`.
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// Subspaces for `product`.
        #[arg(long, default_value_t = 1)]
        c: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Blob labels as CSV.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Convert between CSV and MADM matrix files.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: Dtype,
    },
    /// Learn an encoder on training rows and build its LUT against B.
    Train {
        train: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        c: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, value_enum, default_value = "maddness")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Learn trees on this many sampled rows.
        #[arg(long)]
        sample_rows: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Approximate A·B with a trained model.
    Matmul {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        a: PathBuf,
        /// Exact weights, for the error report.
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        quantized: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Add an INT8 LUT to a model.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        /// One scale for all codebooks.
        #[arg(long)]
        shared: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cycle-level accelerator simulation.
    Simulate {
        #[arg(long, default_value_t = 64)]
        n_dec: usize,
        #[arg(long, default_value_t = 16)]
        c_dec: usize,
        #[arg(long, default_value_t = 8)]
        w_dec: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 9)]
        cw: usize,
        #[arg(long, default_value_t = 624.0)]
        clock_mhz: f64,
        #[arg(long, default_value_t = 1)]
        units: usize,
        #[arg(long, default_value_t = 4)]
        n_enc: usize,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        /// Input width; codebooks are `ceil(d / cw)`.
        #[arg(long, default_value_t = 144)]
        d: usize,
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        overhead: f64,
        /// Per-cycle trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Quantized model and input for a bit-exact functional run.
        #[arg(long, requires = "a")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        a: Option<PathBuf>,
        /// INT24 results of the functional run.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Error and cost sweep over C and K.
    Bench {
        #[arg(long, value_enum, default_value = "gaussian")]
        suite: Suite,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Fill the wall_time_s column (makes output run-dependent).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol_theta: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol_lut: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient fine-tuning of a tree model towards A·B.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

pub struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn check(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }

    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 4,
            Error::Numerical(_) => 3,
            _ => 2,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 4, msg: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;
/// Unfolded input, weight matrix, exact product.
pub(crate) type ConvOperands = (Matrix<f64>, Matrix<f64>, Matrix<f64>);

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure { code: 4, msg: format!("{}: {e}", path.display()) })
}

fn emit(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => write_text(p, text),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn load(path: &Path) -> Result<Matrix<f64>, Failure> {
    load_f64(path).map_err(|e| Failure::from(e).with_path(path))
}

impl Failure {
    fn with_path(mut self, path: &Path) -> Self {
        self.msg = format!("{}: {}", path.display(), self.msg);
        self
    }
}

fn load_model(path: &Path) -> Result<ModelBundle, Failure> {
    ModelBundle::load(path).map_err(|e| Failure::from(e).with_path(path))
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(kind: GenKind, rows: usize, cols: usize, k: usize, c: usize, seed: u64, out: &Path, labels: Option<&Path>) -> CmdResult {
    let a = match kind {
        GenKind::Gaussian => synth::gaussian(rows, cols, seed),
        GenKind::Blobs => {
            if k == 0 || (k.next_power_of_two().trailing_zeros() as usize) > cols {
                return Err(Failure::usage(format!("{k} blobs need at least log2({k}) columns")));
            }
            let (a, l) = synth::blobs(rows, cols, k, 3.0, 0.3, seed);
            if let Some(p) = labels {
                let text: String = l.iter().map(|v| format!("{v}\n")).collect();
                write_text(p, &text)?;
            }
            a
        }
        GenKind::Product => {
            if c == 0 || !cols.is_multiple_of(c) || !k.is_power_of_two() || k.trailing_zeros() as usize > cols / c {
                return Err(Failure::usage("product sets need cols divisible by C and log2 K ≤ cols / C"));
            }
            let cw = cols / c;
            let protos = synth::separable_prototypes(c, k, cw, seed);
            synth::product_set_rows(&protos, c, k, cw, rows, seed.wrapping_add(1)).0
        }
    };
    write_matrix(out, &MatrixFile::F64(a))?;
    Ok(())
}

fn cmd_convert(input: &Path, output: &Path, dtype: Dtype) -> CmdResult {
    let m = load(input)?;
    if output.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return write_text(output, &maddness::io::to_csv(&m));
    }
    let out = match dtype {
        Dtype::F64 => MatrixFile::F64(m),
        Dtype::F32 => MatrixFile::F32(m.to_f32()),
        Dtype::I8 => MatrixFile::I8(m.map(|v| v.round().clamp(-128.0, 127.0) as i8)),
        Dtype::I32 => MatrixFile::I32(m.map(|v| v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)),
    };
    write_matrix(output, &out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(train: &Path, weights: &Path, c: usize, k: usize, method: Method, seed: u64, sample_rows: Option<usize>, out: &Path) -> CmdResult {
    let a = load(train)?;
    let b = load(weights)?;
    if b.rows() != a.cols() {
        return Err(Failure::usage(format!("A has {} columns but B has {} rows", a.cols(), b.rows())));
    }
    let bundle = match method {
        Method::Pq => {
            let book = learn_prototypes(&a, c, k, &KMeansParams { seed, ..Default::default() })?;
            let lut = build_lut(&b, &book)?;
            ModelBundle::new(Encoder::Prototypes(book), lut, None)?
        }
        Method::Maddness => {
            let (forest, book) = learn_forest(&a, c, k, &ForestParams { seed, sample_rows })?;
            let lut = build_lut(&b, &book)?;
            ModelBundle::new(Encoder::Trees(forest), lut, None)?
        }
    };
    bundle.save(out)?;
    Ok(())
}

fn cmd_matmul(model: &Path, a: &Path, b: Option<&Path>, quantized: bool, out: &Path, report: Option<&Path>) -> CmdResult {
    let bundle = load_model(model)?;
    let a_m = load(a)?;
    if a_m.cols() != bundle.dim() {
        return Err(Failure::usage(format!("A has {} columns, model expects {}", a_m.cols(), bundle.dim())));
    }
    let codes = bundle.encoder().encode(&a_m)?;
    let approx = if quantized {
        let q = bundle.quant().ok_or_else(|| Failure::usage("model has no quantized LUT; run `quantize` first"))?;
        decode_quantized(&codes, q)?.dequant
    } else {
        decode_accumulate(&codes, bundle.lut())?
    };
    let rel = match b {
        Some(bp) => {
            let b_m = load(bp)?;
            let exact = matmul_exact(&a_m, &b_m)?;
            let rep = frobenius_error(&approx, &exact)?;
            Some(rep.rel_frobenius)
        }
        None => None,
    };
    write_matrix(out, &MatrixFile::F64(approx))?;
    let method = match (bundle.encoder(), quantized) {
        (Encoder::Prototypes(_), _) => "pq",
        (Encoder::Trees(_), false) => "maddness",
        (Encoder::Trees(_), true) => "maddness-int8",
    };
    let row = bench::BenchRow {
        method,
        n: a_m.rows(),
        d: a_m.cols(),
        m: bundle.m(),
        c: bundle.encoder().c(),
        k: bundle.encoder().k(),
        rel_frobenius: rel,
        wall_time_s: None,
        sim_cycles: None,
        sim_energy_pj: None,
    };
    emit(report, &format!("{}\n{}\n", bench::BenchRow::HEADER, row.csv()))
}

fn cmd_quantize(model: &Path, shared: bool, out: &Path, report: Option<&Path>) -> CmdResult {
    let bundle = load_model(model)?;
    let q = if shared { quantize_lut_shared(bundle.lut())? } else { quantize_lut(bundle.lut())? };
    let bundle = bundle.with_quant(q)?;
    bundle.save(out)?;
    let q = bundle.quant().expect("just attached");
    let mut text = String::from("codebook,scale,half_step\n");
    for (c, s) in q.scales().iter().enumerate() {
        writeln!(text, "{c},{s},{}", s / 2.0).unwrap();
    }
    writeln!(text, "bound,,{}", dequant_error_bound(q)).unwrap();
    emit(report, &text)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cfg: AccelConfig,
    overhead: f64,
    n: usize,
    d: usize,
    m: usize,
    trace: Option<&Path>,
    functional: Option<(&Path, &Path)>,
    out: Option<&Path>,
    report: Option<&Path>,
) -> CmdResult {
    let em = EnergyModel::with_overhead(overhead);
    let mut lines = String::new();
    let mut tracer = |t: &CycleTrace| {
        lines.push_str(&t.csv_line());
        lines.push('\n');
    };
    let trace_cb: Option<&mut dyn FnMut(&CycleTrace)> = if trace.is_some() { Some(&mut tracer) } else { None };

    let result = match functional {
        Some((model, a)) => {
            let bundle = load_model(model)?;
            let q = bundle.quant().ok_or_else(|| Failure::usage("functional simulation needs a quantized model"))?;
            let a_m = load(a)?;
            if a_m.cols() != bundle.dim() {
                return Err(Failure::usage(format!("A has {} columns, model expects {}", a_m.cols(), bundle.dim())));
            }
            let codes = bundle.encoder().encode(&a_m)?;
            let cfg = AccelConfig { k: bundle.encoder().k(), cw: bundle.encoder().cw(), ..cfg };
            let sim = simulate_matmul_traced(&cfg, &em, codes.n(), codes.c(), q.m(), Some(Functional { codes: &codes, qlut: q }), trace_cb)?;
            let ints = sim.ints.clone().expect("functional run");
            if ints != decode_quantized(&codes, q)?.ints {
                return Err(Failure::check("accelerator output differs from the datapath reference"));
            }
            if let Some(o) = out {
                write_matrix(o, &MatrixFile::I32(ints))?;
            }
            sim
        }
        None => {
            if d == 0 {
                return Err(Failure::usage("--d must be at least 1"));
            }
            simulate_matmul_traced(&cfg, &em, n, d.div_ceil(cfg.cw), m, None, trace_cb)?
        }
    };
    if let Some(p) = trace {
        write_text(p, &format!("{}\n{lines}", CycleTrace::CSV_HEADER))?;
    }
    emit(report, &result.report.to_csv())
}

fn cmd_gradcheck(instances: u64, seed: u64, tol_theta: f64, tol_lut: f64, out: Option<&Path>) -> CmdResult {
    let mut text = String::from("instance,c,k,max_rel_theta,max_rel_lut,min_margin,pass\n");
    let mut failures = 0;
    for i in 0..instances {
        let (c, k) = [(1, 4), (2, 4), (2, 16), (3, 8)][(i % 4) as usize];
        let inst = gradcheck_instance(seed.wrapping_add(i), c, k, 3, 8, 3, 1e-2)?;
        let rep = gradcheck(&inst, 1e-5, 1e-3)?;
        let pass = rep.max_rel_theta < tol_theta && rep.max_rel_lut < tol_lut;
        failures += usize::from(!pass);
        writeln!(text, "{i},{c},{k},{:e},{:e},{:e},{pass}", rep.max_rel_theta, rep.max_rel_lut, rep.min_margin).unwrap();
    }
    emit(out, &text)?;
    if failures > 0 {
        return Err(Failure::check(format!("{failures} of {instances} gradient checks failed")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(model: &Path, a: &Path, b: &Path, epochs: usize, lr: f64, temperature: f64, slope: f64, out: &Path, metrics: Option<&Path>) -> CmdResult {
    let bundle = load_model(model)?;
    let Encoder::Trees(forest) = bundle.encoder() else {
        return Err(Failure::usage("fine-tuning needs a tree model"));
    };
    let x = load(a)?;
    let b_m = load(b)?;
    if b_m.cols() != bundle.m() {
        return Err(Failure::usage(format!("B has {} columns, model LUT has {}", b_m.cols(), bundle.m())));
    }
    let exact = matmul_exact(&x, &b_m)?;
    let data = Dataset { x, target: Target::Regression(exact.clone()), reference: Some(exact) };
    let cfg = FinetuneConfig { epochs, lr, soft: SoftParams::new(temperature, slope)?, ..Default::default() };
    let res = finetune_toy(forest, bundle.lut(), &data, &cfg)?;
    ModelBundle::new(Encoder::Trees(res.forest.clone()), res.lut.clone(), None)?.save(out)?;
    emit(metrics, &res.metrics_csv())
}

fn run(cli: Cli) -> CmdResult {
    match cli.cmd {
        Cmd::Gen { kind, rows, cols, k, c, seed, out, labels } => cmd_gen(kind, rows, cols, k, c, seed, &out, labels.as_deref()),
        Cmd::Convert { input, output, dtype } => cmd_convert(&input, &output, dtype),
        Cmd::Train { train, weights, c, k, method, seed, sample_rows, out } => {
            cmd_train(&train, &weights, c, k, method, seed, sample_rows, &out)
        }
        Cmd::Matmul { model, a, b, quantized, out, report } => cmd_matmul(&model, &a, b.as_deref(), quantized, &out, report.as_deref()),
        Cmd::Quantize { model, shared, out, report } => cmd_quantize(&model, shared, &out, report.as_deref()),
        Cmd::Simulate { n_dec, c_dec, w_dec, k, cw, clock_mhz, units, n_enc, n, d, m, overhead, trace, model, a, out, report } => {
            let cfg = AccelConfig { n_enc, n_dec, c_dec, w_dec, k, cw, clock_hz: clock_mhz * 1e6, units };
            let functional = model.as_deref().zip(a.as_deref());
            cmd_simulate(cfg, overhead, n, d, m, trace.as_deref(), functional, out.as_deref(), report.as_deref())
        }
        Cmd::Bench { suite, seeds, timing, out } => {
            let rows = bench::run(suite, seeds, timing)?;
            emit(out.as_deref(), &bench::to_csv(&rows))
        }
        Cmd::Gradcheck { instances, seed, tol_theta, tol_lut, out } => cmd_gradcheck(instances, seed, tol_theta, tol_lut, out.as_deref()),
        Cmd::Finetune { model, a, b, epochs, lr, temperature, slope, out, metrics } => {
            cmd_finetune(&model, &a, &b, epochs, lr, temperature, slope, &out, metrics.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    match run(cli) {
        Ok(()) => {
            log_elapsed(start);
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn log_elapsed(start: Instant) {
    if std::env::var_os("MADDNESS_VERBOSE").is_some() {
        eprintln!("done in {:.3}s", start.elapsed().as_secs_f64());
    }
}

// shared with the bench module
pub(crate) fn conv_case(seed: u64) -> (maddness::Tensor4, maddness::Tensor4) {
    (synth::smooth_images(4, 3, 12, 12, seed), synth::conv_weights(8, 3, 3, 3, seed.wrapping_add(1)))
}

pub(crate) fn conv_exact(x: &maddness::Tensor4, w: &maddness::Tensor4) -> Result<ConvOperands, Error> {
    let cols = im2col(x, 3, 3, 1, 1)?;
    let wm = weights_to_matrix(w)?;
    let direct = conv2d_direct(x, w, 1, 1)?;
    Ok((cols, wm, Matrix::from_vec(1, direct.len(), direct.as_slice().to_vec())?))
}

pub(crate) fn conv_approx(x: &maddness::Tensor4, forest: &maddness::HashForest, lut: &maddness::LookupTable) -> Result<Matrix<f64>, Error> {
    let t = amm_conv2d(x, (3, 3), forest, lut, 1, 1)?;
    Matrix::from_vec(1, t.len(), t.as_slice().to_vec())
}

pub(crate) fn sim_cost(n: usize, c: usize, k: usize, cw: usize, m: usize) -> Result<SimReport, Error> {
    let cfg = AccelConfig { k, cw, ..Default::default() };
    Ok(simulate_matmul(&cfg, &EnergyModel::default(), n, c, m, None)?.report)
}

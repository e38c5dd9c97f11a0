//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use maddness::accel::{peak_efficiency, simulate_matmul, AccelConfig, EnergyModel, Functional};
use maddness::difftree::{encode_hard, finetune_toy, gradcheck, gradcheck_instance, Dataset, FinetuneConfig, Target, TreeMatrices};
use maddness::maddness::{amm_maddness, encode_tree, fit, ForestParams};
use maddness::pq::{build_lut, decode_accumulate, encode_pq, learn_prototypes, EncodingMatrix, KMeansParams, LookupTable};
use maddness::quantsim::{decode_quantized, dequant_error_bound, quantize_lut};
use maddness::{conv2d_direct, conv2d_im2col, frobenius_error, matmul_exact, synth, Matrix, Tensor4};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn hard_tree_equivalence() -> Outcome {
    let mut vectors = 0usize;
    let mut mismatches = 0usize;
    for f in 0..50u64 {
        let c = [1, 4, 16][f as usize % 3];
        let cw = 4;
        let forest = synth::random_forest(c, 16, cw, 100 + f);
        let tm = TreeMatrices::from_forest(&forest).unwrap();
        let a = synth::gaussian(2000, c * cw, 10_000 + f);
        let hard = encode_hard(&tm, &a).unwrap();
        let tree = encode_tree(&a, &forest).unwrap();
        vectors += a.rows();
        mismatches += (0..a.rows()).filter(|&n| hard.row(n) != tree.row(n)).count();
    }
    outcome(
        vectors == 100_000 && mismatches == 0,
        format!("{vectors} vectors over 50 forests (K=16, C in {{1,4,16}}), {mismatches} disagreements"),
    )
}

fn gradient_correctness() -> Outcome {
    let (mut theta, mut lut, mut margin) = (0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..100 {
        let (c, k) = [(1, 4), (2, 4), (2, 16), (3, 8)][seed as usize % 4];
        let inst = gradcheck_instance(seed, c, k, 3, 8, 3, 1e-2).unwrap();
        let rep = gradcheck(&inst, 1e-5, 1e-3).unwrap();
        theta = theta.max(rep.max_rel_theta);
        lut = lut.max(rep.max_rel_lut);
        margin = margin.min(rep.min_margin);
    }
    outcome(
        theta < 1e-5 && lut < 1e-9 && margin >= 1e-2,
        format!("100 instances: max dθ rel err {theta:.2e} (< 1e-5), max dL rel err {lut:.2e} (< 1e-9), min margin {margin:.2e}"),
    )
}

fn pq_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, &(c, k, cw)) in [(4, 16, 5), (8, 8, 3), (2, 16, 4)].iter().enumerate() {
        let seed = i as u64;
        let protos = synth::separable_prototypes(c, k, cw, seed);
        let (a, _) = synth::product_set_rows(&protos, c, k, cw, 400, seed + 10);
        let b = synth::gaussian(c * cw, 9, seed + 20);
        let exact = matmul_exact(&a, &b).unwrap();
        let book = learn_prototypes(&a, c, k, &KMeansParams { seed, ..Default::default() }).unwrap();
        let pq = decode_accumulate(&encode_pq(&a, &book).unwrap(), &build_lut(&b, &book).unwrap()).unwrap();
        let (forest, lut) = fit(&a, &b, c, k, &ForestParams { seed, ..Default::default() }).unwrap();
        let md = amm_maddness(&a, &forest, &lut).unwrap();
        worst = worst
            .max(frobenius_error(&pq, &exact).unwrap().rel_frobenius)
            .max(frobenius_error(&md, &exact).unwrap().rel_frobenius);
    }
    outcome(worst <= 1e-10, format!("worst rel_frobenius over pq and maddness: {worst:.2e} (<= 1e-10)"))
}

fn im2col_equivalence() -> Outcome {
    let mut rng = synth::rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = if rng.random_bool(0.5) { 1 } else { 3 };
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=1);
        let (n, ci, co) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=5));
        let (h, w) = (rng.random_range(k..=9), rng.random_range(k..=9));
        let x = Tensor4::from_fn(n, ci, h, w, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let wt = Tensor4::from_fn(co, ci, k, k, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let direct = conv2d_direct(&x, &wt, stride, padding).unwrap();
        let lowered = conv2d_im2col(&x, &wt, stride, padding).unwrap();
        let flat = |t: &Tensor4| Matrix::from_vec(1, t.len(), t.as_slice().to_vec()).unwrap();
        worst = worst.max(frobenius_error(&flat(&lowered), &flat(&direct)).unwrap().rel_frobenius);
    }
    outcome(worst <= 1e-10, format!("100 configs, worst relative error {worst:.2e} (<= 1e-10)"))
}

fn throughput() -> Outcome {
    let cfg = AccelConfig::four_unit_system();
    let rep = simulate_matmul(&cfg, &EnergyModel::default(), 16_384, 16, 256, None).unwrap().report;
    let peak = cfg.peak_throughput_tops();
    let gap = (rep.throughput_tops - 2.9).abs() / 2.9;
    outcome(
        (peak - 2.875).abs() < 5e-4 && gap <= 0.02 && rep.utilization > 0.999,
        format!(
            "N_dec=256, CW=9, 624 MHz: simulated {:.4} TOp/s at utilization {:.5}, peak {peak:.4}; {:.2}% from 2.9",
            rep.throughput_tops,
            rep.utilization,
            gap * 100.0
        ),
    )
}

fn energy_calibration() -> Outcome {
    let cfg = AccelConfig::default();
    let bare = peak_efficiency(&cfg, &EnergyModel::default());
    let loaded = peak_efficiency(&cfg, &EnergyModel::with_overhead(1.34));
    // the simulator agrees with the closed form in steady state
    let sim = simulate_matmul(&cfg, &EnergyModel::default(), 8192, 16, 64, None).unwrap().report;
    let sim_gap = (sim.efficiency_tops_per_w - bare).abs() / bare;
    let pass = (bare - 57.9).abs() <= 0.1 && (loaded - 43.1).abs() <= 0.5 && sim_gap < 1e-3 && bare > loaded;
    outcome(
        pass,
        format!(
            "overhead 1.00: {bare:.3} TOp/s/W (57.9 ± 0.1); overhead 1.34: {loaded:.3} (43.1 ± 0.5); unitemised gap {:.1}%; simulated {:.3}",
            (1.0 - loaded / bare) * 100.0,
            sim.efficiency_tops_per_w
        ),
    )
}

fn datapath_bit_exact() -> Outcome {
    let mut rng = synth::rng(7);
    let (mut mismatched, mut over_bound) = (0, 0);
    for i in 0..100u64 {
        let (n, c, m) = (rng.random_range(1..24), rng.random_range(1..48), rng.random_range(1..200));
        let k = [4, 8, 16][i as usize % 3];
        let units = rng.random_range(1..=4);
        let lut = LookupTable::new(c, k, m, synth::gaussian(c * k, m, i).into_vec()).unwrap();
        let q = quantize_lut(&lut).unwrap();
        let codes = EncodingMatrix::new(n, c, k, (0..n * c).map(|_| rng.random_range(0..k as u32)).collect()).unwrap();
        let cfg = AccelConfig { k, units, ..Default::default() };
        let sim = simulate_matmul(&cfg, &EnergyModel::default(), n, c, m, Some(Functional { codes: &codes, qlut: &q })).unwrap();
        let reference = decode_quantized(&codes, &q).unwrap();
        mismatched += usize::from(sim.ints.as_ref() != Some(&reference.ints));
        let float = decode_accumulate(&codes, &lut).unwrap();
        let bound = dequant_error_bound(&q);
        over_bound += float
            .as_slice()
            .iter()
            .zip(reference.dequant.as_slice())
            .filter(|(x, y)| (*x - *y).abs() > bound)
            .count();
    }
    outcome(
        mismatched == 0 && over_bound == 0,
        format!("100 instances: {mismatched} INT24 mismatches, {over_bound} elements over the Σ Δ_c/2 bound"),
    )
}

fn statistical_error() -> Outcome {
    let mean = |c: usize, k: usize| -> f64 {
        (0..10u64)
            .map(|s| {
                let a = synth::gaussian(512, 64, s);
                let train = synth::gaussian(512, 64, s + 1000);
                let b = synth::gaussian(64, 32, s + 2000);
                let (forest, lut) = fit(&train, &b, c, k, &ForestParams { seed: s, ..Default::default() }).unwrap();
                let approx = amm_maddness(&a, &forest, &lut).unwrap();
                frobenius_error(&approx, &matmul_exact(&a, &b).unwrap()).unwrap().rel_frobenius
            })
            .sum::<f64>()
            / 10.0
    };
    let (c1, c16) = (mean(1, 16), mean(16, 16));
    let sweep = [mean(16, 4), mean(16, 8), c16];
    let pass = c16 < c1 && sweep[0] >= sweep[1] && sweep[1] >= sweep[2];
    outcome(
        pass,
        format!("10 seeds: C=1 {c1:.4} vs C=16 {c16:.4}; K=4,8,16: {:.4}, {:.4}, {:.4}", sweep[0], sweep[1], sweep[2]),
    )
}

fn accuracy(out: &Matrix<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let r = out.row(i);
            (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b }) == l
        })
        .count();
    hits as f64 / labels.len() as f64
}

fn finetune_blobs() -> Outcome {
    let d = 16;
    let mut details = Vec::new();
    let mut pass = true;
    for seed in 0..3u64 {
        let (x, labels) = synth::two_class_blobs(512, d, 4.0, seed);
        // linear read-out along the class axis
        let b = Matrix::from_fn(d, 2, |_, j| if j == 1 { 1.0 } else { -1.0 } / (d as f64).sqrt()).unwrap();
        let exact = accuracy(&matmul_exact(&x, &b).unwrap(), &labels);
        let (forest, lut) = fit(&x, &b, 4, 4, &ForestParams { seed, ..Default::default() }).unwrap();
        let before = accuracy(&amm_maddness(&x, &forest, &lut).unwrap(), &labels);
        let data = Dataset { x: x.clone(), target: Target::Classes(labels.clone()), reference: None };
        let cfg = FinetuneConfig { epochs: 50, lr: 0.5, ..Default::default() };
        let res = finetune_toy(&forest, &lut, &data, &cfg).unwrap();
        let after = accuracy(&amm_maddness(&x, &res.forest, &res.lut).unwrap(), &labels);
        pass &= after >= before;
        details.push(format!(
            "seed {seed}: exact {:.1}%, replaced {:.1}% -> tuned {:.1}% ({:+.1} pp)",
            exact * 100.0,
            before * 100.0,
            after * 100.0,
            (after - before) * 100.0
        ));
    }
    outcome(pass, format!("2-class blobs, C=4 K=4, 50 epochs: {}", details.join("; ")))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_maddness"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`{}` exited with {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn cli_session(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let steps: &[(&str, &[&str])] = &[
        ("gen", &["gen", "--rows", "256", "--cols", "32", "--seed", "5", "--out", "a.madm"]),
        ("gen-train", &["gen", "--rows", "256", "--cols", "32", "--seed", "6", "--out", "t.madm"]),
        ("gen-b", &["gen", "--rows", "32", "--cols", "8", "--seed", "7", "--out", "b.madm"]),
        ("gen-blobs", &["gen", "--kind", "blobs", "--rows", "64", "--cols", "4", "--k", "4", "--seed", "8", "--out", "blobs.madm", "--labels", "labels.csv"]),
        ("gen-product", &["gen", "--kind", "product", "--rows", "64", "--cols", "16", "--c", "4", "--k", "8", "--seed", "9", "--out", "prod.madm"]),
        ("convert", &["convert", "b.madm", "b.csv"]),
        ("convert-back", &["convert", "b.csv", "b32.madm", "--dtype", "f32"]),
        ("train-maddness", &["train", "t.madm", "--weights", "b.madm", "--c", "8", "--k", "16", "--seed", "3", "--out", "m.madl"]),
        ("train-pq", &["train", "t.madm", "--weights", "b.madm", "--c", "8", "--k", "16", "--method", "pq", "--seed", "3", "--out", "p.madl"]),
        ("matmul", &["matmul", "--model", "m.madl", "--a", "a.madm", "--b", "b.madm", "--out", "o.madm", "--report", "o.csv"]),
        ("matmul-pq", &["matmul", "--model", "p.madl", "--a", "a.madm", "--b", "b.madm", "--out", "op.madm"]),
        ("quantize", &["quantize", "--model", "m.madl", "--out", "q.madl", "--report", "q.csv"]),
        ("matmul-int8", &["matmul", "--model", "q.madl", "--a", "a.madm", "--quantized", "--out", "oq.madm"]),
        ("simulate", &["simulate", "--units", "2", "--n", "64", "--d", "144", "--m", "100", "--trace", "trace.csv", "--report", "sim.csv"]),
        ("simulate-functional", &["simulate", "--model", "q.madl", "--a", "a.madm", "--out", "ints.madm", "--report", "simf.csv"]),
        ("bench", &["bench", "--seeds", "1", "--out", "bench.csv"]),
        ("bench-conv", &["bench", "--suite", "conv", "--seeds", "1", "--out", "bench_conv.csv"]),
        ("gradcheck", &["gradcheck", "--instances", "8", "--seed", "2", "--out", "grad.csv"]),
        ("finetune", &["finetune", "--model", "m.madl", "--a", "t.madm", "--b", "b.madm", "--epochs", "5", "--out", "f.madl", "--metrics", "f.csv"]),
    ];
    let mut stdout = Vec::new();
    for (name, args) in steps {
        stdout.push((format!("stdout:{name}"), run_cli(dir, args)?));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    let mut all = stdout;
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        all.push((name, std::fs::read(&f).map_err(|e| e.to_string())?));
    }
    Ok(all)
}

fn determinism() -> Outcome {
    let root = std::env::temp_dir().join(format!("maddness-accept-{}", std::process::id()));
    let result = (|| {
        let first = cli_session(&root.join("run1"))?;
        let second = cli_session(&root.join("run2"))?;
        let differing: Vec<&str> = first
            .iter()
            .zip(&second)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.as_str())
            .collect();
        let outputs = first.len();
        Ok::<_, String>((outputs, first.len() == second.len() && differing.is_empty(), differing.join(", ")))
    })();
    std::fs::remove_dir_all(&root).ok();
    match result {
        Ok((n, true, _)) => outcome(true, format!("{n} outputs from all 9 subcommands byte-identical across two runs")),
        Ok((_, false, diff)) => outcome(false, format!("outputs differ: {diff}")),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(u8, &str, Check, Duration); 10] = [
        (1, "hard/tree encoding equivalence", hard_tree_equivalence, Duration::from_secs(10)),
        (2, "gradient correctness", gradient_correctness, Duration::from_secs(30)),
        (3, "prototype product-set exactness", pq_exactness, Duration::from_secs(5)),
        (4, "im2col equivalence", im2col_equivalence, Duration::from_secs(10)),
        (5, "throughput arithmetic", throughput, Duration::from_secs(1)),
        (6, "energy-model calibration", energy_calibration, Duration::from_secs(1)),
        (7, "datapath bit-exactness", datapath_bit_exact, Duration::from_secs(10)),
        (8, "statistical error behaviour", statistical_error, Duration::from_secs(60)),
        (9, "fine-tuning substitute task", finetune_blobs, Duration::from_secs(300)),
        (10, "CLI determinism", determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (id, name, check, budget) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.2}s, budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

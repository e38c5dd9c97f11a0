use maddness::maddness::{amm_conv2d, amm_maddness, encode_tree, fit, learn_forest, ForestParams};
use maddness::pq::{build_lut, decode_accumulate, encode_pq, learn_prototypes, KMeansParams};
use maddness::{conv2d_direct, frobenius_error, matmul_exact, synth};

fn mean_rel(c: usize, k: usize, seeds: std::ops::Range<u64>) -> f64 {
    let n = seeds.end - seeds.start;
    seeds
        .map(|s| {
            let a = synth::gaussian(512, 64, s);
            let train = synth::gaussian(512, 64, s + 1000);
            let b = synth::gaussian(64, 32, s + 2000);
            let (forest, lut) = fit(&train, &b, c, k, &ForestParams { seed: s, ..Default::default() }).unwrap();
            let approx = amm_maddness(&a, &forest, &lut).unwrap();
            frobenius_error(&approx, &matmul_exact(&a, &b).unwrap()).unwrap().rel_frobenius
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn prototype_product_rows_are_reproduced_exactly() {
    let (c, k, cw) = (4, 16, 5);
    let protos = synth::separable_prototypes(c, k, cw, 3);
    let (a, _) = synth::product_set_rows(&protos, c, k, cw, 300, 4);
    let b = synth::gaussian(c * cw, 7, 5);
    let exact = matmul_exact(&a, &b).unwrap();

    let book = learn_prototypes(&a, c, k, &KMeansParams::default()).unwrap();
    let pq = decode_accumulate(&encode_pq(&a, &book).unwrap(), &build_lut(&b, &book).unwrap()).unwrap();
    assert!(frobenius_error(&pq, &exact).unwrap().rel_frobenius <= 1e-10);

    let (forest, lut) = fit(&a, &b, c, k, &ForestParams::default()).unwrap();
    let md = amm_maddness(&a, &forest, &lut).unwrap();
    assert!(frobenius_error(&md, &exact).unwrap().rel_frobenius <= 1e-10);
}

#[test]
fn more_codebooks_and_more_prototypes_help_on_gaussian_data() {
    let c1 = mean_rel(1, 16, 0..4);
    let c16 = mean_rel(16, 16, 0..4);
    assert!(c16 < c1, "C=16 {c16} vs C=1 {c1}");
    let errs: Vec<f64> = [4, 8, 16].iter().map(|&k| mean_rel(16, k, 0..4)).collect();
    assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "{errs:?}");
}

#[test]
fn blob_clusters_land_in_single_leaves() {
    let (a, labels) = synth::blobs(800, 4, 16, 3.0, 0.3, 11);
    let (forest, _) = learn_forest(&a, 1, 16, &ForestParams::default()).unwrap();
    let codes = encode_tree(&a, &forest).unwrap();
    let mut counts = vec![[0usize; 16]; 16];
    for (n, &l) in labels.iter().enumerate() {
        counts[l][codes.get(n, 0)] += 1;
    }
    let majority: usize = counts.iter().map(|row| *row.iter().max().unwrap()).sum();
    let purity = majority as f64 / 800.0;
    assert!(purity >= 0.95, "purity {purity}");
}

#[test]
fn approximate_convolution_tracks_direct() {
    let x = synth::smooth_images(4, 3, 12, 12, 1);
    let w = synth::conv_weights(8, 3, 3, 3, 2);
    let train = maddness::im2col(&x, 3, 3, 1, 1).unwrap();
    let (forest, lut) = fit(&train, &maddness::im2col::weights_to_matrix(&w).unwrap(), 9, 16, &ForestParams::default()).unwrap();
    let approx = amm_conv2d(&x, (3, 3), &forest, &lut, 1, 1).unwrap();
    let exact = conv2d_direct(&x, &w, 1, 1).unwrap();
    let a = maddness::Matrix::from_vec(1, approx.len(), approx.as_slice().to_vec()).unwrap();
    let e = maddness::Matrix::from_vec(1, exact.len(), exact.as_slice().to_vec()).unwrap();
    let rel = frobenius_error(&a, &e).unwrap().rel_frobenius;
    println!("conv rel_frobenius {rel:.4}");
    assert!(rel < 0.5, "{rel}");
}

use maddness::difftree::{amm_ste_backward, gradcheck, gradcheck_instance, encode_soft, TreeMatrices, SoftParams};
use maddness::synth;
use proptest::prelude::*;

#[test]
fn threshold_and_lut_gradients_match_central_differences() {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (c, k) = [(1, 4), (2, 4), (2, 16), (3, 8)][seed as usize % 4];
        let inst = gradcheck_instance(seed, c, k, 3, 8, 3, 1e-2).unwrap();
        assert!(inst.tm.levels() > 0);
        let rep = gradcheck(&inst, 1e-5, 1e-3).unwrap();
        assert!(rep.min_margin >= 1e-2, "seed {seed}: boundary instance");
        assert!(rep.max_rel_theta < 1e-5, "seed {seed}: dθ rel err {}", rep.max_rel_theta);
        assert!(rep.max_rel_lut < 1e-9, "seed {seed}: dL rel err {}", rep.max_rel_lut);
        worst = (worst.0.max(rep.max_rel_theta), worst.1.max(rep.max_rel_lut));
    }
    println!("worst dθ {:.3e}, worst dL {:.3e}", worst.0, worst.1);
}

#[test]
fn lut_gradient_counts_rows_per_leaf() {
    let inst = gradcheck_instance(7, 2, 8, 3, 20, 2, 0.0).unwrap();
    let g = amm_ste_backward(&inst.tm, &inst.soft, &inst.lut, &inst.x, &inst.upstream).unwrap();
    let codes = maddness::encode_tree(&inst.x, &inst.forest).unwrap();
    let (k, m) = (8, 2);
    for c in 0..2 {
        for leaf in 0..k {
            for j in 0..m {
                let expect: f64 = (0..20).filter(|&n| codes.get(n, c) == leaf).map(|n| inst.upstream[(n, j)]).sum();
                assert_eq!(g.d_lut[(c * k + leaf) * m + j], expect);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_rows_are_distributions_and_agree_with_hard_when_sharp(seed in 0u64..10_000, k_pow in 1u32..5) {
        let k = 1usize << k_pow;
        let forest = synth::random_forest(2, k, 3, seed);
        let tm = TreeMatrices::from_forest(&forest).unwrap();
        let x = synth::gaussian(16, 6, seed + 1);
        let soft = encode_soft(&tm, &SoftParams::new(1.0, 1.0).unwrap(), &x).unwrap();
        for p in soft.probs.chunks(k) {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let sharp = encode_soft(&tm, &SoftParams::new(0.05, 1e6).unwrap(), &x).unwrap();
        let hard = maddness::encode_tree(&x, &forest).unwrap();
        for n in 0..16 {
            for c in 0..2 {
                let p = sharp.slice(n, c);
                let arg = (0..k).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                prop_assert_eq!(arg, hard.get(n, c));
            }
        }
    }
}

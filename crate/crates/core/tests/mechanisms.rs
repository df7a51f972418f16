mod common;

use common::mat;
use margattn::instances::{
    common_norm_rows, gaussian_mat, int_in, mirrored_clusters, perturb, real_in, separated_patterns,
};
use margattn::mechanisms::{
    block_memory_term, block_slot_step, block_slot_step_engine, hopfield_retrieve, hopfield_step,
    hopfield_step_engine, run_block_slots, slot_step, slot_step_engine, slot_weights,
};
use margattn::numerics::norm_sq;
use margattn::oracle::gmm_em_step;
use margattn::{
    BlockSlotConfig, FixedPointNormalization, HopfieldConfig, Mat, SeededRng, SlotConfig, SlotInit,
};
use proptest::prelude::*;

const RAW: FixedPointNormalization = FixedPointNormalization::RawSum;
const MEAN: FixedPointNormalization = FixedPointNormalization::WeightedMean;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_hopfield(rng: &mut SeededRng) -> HopfieldConfig {
    let n = int_in(rng, 1, 6);
    let d = int_in(rng, 1, 6);
    let s = 1.0 / (d as f64).sqrt();
    HopfieldConfig::new(
        gaussian_mat(rng, n, d, 1.0),
        gaussian_mat(rng, d, d, s),
        gaussian_mat(rng, d, d, s),
        real_in(rng, 0.3, 4.0),
        rng.normal_vec(d),
    )
    .unwrap()
}

#[test]
fn hopfield_engine_matches_direct_formula() {
    let mut rng = SeededRng::new(1);
    for _ in 0..100 {
        let cfg = random_hopfield(&mut rng);
        let mu = rng.normal_vec(cfg.dim());
        let a = hopfield_step(&cfg, &mu).unwrap();
        let b = hopfield_step_engine(&cfg, &mu).unwrap();
        assert!(dist(&a, &b) <= 1e-12);
    }
}

#[test]
fn single_pattern_is_always_retrieved() {
    let mut rng = SeededRng::new(2);
    let p = gaussian_mat(&mut rng, 1, 3, 1.0);
    let wq = gaussian_mat(&mut rng, 3, 3, 0.6);
    let wk = gaussian_mat(&mut rng, 3, 3, 0.6);
    let cfg = HopfieldConfig::new(p.clone(), wq.clone(), wk.clone(), 2.0, vec![0.0; 3]).unwrap();
    let image = wq.transpose().matmul(&wk).unwrap().matvec(p.row(0));
    for _ in 0..5 {
        let mu = rng.normal_vec(3);
        assert!(dist(&hopfield_step(&cfg, &mu).unwrap(), &image) < 1e-15);
        assert!(dist(&hopfield_step_engine(&cfg, &mu).unwrap(), &image) < 1e-15);
    }
}

#[test]
fn five_pattern_one_step_retrieval() {
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed);
        let p = separated_patterns(&mut rng, 5, 16, 0.3);
        let target = p.row(2).to_vec();
        let query = perturb(&mut rng, &target, 0.05);
        let cfg = HopfieldConfig::identity(p, 8.0, query.clone()).unwrap();
        let next = hopfield_step(&cfg, &query).unwrap();
        assert!(dist(&next, &target) < 0.01 * norm_sq(&target).sqrt(), "seed {seed}");
    }
}

#[test]
fn noisy_queries_converge_to_the_nearest_pattern() {
    let mut hits = 0;
    for seed in 0..100 {
        let mut rng = SeededRng::new(10_000 + seed);
        let p = separated_patterns(&mut rng, 5, 16, 0.3);
        let j = seed as usize % 5;
        let target = p.row(j).to_vec();
        let query = perturb(&mut rng, &target, 0.05);
        let cfg = HopfieldConfig::identity(p, 8.0, query).unwrap();
        let (mu, state) = hopfield_retrieve(&cfg, 1e-8, 3).unwrap();
        if dist(&mu, &target) < 1e-2 * norm_sq(&target).sqrt() && state.iteration <= 3 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn stored_pattern_is_a_fixed_point() {
    let mut rng = SeededRng::new(3);
    let p = separated_patterns(&mut rng, 5, 16, 0.3);
    let x = p.row(1).to_vec();
    let cfg = HopfieldConfig::identity(p, 8.0, x.clone()).unwrap();
    let (mu, state) = hopfield_retrieve(&cfg, 1e-8, 100).unwrap();
    assert!(state.converged);
    assert_eq!(state.iteration, 1);
    assert!(dist(&mu, &x) < 1e-6);
}

#[test]
fn symmetric_query_stays_at_the_average() {
    let p = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let cfg = HopfieldConfig::identity(p, 4.0, vec![0.5, 0.5]).unwrap();
    assert!(dist(&hopfield_step(&cfg, &[0.5, 0.5]).unwrap(), &[0.5, 0.5]) < 1e-15);
    let (mu, state) = hopfield_retrieve(&cfg, 1e-10, 100).unwrap();
    assert!(state.converged);
    assert!(dist(&mu, &[0.5, 0.5]) < 1e-15);
    // far from both patterns with equal overlaps
    let far = hopfield_step(&cfg, &[-7.0, -7.0]).unwrap();
    assert!(dist(&far, &[0.5, 0.5]) < 1e-14, "{far:?}");
}

#[test]
fn hopfield_energy_descends() {
    let mut rng = SeededRng::new(4);
    for _ in 0..100 {
        let cfg = random_hopfield(&mut rng);
        let (_, state) = hopfield_retrieve(&cfg, 1e-10, 1000).unwrap();
        for w in state.f_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}

fn random_slots(rng: &mut SeededRng) -> (SlotConfig, Mat) {
    let n = int_in(rng, 1, 10);
    let m = int_in(rng, 1, 5);
    let d = int_in(rng, 1, 5);
    let x = gaussian_mat(rng, n, d, 1.0);
    let w = gaussian_mat(rng, d, d, 1.0 / (d as f64).sqrt());
    let mu = gaussian_mat(rng, m, d, 1.0);
    let beta = real_in(rng, 0.3, 3.0);
    (SlotConfig::new(x, m, w, beta, SlotInit::Given(mu.clone())).unwrap(), mu)
}

#[test]
fn slot_engine_matches_direct_formula() {
    let mut rng = SeededRng::new(5);
    for _ in 0..100 {
        let (cfg, mu) = random_slots(&mut rng);
        for norm in [RAW, MEAN] {
            let a = slot_step(&cfg, &mu, norm).unwrap();
            let b = slot_step_engine(&cfg, &mu, norm).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }
}

#[test]
fn slot_weights_normalize_over_slots() {
    let mut rng = SeededRng::new(6);
    for _ in 0..50 {
        let (cfg, mu) = random_slots(&mut rng);
        let w = slot_weights(&cfg, &mu).unwrap();
        for j in 0..w.cols() {
            let s: f64 = (0..w.rows()).map(|i| w.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn weighted_mean_slot_step_is_an_em_step() {
    let mut rng = SeededRng::new(7);
    for _ in 0..50 {
        let n = int_in(&mut rng, 2, 20);
        let m = int_in(&mut rng, 1, 5);
        let d = int_in(&mut rng, 1, 5);
        let x = gaussian_mat(&mut rng, n, d, 1.5);
        let r = real_in(&mut rng, 0.5, 2.0);
        let mu = common_norm_rows(&mut rng, m, d, r);
        let cfg = SlotConfig::new(x.clone(), m, Mat::identity(d), 1.0, SlotInit::Given(mu.clone())).unwrap();
        let slots = slot_step(&cfg, &mu, MEAN).unwrap();
        let em = gmm_em_step(&x, &mu).unwrap();
        assert!(slots.max_abs_diff(&em) <= 1e-10);
    }
}

#[test]
fn two_clusters_converge_to_their_means_step_by_step_with_em() {
    let mut rng = SeededRng::new(8);
    let x = mirrored_clusters(&mut rng, &[3.0, 0.0], 20, 0.5);
    let c: Vec<f64> = (0..2).map(|a| (0..20).map(|j| x.get(j, a)).sum::<f64>() / 20.0).collect();
    let s = rng.normal_vec(2);
    let mut mu = Mat::from_rows(&[s.clone(), s.iter().map(|v| -v).collect()]).unwrap();
    let cfg = SlotConfig::new(x.clone(), 2, Mat::identity(2), 1.0, SlotInit::Given(mu.clone())).unwrap();
    for _ in 0..50 {
        let next = slot_step(&cfg, &mu, MEAN).unwrap();
        let em = gmm_em_step(&x, &mu).unwrap();
        assert!(next.max_abs_diff(&em) <= 1e-10);
        mu = next;
    }
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    let (a, b) = (mu.row(0), mu.row(1));
    let err = (dist(a, &c).max(dist(b, &neg))).min(dist(a, &neg).max(dist(b, &c)));
    assert!(err < 1e-3, "{err}");
}

#[test]
fn single_slot_weighted_mean_is_mapped_mean() {
    let mut rng = SeededRng::new(9);
    let x = gaussian_mat(&mut rng, 6, 3, 1.0);
    let w = gaussian_mat(&mut rng, 3, 3, 0.5);
    let mu = gaussian_mat(&mut rng, 1, 3, 1.0);
    let cfg = SlotConfig::new(x.clone(), 1, w.clone(), 1.0, SlotInit::Given(mu.clone())).unwrap();
    let out = slot_step(&cfg, &mu, MEAN).unwrap();
    for a in 0..3 {
        let expect: f64 = (0..6).map(|j| w.matvec(x.row(j))[a]).sum::<f64>() / 6.0;
        assert!((out.get(0, a) - expect).abs() < 1e-14);
    }
}

#[test]
fn opposite_slots_on_opposite_inputs_stay_put() {
    let x = mat(&[&[1.0, 0.0], &[-1.0, 0.0]]);
    let mu = x.clone();
    let cfg = SlotConfig::new(x, 2, Mat::identity(2), 50.0, SlotInit::Given(mu.clone())).unwrap();
    let out = slot_step(&cfg, &mu, MEAN).unwrap();
    assert!(out.max_abs_diff(&mu) < 1e-12);
}

proptest! {
    #[test]
    fn permuting_inputs_leaves_slots_unchanged(seed in 0u64..100_000, shift in 1usize..10) {
        let (cfg, mu) = random_slots(&mut SeededRng::new(seed));
        let n = cfg.inputs.rows();
        let rows: Vec<Vec<f64>> = (0..n).map(|j| cfg.inputs.row((j + shift) % n).to_vec()).collect();
        let perm = SlotConfig { inputs: Mat::from_rows(&rows).unwrap(), ..cfg.clone() };
        for norm in [RAW, MEAN] {
            let a = slot_step(&cfg, &mu, norm).unwrap();
            let b = slot_step(&perm, &mu, norm).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }

    #[test]
    fn permuting_slots_permutes_outputs(seed in 0u64..100_000, shift in 1usize..5) {
        let (cfg, mu) = random_slots(&mut SeededRng::new(seed));
        let m = mu.rows();
        let rows: Vec<Vec<f64>> = (0..m).map(|i| mu.row((i + shift) % m).to_vec()).collect();
        let pmu = Mat::from_rows(&rows).unwrap();
        for norm in [RAW, MEAN] {
            let a = slot_step(&cfg, &mu, norm).unwrap();
            let b = slot_step(&cfg, &pmu, norm).unwrap();
            for i in 0..m {
                prop_assert!(dist(b.row(i), a.row((i + shift) % m)) <= 1e-12);
            }
        }
    }
}

fn block_config(rng: &mut SeededRng, dims: &[usize], per_block: usize, memory_beta: Option<f64>) -> (BlockSlotConfig, Mat) {
    let d: usize = dims.iter().sum();
    let n = int_in(rng, 1, 8);
    let m = int_in(rng, 1, 4);
    let x = gaussian_mat(rng, n, d, 1.0);
    let w = gaussian_mat(rng, d, d, 1.0 / (d as f64).sqrt());
    let mu = gaussian_mat(rng, m, d, 1.0);
    let slots = SlotConfig::new(x, m, w, real_in(rng, 0.3, 3.0), SlotInit::Given(mu.clone())).unwrap();
    let memories = dims.iter().map(|&b| gaussian_mat(rng, per_block, b, 1.0)).collect();
    (BlockSlotConfig::new(slots, dims.to_vec(), memories, memory_beta).unwrap(), mu)
}

#[test]
fn block_slot_engine_matches_direct_formula() {
    let mut rng = SeededRng::new(10);
    for k in 0..100 {
        let dims: &[usize] = [&[3][..], &[1, 2], &[2, 2, 1]][k % 3];
        let per_block = k % 4;
        let mb = if k % 2 == 0 { None } else { Some(2.5) };
        let (cfg, mu) = block_config(&mut rng, dims, per_block, mb);
        let a = block_slot_step(&cfg, &mu).unwrap();
        let b = block_slot_step_engine(&cfg, &mu).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12, "case {k}");
    }
}

#[test]
fn no_memories_reduces_to_slot_attention() {
    let mut rng = SeededRng::new(11);
    for _ in 0..20 {
        let (cfg, mu) = block_config(&mut rng, &[2, 3], 0, None);
        let a = block_slot_step(&cfg, &mu).unwrap();
        let b = slot_step(&cfg.slots, &mu, RAW).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}

#[test]
fn one_memory_per_block_adds_the_concatenation() {
    let mut rng = SeededRng::new(12);
    for _ in 0..20 {
        let (cfg, mu) = block_config(&mut rng, &[2, 1, 3], 1, None);
        let concat: Vec<f64> = cfg.memories.iter().flat_map(|m| m.row(0).to_vec()).collect();
        let term = block_memory_term(&cfg, &mu).unwrap();
        for i in 0..mu.rows() {
            assert_eq!(term.row(i), &concat[..]);
        }
    }
}

#[test]
fn memory_term_snaps_to_the_aligned_memory() {
    let mut rng = SeededRng::new(13);
    let angles = [0.0f64, 2.0 * std::f64::consts::PI / 3.0, 4.0 * std::f64::consts::PI / 3.0];
    let bank = Mat::from_rows(&angles.iter().map(|a| vec![a.cos(), a.sin()]).collect::<Vec<_>>()).unwrap();
    let x = gaussian_mat(&mut rng, 4, 4, 1.0);
    for (k0, k1) in [(0, 1), (2, 0), (1, 1)] {
        let mut slot = bank.row(k0).to_vec();
        slot.extend_from_slice(bank.row(k1));
        let slot = perturb(&mut rng, &slot, 0.01);
        let mu = Mat::from_rows(&[slot]).unwrap();
        let slots = SlotConfig::new(x.clone(), 1, Mat::identity(4), 50.0, SlotInit::Given(mu.clone())).unwrap();
        let cfg = BlockSlotConfig::new(slots, vec![2, 2], vec![bank.clone(), bank.clone()], None).unwrap();
        let term = block_memory_term(&cfg, &mu).unwrap();
        let mut expect = bank.row(k0).to_vec();
        expect.extend_from_slice(bank.row(k1));
        assert!(dist(term.row(0), &expect) < 1e-6);
    }
}

#[test]
fn block_slot_iteration_descends() {
    let mut rng = SeededRng::new(14);
    for _ in 0..30 {
        let (cfg, _) = block_config(&mut rng, &[2, 2], 3, Some(1.5));
        let (_, state) = run_block_slots(&cfg, 1e-10, 1000).unwrap();
        for w in state.f_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}

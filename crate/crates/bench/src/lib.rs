//! Seeded fixtures shared by the benchmarks.

use margattn::attention::cross_attention_mrf;
use margattn::instances::{gaussian_mat, perturb, random_mrf, random_pcn, separated_patterns, MrfShape};
use margattn::{
    EdgePriorMode, HopfieldConfig, Mat, PairwiseMrf, PcnNetwork, SeededRng, SlotConfig, SlotInit,
};

/// Cross attention with `n` keys, `m` queries in dimension `d`, `β = 1/√d`.
pub fn cross_mrf(n: usize, m: usize, d: usize) -> PairwiseMrf {
    let mut rng = SeededRng::new(1);
    let s = 1.0 / (d as f64).sqrt();
    let keys = gaussian_mat(&mut rng, n, d, 1.0);
    let queries = gaussian_mat(&mut rng, m, d, 1.0);
    let wq = gaussian_mat(&mut rng, d, d, s);
    let wk = gaussian_mat(&mut rng, d, d, s);
    cross_attention_mrf(&queries, &keys, &wq, &wk, s).unwrap()
}

/// A CCCP-solvable MRF with its initial latent means.
pub fn cccp_mrf(seed: u64) -> (PairwiseMrf, Vec<Vec<f64>>) {
    random_mrf(&mut SeededRng::new(seed), &MrfShape::cccp(6, 3, 5)).unwrap()
}

/// `n` separated patterns in dimension `d` queried near pattern 0.
pub fn hopfield(n: usize, d: usize) -> HopfieldConfig {
    let mut rng = SeededRng::new(3);
    let p = separated_patterns(&mut rng, n, d, 0.5);
    let q = perturb(&mut rng, p.row(0), 0.05);
    HopfieldConfig::identity(p, 8.0, q).unwrap()
}

pub fn slots(n: usize, m: usize, d: usize) -> SlotConfig {
    let x = gaussian_mat(&mut SeededRng::new(4), n, d, 1.0);
    SlotConfig::new(x, m, Mat::identity(d), 1.0, SlotInit::Seeded(5)).unwrap()
}

pub fn pcn(sizes: &[usize], mode: EdgePriorMode) -> (PcnNetwork, Vec<f64>) {
    let mut rng = SeededRng::new(6);
    let net = random_pcn(&mut rng, sizes, mode, 1.0).unwrap();
    let obs = rng.normal_vec(sizes[0]);
    (net, obs)
}

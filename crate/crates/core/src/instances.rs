//! Seeded random problem instances.
//!
//! Tests, benches and CLI smoke runs draw from these generators, so a seed
//! together with a shape always names the same instance.

use crate::attention::EdgePosterior;
use crate::error::Result;
use crate::mrf::{Edge, EdgeVariable, NodePotential, NodeSet, PairwiseMrf, PotentialSpec, StructuralPrior};
use crate::numerics::{dot, norm_sq, softmax, Mat, SeededRng};
use crate::pcn::{EdgePriorMode, PcnLayer, PcnNetwork};

/// Uniform integer in `lo..=hi`.
pub fn int_in(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    assert!(lo <= hi);
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// Uniform real in `[lo, hi)`.
pub fn real_in(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Matrix of independent `N(0, scale²)` entries.
pub fn gaussian_mat(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Mat {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Mat::new(rows, cols, data).expect("gaussian entries are finite")
}

/// Inputs for cross attention with projections; all matrices Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossInstance {
    pub queries: Mat,
    pub keys: Mat,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub beta: f64,
}

/// Key count, query count and width are drawn from `1..=max_*`; `W_Q` and
/// `W_K` are square, `W_V` has a random output width.
pub fn cross_instance(rng: &mut SeededRng, max_n: usize, max_m: usize, max_d: usize) -> CrossInstance {
    let n = int_in(rng, 1, max_n);
    let m = int_in(rng, 1, max_m);
    let d = int_in(rng, 1, max_d);
    let d_out = int_in(rng, 1, max_d);
    let s = 1.0 / (d as f64).sqrt();
    CrossInstance {
        queries: gaussian_mat(rng, m, d, 1.0),
        keys: gaussian_mat(rng, n, d, 1.0),
        w_q: gaussian_mat(rng, d, d, s),
        w_k: gaussian_mat(rng, d, d, s),
        w_v: gaussian_mat(rng, d_out, d, s),
        beta: real_in(rng, 0.2, 2.0),
    }
}

/// Size limits for [`random_mrf`]. Every count is drawn from `1..=max`
/// except latents, drawn from `min_latent..=max_latent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrfShape {
    pub max_observed: usize,
    pub min_latent: usize,
    pub max_latent: usize,
    pub max_dim: usize,
    pub max_vars: usize,
    pub max_candidates: usize,
    /// Allow candidates joining two latent nodes (not admissible for CCCP).
    pub latent_latent: bool,
    pub node: NodePotential,
}

impl MrfShape {
    /// Shape accepted by the CCCP solver.
    pub fn cccp(max_observed: usize, max_latent: usize, max_dim: usize) -> Self {
        MrfShape {
            max_observed,
            min_latent: 1,
            max_latent,
            max_dim,
            max_vars: 6,
            max_candidates: 4,
            latent_latent: false,
            node: NodePotential::Quadratic,
        }
    }
}

/// Random MRF plus a random point `μ` for its latent nodes.
///
/// Candidates are distinct ordered pairs drawn from the admissible pool,
/// priors are random non-uniform weights, and roughly a third of the edge
/// variables carry their own coupling.
pub fn random_mrf(rng: &mut SeededRng, shape: &MrfShape) -> Result<(PairwiseMrf, Vec<Vec<f64>>)> {
    let n_obs = int_in(rng, 1, shape.max_observed);
    let n_lat = int_in(rng, shape.min_latent, shape.max_latent);
    let d = int_in(rng, 1, shape.max_dim);
    let observed: Vec<Vec<f64>> = (0..n_obs).map(|_| rng.normal_vec(d)).collect();
    let latent: Vec<Vec<f64>> = (0..n_lat).map(|_| rng.normal_vec(d)).collect();
    let mu: Vec<Vec<f64>> = (0..n_lat).map(|_| rng.normal_vec(d)).collect();
    let total = n_obs + n_lat;

    let mut pool = Vec::new();
    for s in 0..total {
        for t in 0..total {
            if shape.latent_latent || s < n_obs || t < n_obs {
                pool.push(Edge::new(s, t));
            }
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let n_vars = int_in(rng, 1, shape.max_vars);
    let mut prior = StructuralPrior::default();
    for _ in 0..n_vars {
        let k = int_in(rng, 1, shape.max_candidates.min(pool.len()));
        // partial Fisher-Yates over a copy of the pool
        let mut p = pool.clone();
        for a in 0..k {
            let b = int_in(rng, a, p.len() - 1);
            p.swap(a, b);
        }
        p.truncate(k);
        let weights: Vec<f64> = (0..k).map(|_| real_in(rng, 0.2, 1.0)).collect();
        let mut ev = EdgeVariable::from_weights(p, &weights)?;
        if rng.uniform() < 1.0 / 3.0 {
            ev = ev.with_coupling(gaussian_mat(rng, d, d, scale));
        }
        prior.push(ev);
    }
    let w = gaussian_mat(rng, d, d, scale);
    let beta = real_in(rng, 0.3, 3.0);
    let nodes = NodeSet::new(observed, latent)?;
    let mrf = PairwiseMrf::new(nodes, prior, PotentialSpec::new(shape.node, w), beta)?;
    Ok((mrf, mu))
}

/// `n` standard-normal patterns in `R^d` whose pairwise `|cos|` is below
/// `max_cos`, by rejection.
pub fn separated_patterns(rng: &mut SeededRng, n: usize, d: usize, max_cos: f64) -> Mat {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let x = rng.normal_vec(d);
        let ok = rows.iter().all(|y| {
            let c = dot(&x, y) / (norm_sq(&x) * norm_sq(y)).sqrt();
            c.abs() < max_cos
        });
        if ok {
            rows.push(x);
        }
    }
    Mat::from_rows(&rows).expect("patterns are finite")
}

/// `x` plus a random perturbation of norm exactly `radius`.
pub fn perturb(rng: &mut SeededRng, x: &[f64], radius: f64) -> Vec<f64> {
    let e = rng.normal_vec(x.len());
    let s = radius / norm_sq(&e).sqrt();
    x.iter().zip(&e).map(|(a, b)| a + s * b).collect()
}

/// Two point-symmetric Gaussian clusters: `per_cluster` draws around
/// `center` with standard deviation `spread`, followed by their negatives.
pub fn mirrored_clusters(rng: &mut SeededRng, center: &[f64], per_cluster: usize, spread: f64) -> Mat {
    let d = center.len();
    let pos: Vec<Vec<f64>> = (0..per_cluster)
        .map(|_| center.iter().zip(rng.normal_vec(d)).map(|(c, e)| c + spread * e).collect())
        .collect();
    let neg: Vec<Vec<f64>> = pos.iter().map(|x| x.iter().map(|v| -v).collect()).collect();
    Mat::from_rows(&[pos, neg].concat()).expect("cluster points are finite")
}

/// `m` Gaussian rows rescaled to a common norm `r`.
pub fn common_norm_rows(rng: &mut SeededRng, m: usize, d: usize, r: f64) -> Mat {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let x = rng.normal_vec(d);
            let s = r / norm_sq(&x).sqrt();
            x.iter().map(|v| v * s).collect()
        })
        .collect();
    Mat::from_rows(&rows).expect("rows are finite")
}

/// Layered network with Gaussian values and weights (scaled by
/// `1/√fan_in`), precisions in `[0.5, 2)` and dense sender sets.
pub fn random_pcn(rng: &mut SeededRng, sizes: &[usize], mode: EdgePriorMode, beta: f64) -> Result<PcnNetwork> {
    let mut layers = Vec::with_capacity(sizes.len());
    for (l, &size) in sizes.iter().enumerate() {
        let values = rng.normal_vec(size);
        if l == 0 {
            layers.push(PcnLayer::input(values));
        } else {
            let fan_in = sizes[l - 1];
            let w = gaussian_mat(rng, size, fan_in, 1.0 / (fan_in as f64).sqrt());
            let k = (0..size).map(|_| real_in(rng, 0.5, 2.0)).collect();
            layers.push(PcnLayer::hidden(values, k, w));
        }
    }
    PcnNetwork::new(layers, mode, beta)
}

/// Posterior whose rows are `softmax(β·z)` of standard-normal logits, with
/// candidate counts drawn from `1..=max_candidates`.
pub fn random_posterior(rng: &mut SeededRng, vars: usize, max_candidates: usize, beta: f64) -> EdgePosterior {
    let rows = (0..vars)
        .map(|_| {
            let n = int_in(rng, 1, max_candidates);
            softmax(&rng.normal_vec(n), beta).expect("finite logits and positive beta")
        })
        .collect();
    EdgePosterior::new(rows).expect("softmax rows are normalized")
}

//! Collapsed variational free energy of a latent-node MRF and the CCCP
//! fixed-point solver.
//!
//! Edge variables are summed out exactly and the Gaussian recognition density
//! is collapsed to its mean (zeroth-order Laplace), giving
//!
//! ```text
//! F(μ) = -Σ_i ln Σ_c exp(ln p(E_i = c) + β ψ_ic(μ)) - Σ_v β ψ_v(μ)
//! ```
//!
//! which equals `-ln Σ_E p(x, μ, E)` up to the constant `ln Z`. The gradient
//! is the posterior expectation of the per-configuration gradient, i.e. a
//! softmax-weighted sum.
//!
//! With quadratic node potentials and every edge touching at most one latent
//! node, `F` splits into the convex `½β Σ‖μ_j‖²` plus a concave log-sum-exp
//! part, and the CCCP update
//!
//! ```text
//! μ_j* = Σ_i Σ_c p(E_i = c | x, μ) ∂ψ_ic/∂μ_j
//! ```
//!
//! never increases `F`. All latent nodes are updated synchronously from the
//! current means. Contributions are accumulated in edge-variable order, then
//! candidate order.

use crate::error::{Error, Result};
use crate::mrf::{NodePotential, PairwiseMrf};
use crate::numerics::{axpy, log_sum_exp, max_abs, normalize_log_weights};

/// How a CCCP update is normalized per latent node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointNormalization {
    /// Posterior-weighted sum of edge gradients (the literal fixed point).
    RawSum,
    /// The raw sum divided by the total posterior mass the latent receives.
    /// Latents that receive no mass keep their current mean.
    WeightedMean,
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

/// `F(μ)`; constant offset `ln Z` omitted.
pub fn free_energy(mrf: &PairwiseMrf, mu: &[Vec<f64>]) -> Result<f64> {
    mrf.nodes().check_means(mu)?;
    let mut edge_sum = 0.0;
    for i in 0..mrf.num_edge_vars() {
        edge_sum += log_sum_exp(&mrf.edge_logits_at(mu, i)?)?;
    }
    Ok(-edge_sum - mrf.node_log_potential_at(mu))
}

/// For candidate `c` of edge variable `i`, adds `weight · ∂ψ_ic/∂μ` into
/// `acc`, one entry per latent node. A self-edge on a latent node gets both
/// terms.
fn add_edge_grad(
    mrf: &PairwiseMrf,
    mu: &[Vec<f64>],
    i: usize,
    c: usize,
    weight: f64,
    acc: &mut [Vec<f64>],
) {
    let nodes = mrf.nodes();
    let e = mrf.edge_vars()[i].candidates()[c];
    let w = mrf.coupling(i);
    if let Some(t) = nodes.latent_slot(e.target) {
        // ∂(x_tᵀ W x_s)/∂x_t = W x_s
        axpy(&mut acc[t], weight, &w.matvec(nodes.value_at(mu, e.source)));
    }
    if let Some(s) = nodes.latent_slot(e.source) {
        // ∂(x_tᵀ W x_s)/∂x_s = Wᵀ x_t
        axpy(&mut acc[s], weight, &w.t_matvec(nodes.value_at(mu, e.target)));
    }
}

fn add_node_grad(mrf: &PairwiseMrf, mu: &[Vec<f64>], scale: f64, acc: &mut [Vec<f64>]) {
    if mrf.potentials().node == NodePotential::Quadratic {
        // ∂(-Σ_v β ψ_v)/∂μ_j = β μ_j
        for (a, m) in acc.iter_mut().zip(mu) {
            axpy(a, scale * mrf.beta(), m);
        }
    }
}

fn zeros_like(mu: &[Vec<f64>]) -> Vec<Vec<f64>> {
    mu.iter().map(|m| vec![0.0; m.len()]).collect()
}

/// Analytic `∂F/∂μ_j` for every latent node.
pub fn free_energy_grad(mrf: &PairwiseMrf, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    mrf.nodes().check_means(mu)?;
    let mut grad = zeros_like(mu);
    for i in 0..mrf.num_edge_vars() {
        let p = normalize_log_weights(&mrf.edge_logits_at(mu, i)?)?;
        for (c, &pc) in p.iter().enumerate() {
            if pc > 0.0 {
                add_edge_grad(mrf, mu, i, c, -mrf.beta() * pc, &mut grad);
            }
        }
    }
    add_node_grad(mrf, mu, 1.0, &mut grad);
    Ok(grad)
}

/// `-∂/∂μ ln p(x, μ, E = config)`, the per-configuration gradient whose
/// posterior expectation is [`free_energy_grad`].
pub fn config_grad(mrf: &PairwiseMrf, mu: &[Vec<f64>], config: &[usize]) -> Result<Vec<Vec<f64>>> {
    mrf.nodes().check_means(mu)?;
    if config.len() != mrf.num_edge_vars() {
        return Err(Error::Shape(format!(
            "configuration of length {} for {} edge variables",
            config.len(),
            mrf.num_edge_vars()
        )));
    }
    let mut grad = zeros_like(mu);
    for (i, &c) in config.iter().enumerate() {
        let n = mrf.edge_vars()[i].len();
        if c >= n {
            return Err(Error::IndexOutOfRange {
                what: "candidate",
                index: c,
                len: n,
            });
        }
        add_edge_grad(mrf, mu, i, c, -mrf.beta(), &mut grad);
    }
    add_node_grad(mrf, mu, 1.0, &mut grad);
    Ok(grad)
}

/// Checks the preconditions of [`cccp_step`].
pub fn check_cccp(mrf: &PairwiseMrf) -> Result<()> {
    if mrf.potentials().node != NodePotential::Quadratic {
        return Err(Error::NonQuadratic);
    }
    let nodes = mrf.nodes();
    for (i, ev) in mrf.edge_vars().iter().enumerate() {
        for e in ev.candidates() {
            if nodes.latent_slot(e.source).is_some() && nodes.latent_slot(e.target).is_some() {
                return Err(Error::LatentLatentEdge(i));
            }
        }
    }
    Ok(())
}

/// One synchronous CCCP update of all latent means.
pub fn cccp_step(
    mrf: &PairwiseMrf,
    mu: &[Vec<f64>],
    norm: FixedPointNormalization,
) -> Result<Vec<Vec<f64>>> {
    check_cccp(mrf)?;
    mrf.nodes().check_means(mu)?;
    step_unchecked(mrf, mu, norm)
}

fn step_unchecked(
    mrf: &PairwiseMrf,
    mu: &[Vec<f64>],
    norm: FixedPointNormalization,
) -> Result<Vec<Vec<f64>>> {
    let nodes = mrf.nodes();
    let mut next = zeros_like(mu);
    let mut mass = vec![0.0; mu.len()];
    for i in 0..mrf.num_edge_vars() {
        let p = normalize_log_weights(&mrf.edge_logits_at(mu, i)?)?;
        for (c, &pc) in p.iter().enumerate() {
            if pc > 0.0 {
                add_edge_grad(mrf, mu, i, c, pc, &mut next);
                let e = mrf.edge_vars()[i].candidates()[c];
                for idx in [e.source, e.target] {
                    if let Some(j) = nodes.latent_slot(idx) {
                        mass[j] += pc;
                    }
                }
            }
        }
    }
    if norm == FixedPointNormalization::WeightedMean {
        for (j, m) in next.iter_mut().enumerate() {
            if mass[j] > 0.0 {
                m.iter_mut().for_each(|x| *x /= mass[j]);
            } else {
                m.copy_from_slice(&mu[j]);
            }
        }
    }
    Ok(next)
}

/// Result of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct CccpState {
    pub mu: Vec<Vec<f64>>,
    /// Number of updates applied.
    pub iteration: usize,
    /// `F` at the initial point and after every update (`iteration + 1` entries).
    pub f_trace: Vec<f64>,
    /// `‖∂F/∂μ‖∞` at the same points as `f_trace`.
    pub grad_trace: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl CccpState {
    pub fn final_energy(&self) -> f64 {
        *self.f_trace.last().expect("trace is never empty")
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self.grad_trace.last().expect("trace is never empty")
    }

    /// `(iteration, F, grad_norm)` rows.
    pub fn trace_rows(&self) -> Vec<[f64; 3]> {
        self.f_trace
            .iter()
            .zip(&self.grad_trace)
            .enumerate()
            .map(|(t, (f, g))| [t as f64, *f, *g])
            .collect()
    }
}

pub(crate) fn grad_inf_norm(grad: &[Vec<f64>]) -> f64 {
    grad.iter().map(|g| max_abs(g)).fold(0.0, f64::max)
}

/// Iterates [`cccp_step`] until `|F_t - F_{t-1}| < tol` or `max_iter` updates.
pub fn solve(
    mrf: &PairwiseMrf,
    mu0: Vec<Vec<f64>>,
    norm: FixedPointNormalization,
    tol: f64,
    max_iter: usize,
) -> Result<CccpState> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    check_cccp(mrf)?;
    mrf.nodes().check_means(&mu0)?;

    let mut mu = mu0;
    let f0 = free_energy(mrf, &mu)?;
    if !f0.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut state = CccpState {
        f_trace: vec![f0],
        grad_trace: vec![grad_inf_norm(&free_energy_grad(mrf, &mu)?)],
        mu: Vec::new(),
        iteration: 0,
        converged: false,
        tol,
        max_iter,
    };
    for t in 1..=max_iter {
        let next = step_unchecked(mrf, &mu, norm)?;
        if next.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: t });
        }
        mu = next;
        let f = free_energy(mrf, &mu).map_err(|_| Error::Diverged { iteration: t })?;
        if !f.is_finite() {
            return Err(Error::Diverged { iteration: t });
        }
        let prev = *state.f_trace.last().unwrap();
        state.f_trace.push(f);
        state
            .grad_trace
            .push(grad_inf_norm(&free_energy_grad(mrf, &mu)?));
        state.iteration = t;
        if (f - prev).abs() < tol {
            state.converged = true;
            break;
        }
    }
    state.mu = mu;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{Edge, EdgeVariable, NodeSet, PotentialSpec, StructuralPrior};
    use crate::numerics::Mat;

    fn single_edge(x: f64, node: NodePotential) -> PairwiseMrf {
        let nodes = NodeSet::new(vec![vec![x]], vec![vec![0.0]]).unwrap();
        let prior =
            StructuralPrior::new(vec![EdgeVariable::uniform(vec![Edge::new(0, 1)]).unwrap()]);
        PairwiseMrf::new(nodes, prior, PotentialSpec::new(node, Mat::identity(1)), 1.0).unwrap()
    }

    #[test]
    fn no_latent_uniform_prior_energy() {
        let nodes = NodeSet::observed_only(vec![vec![0.0]; 5]).unwrap();
        let prior = StructuralPrior::new(vec![
            EdgeVariable::uniform(vec![Edge::new(0, 1), Edge::new(2, 1)]).unwrap(),
            EdgeVariable::uniform(vec![Edge::new(0, 4), Edge::new(2, 4), Edge::new(3, 4)]).unwrap(),
        ]);
        let mrf = PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::None, Mat::zeros(1, 1)),
            1.0,
        )
        .unwrap();
        let f = free_energy(&mrf, &[]).unwrap();
        // Zero potentials leave only the normalized log-prior, whose lse is 0.
        assert!(f.abs() < 1e-14);
    }

    #[test]
    fn single_edge_energy_hand_formula() {
        // d = 1, F(μ) = -xμ + ½x² + ½μ²; at μ = x this is 0.
        let x = 1.7;
        let mrf = single_edge(x, NodePotential::Quadratic);
        for mu in [x, -0.4, 3.0] {
            let f = free_energy(&mrf, &[vec![mu]]).unwrap();
            let hand = -x * mu + 0.5 * x * x + 0.5 * mu * mu;
            assert!((f - hand).abs() < 1e-14, "mu={mu}");
        }
        assert!(free_energy(&mrf, &[vec![x]]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn single_edge_cccp_one_step() {
        let x = -2.5;
        let mrf = single_edge(x, NodePotential::Quadratic);
        let next = cccp_step(&mrf, &[vec![10.0]], FixedPointNormalization::RawSum).unwrap();
        assert_eq!(next, vec![vec![x]]);
        let g = free_energy_grad(&mrf, &next).unwrap();
        assert!(g[0][0].abs() < 1e-12);
    }

    #[test]
    fn node_only_gradient() {
        let nodes = NodeSet::new(vec![vec![1.0, 1.0]], vec![vec![0.5, -2.0]]).unwrap();
        let beta = 1.5;
        let mrf = PairwiseMrf::new(
            nodes,
            StructuralPrior::default(),
            PotentialSpec::new(NodePotential::Quadratic, Mat::identity(2)),
            beta,
        )
        .unwrap();
        let mu = vec![vec![0.3, -1.1]];
        let g = free_energy_grad(&mrf, &mu).unwrap();
        assert_eq!(g, vec![vec![beta * 0.3, beta * -1.1]]);
    }

    #[test]
    fn cccp_requires_quadratic() {
        let mrf = single_edge(1.0, NodePotential::None);
        assert_eq!(
            cccp_step(&mrf, &[vec![0.0]], FixedPointNormalization::RawSum),
            Err(Error::NonQuadratic)
        );
        let err = cccp_step(&mrf, &[vec![0.0]], FixedPointNormalization::RawSum).unwrap_err();
        assert_eq!(err.to_string(), "CCCP requires quadratic node potentials");
    }

    #[test]
    fn cccp_rejects_latent_latent_edges() {
        let nodes = NodeSet::new(vec![], vec![vec![0.0], vec![1.0]]).unwrap();
        let prior =
            StructuralPrior::new(vec![EdgeVariable::uniform(vec![Edge::new(0, 1)]).unwrap()]);
        let mrf = PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::Quadratic, Mat::identity(1)),
            1.0,
        )
        .unwrap();
        assert_eq!(check_cccp(&mrf), Err(Error::LatentLatentEdge(0)));
    }

    #[test]
    fn solve_from_fixed_point() {
        let x = 0.75;
        let mrf = single_edge(x, NodePotential::Quadratic);
        let st = solve(&mrf, vec![vec![x]], FixedPointNormalization::RawSum, 1e-8, 50).unwrap();
        assert!(st.converged);
        assert_eq!(st.iteration, 1);
        assert!((st.mu[0][0] - x).abs() < 1e-12);
        assert_eq!(st.f_trace.len(), 2);
        assert_eq!(st.trace_rows()[1][0], 1.0);
    }

    #[test]
    fn solve_validates_arguments() {
        let mrf = single_edge(1.0, NodePotential::Quadratic);
        let mu = vec![vec![0.0]];
        assert!(solve(&mrf, mu.clone(), FixedPointNormalization::RawSum, 0.0, 5).is_err());
        assert!(solve(&mrf, mu.clone(), FixedPointNormalization::RawSum, 1e-8, 0).is_err());
        assert!(solve(&mrf, vec![], FixedPointNormalization::RawSum, 1e-8, 5).is_err());
    }

    #[test]
    fn weighted_mean_keeps_isolated_latent() {
        let nodes = NodeSet::new(vec![vec![2.0]], vec![vec![0.0], vec![5.0]]).unwrap();
        let prior =
            StructuralPrior::new(vec![EdgeVariable::uniform(vec![Edge::new(0, 1)]).unwrap()]);
        let mrf = PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::Quadratic, Mat::identity(1)),
            1.0,
        )
        .unwrap();
        let mu = vec![vec![0.0], vec![5.0]];
        let raw = cccp_step(&mrf, &mu, FixedPointNormalization::RawSum).unwrap();
        assert_eq!(raw, vec![vec![2.0], vec![0.0]]);
        let wm = cccp_step(&mrf, &mu, FixedPointNormalization::WeightedMean).unwrap();
        assert_eq!(wm, vec![vec![2.0], vec![5.0]]);
    }
}

//! Pairwise Markov random field with a factorized structural prior over
//! which edges exist.
//!
//! Nodes are indexed with observed nodes first (`0..n_observed`) followed by
//! latent nodes. Every latent edge variable picks exactly one directed edge
//! `(source, target)` from its candidate list; its edge potential is the
//! bilinear form `x_tᵀ W x_s`.
//!
//! The partition function `Z` is never computed. [`PairwiseMrf::log_joint`]
//! returns `ln p(x, E) + ln Z`, and every quantity derived from it
//! (posteriors, free-energy differences, gradients) is independent of `Z`.

use std::collections::HashSet;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::{check_beta, check_finite, log_sum_exp, norm_sq, Mat};

/// Tolerance on `|lse(log_prior)|` accepted by [`EdgeVariable::new`].
pub const PRIOR_NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    observed: Vec<Vec<f64>>,
    latent: Vec<Vec<f64>>,
    dim: usize,
}

impl NodeSet {
    pub fn new(observed: Vec<Vec<f64>>, latent: Vec<Vec<f64>>) -> Result<Self> {
        let dim = observed
            .first()
            .or(latent.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Shape("node set has no nodes".into()))?;
        if dim == 0 {
            return Err(Error::Shape("node dimension must be at least 1".into()));
        }
        for v in observed.iter().chain(&latent) {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "node of dimension {} in a set of dimension {dim}",
                    v.len()
                )));
            }
            check_finite("node value", v)?;
        }
        Ok(NodeSet {
            observed,
            latent,
            dim,
        })
    }

    pub fn observed_only(observed: Vec<Vec<f64>>) -> Result<Self> {
        NodeSet::new(observed, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn num_latent(&self) -> usize {
        self.latent.len()
    }

    pub fn len(&self) -> usize {
        self.observed.len() + self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observed(&self) -> &[Vec<f64>] {
        &self.observed
    }

    pub fn latent(&self) -> &[Vec<f64>] {
        &self.latent
    }

    pub fn observed_range(&self) -> Range<usize> {
        0..self.observed.len()
    }

    pub fn latent_range(&self) -> Range<usize> {
        self.observed.len()..self.len()
    }

    /// Position of node `idx` among the latent nodes, if it is latent.
    pub fn latent_slot(&self, idx: usize) -> Option<usize> {
        idx.checked_sub(self.observed.len())
            .filter(|&j| j < self.latent.len())
    }

    /// Value of node `idx` with latent nodes read from `mu`.
    pub fn value_at<'a>(&'a self, mu: &'a [Vec<f64>], idx: usize) -> &'a [f64] {
        match self.latent_slot(idx) {
            Some(j) => &mu[j],
            None => &self.observed[idx],
        }
    }

    pub fn check_means(&self, mu: &[Vec<f64>]) -> Result<()> {
        if mu.len() != self.latent.len() {
            return Err(Error::Shape(format!(
                "{} means for {} latent nodes",
                mu.len(),
                self.latent.len()
            )));
        }
        for m in mu {
            if m.len() != self.dim {
                return Err(Error::Shape(format!(
                    "mean of dimension {} for nodes of dimension {}",
                    m.len(),
                    self.dim
                )));
            }
            check_finite("latent mean", m)?;
        }
        Ok(())
    }
}

/// Directed candidate edge: `source` sends to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

impl Edge {
    pub fn new(source: usize, target: usize) -> Self {
        Edge { source, target }
    }
}

/// One latent categorical variable choosing among candidate edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVariable {
    candidates: Vec<Edge>,
    log_prior: Vec<f64>,
    coupling: Option<Mat>,
}

impl EdgeVariable {
    /// `log_prior` must already be normalized; `-inf` entries mask a candidate.
    pub fn new(candidates: Vec<Edge>, log_prior: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidPrior("edge variable has no candidates".into()));
        }
        if candidates.len() != log_prior.len() {
            return Err(Error::InvalidPrior(format!(
                "{} candidates but {} prior entries",
                candidates.len(),
                log_prior.len()
            )));
        }
        let mut seen = HashSet::with_capacity(candidates.len());
        for e in &candidates {
            if !seen.insert(*e) {
                return Err(Error::InvalidPrior(format!(
                    "duplicate candidate ({}, {})",
                    e.source, e.target
                )));
            }
        }
        let lse = log_sum_exp(&log_prior)
            .map_err(|e| Error::InvalidPrior(format!("log prior: {e}")))?;
        if !(lse.abs() <= PRIOR_NORMALIZATION_TOL) {
            return Err(Error::InvalidPrior(format!(
                "log prior is not normalized (logsumexp = {lse})"
            )));
        }
        Ok(EdgeVariable {
            candidates,
            log_prior,
            coupling: None,
        })
    }

    pub fn uniform(candidates: Vec<Edge>) -> Result<Self> {
        let n = candidates.len().max(1) as f64;
        let lp = vec![-n.ln(); candidates.len()];
        EdgeVariable::new(candidates, lp)
    }

    /// Prior proportional to non-negative `weights`; a zero weight masks the candidate.
    pub fn from_weights(candidates: Vec<Edge>, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidPrior(
                "prior weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidPrior("prior weights sum to zero".into()));
        }
        let lp = weights.iter().map(|w| (w / total).ln()).collect();
        EdgeVariable::new(candidates, lp)
    }

    /// Overrides the model-level bilinear coupling for this variable's edges.
    pub fn with_coupling(mut self, w: Mat) -> Self {
        self.coupling = Some(w);
        self
    }

    pub fn candidates(&self) -> &[Edge] {
        &self.candidates
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    pub fn coupling(&self) -> Option<&Mat> {
        self.coupling.as_ref()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Sets one candidate's prior to zero and renormalizes the rest.
    pub fn mask(&mut self, cand: usize) -> Result<()> {
        if cand >= self.len() {
            return Err(Error::IndexOutOfRange {
                what: "candidate",
                index: cand,
                len: self.len(),
            });
        }
        let mut lp = self.log_prior.clone();
        lp[cand] = f64::NEG_INFINITY;
        let lse = log_sum_exp(&lp)?;
        if lse == f64::NEG_INFINITY {
            return Err(Error::InvalidPrior("masking would remove every candidate".into()));
        }
        self.log_prior = lp.iter().map(|x| x - lse).collect();
        Ok(())
    }
}

/// Factorized prior `p(E) = Π_i p(E_i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructuralPrior {
    edge_vars: Vec<EdgeVariable>,
}

impl StructuralPrior {
    pub fn new(edge_vars: Vec<EdgeVariable>) -> Self {
        StructuralPrior { edge_vars }
    }

    pub fn edge_vars(&self) -> &[EdgeVariable] {
        &self.edge_vars
    }

    pub fn edge_vars_mut(&mut self) -> &mut [EdgeVariable] {
        &mut self.edge_vars
    }

    pub fn push(&mut self, ev: EdgeVariable) {
        self.edge_vars.push(ev);
    }

    pub fn len(&self) -> usize {
        self.edge_vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_vars.is_empty()
    }

    /// One variable per query; each query receives from exactly one key.
    pub fn cross_attention(keys: Range<usize>, queries: Range<usize>) -> Result<Self> {
        queries
            .map(|q| EdgeVariable::uniform(keys.clone().map(|k| Edge::new(k, q)).collect()))
            .collect::<Result<Vec<_>>>()
            .map(StructuralPrior::new)
    }

    /// One variable per node over all nodes as senders, the node itself included.
    pub fn self_attention(nodes: Range<usize>) -> Result<Self> {
        StructuralPrior::cross_attention(nodes.clone(), nodes)
    }

    /// One variable per input over the slots as targets, so slots compete
    /// for each input.
    pub fn slot(inputs: Range<usize>, slots: Range<usize>) -> Result<Self> {
        inputs
            .map(|x| EdgeVariable::uniform(slots.clone().map(|z| Edge::new(x, z)).collect()))
            .collect::<Result<Vec<_>>>()
            .map(StructuralPrior::new)
    }

    /// Slot prior plus, for every slot and every memory block, a variable
    /// choosing one memory of that block to send into the slot.
    ///
    /// `memory_blocks[b]` lists the node indices of block `b`'s memories;
    /// blocks without memories contribute no variable. Memory edges use
    /// `memory_coupling`.
    pub fn block_slot(
        inputs: Range<usize>,
        slots: Range<usize>,
        memory_blocks: &[Range<usize>],
        memory_coupling: &Mat,
    ) -> Result<Self> {
        let mut prior = StructuralPrior::slot(inputs, slots.clone())?;
        for z in slots {
            for block in memory_blocks.iter().filter(|b| !b.is_empty()) {
                let ev = EdgeVariable::uniform(block.clone().map(|m| Edge::new(m, z)).collect())?
                    .with_coupling(memory_coupling.clone());
                prior.push(ev);
            }
        }
        Ok(prior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodePotential {
    None,
    /// `ψ_v(x) = -½‖x‖²`
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub node: NodePotential,
    /// Default bilinear coupling `W` (`d × d`), `ψ_e(x_s, x_t) = x_tᵀ W x_s`.
    pub coupling: Mat,
}

impl PotentialSpec {
    pub fn new(node: NodePotential, coupling: Mat) -> Self {
        PotentialSpec { node, coupling }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMrf {
    nodes: NodeSet,
    prior: StructuralPrior,
    potentials: PotentialSpec,
    beta: f64,
}

impl PairwiseMrf {
    pub fn new(
        nodes: NodeSet,
        prior: StructuralPrior,
        potentials: PotentialSpec,
        beta: f64,
    ) -> Result<Self> {
        check_beta(beta)?;
        let d = nodes.dim();
        let check_w = |w: &Mat| -> Result<()> {
            if w.shape() != (d, d) {
                return Err(Error::Shape(format!(
                    "coupling is {}x{}, nodes have dimension {d}",
                    w.rows(),
                    w.cols()
                )));
            }
            Ok(())
        };
        check_w(&potentials.coupling)?;
        let n = nodes.len();
        for ev in prior.edge_vars() {
            if let Some(w) = ev.coupling() {
                check_w(w)?;
            }
            for e in ev.candidates() {
                for idx in [e.source, e.target] {
                    if idx >= n {
                        return Err(Error::IndexOutOfRange {
                            what: "node",
                            index: idx,
                            len: n,
                        });
                    }
                }
            }
        }
        Ok(PairwiseMrf {
            nodes,
            prior,
            potentials,
            beta,
        })
    }

    /// Same as [`PairwiseMrf::new`] with `β = 1/√d`.
    pub fn with_scaled_temperature(
        nodes: NodeSet,
        prior: StructuralPrior,
        potentials: PotentialSpec,
    ) -> Result<Self> {
        let beta = 1.0 / (nodes.dim() as f64).sqrt();
        PairwiseMrf::new(nodes, prior, potentials, beta)
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn prior(&self) -> &StructuralPrior {
        &self.prior
    }

    pub fn potentials(&self) -> &PotentialSpec {
        &self.potentials
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    pub fn edge_vars(&self) -> &[EdgeVariable] {
        self.prior.edge_vars()
    }

    pub fn num_edge_vars(&self) -> usize {
        self.prior.len()
    }

    /// Replaces the stored latent means.
    pub fn set_latent(&mut self, mu: Vec<Vec<f64>>) -> Result<()> {
        self.nodes.check_means(&mu)?;
        self.nodes.latent = mu;
        Ok(())
    }

    pub fn with_latent(mut self, mu: Vec<Vec<f64>>) -> Result<Self> {
        self.set_latent(mu)?;
        Ok(self)
    }

    /// Coupling used by edge variable `ev`.
    pub fn coupling(&self, ev: usize) -> &Mat {
        self.prior.edge_vars[ev]
            .coupling()
            .unwrap_or(&self.potentials.coupling)
    }

    fn edge_var(&self, ev: usize) -> Result<&EdgeVariable> {
        self.prior.edge_vars.get(ev).ok_or(Error::IndexOutOfRange {
            what: "edge variable",
            index: ev,
            len: self.prior.len(),
        })
    }

    /// `ψ_e = x_tᵀ W x_s` for one candidate, latent nodes read from `mu`.
    pub(crate) fn edge_potential_unchecked(&self, mu: &[Vec<f64>], ev: usize, cand: usize) -> f64 {
        let e = self.prior.edge_vars[ev].candidates[cand];
        let xs = self.nodes.value_at(mu, e.source);
        let xt = self.nodes.value_at(mu, e.target);
        self.coupling(ev).bilinear(xt, xs)
    }

    pub(crate) fn edge_logit_unchecked(&self, mu: &[Vec<f64>], ev: usize, cand: usize) -> f64 {
        let lp = self.prior.edge_vars[ev].log_prior[cand];
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.beta * self.edge_potential_unchecked(mu, ev, cand)
    }

    /// `ln p(E_ev = cand) + β ψ_e`, with the stored latent means.
    pub fn edge_logit(&self, ev: usize, cand: usize) -> Result<f64> {
        self.edge_logit_at(&self.nodes.latent, ev, cand)
    }

    pub fn edge_logit_at(&self, mu: &[Vec<f64>], ev: usize, cand: usize) -> Result<f64> {
        self.nodes.check_means(mu)?;
        let var = self.edge_var(ev)?;
        if cand >= var.len() {
            return Err(Error::IndexOutOfRange {
                what: "candidate",
                index: cand,
                len: var.len(),
            });
        }
        Ok(self.edge_logit_unchecked(mu, ev, cand))
    }

    /// All candidate logits of one edge variable.
    pub fn edge_logits_at(&self, mu: &[Vec<f64>], ev: usize) -> Result<Vec<f64>> {
        self.nodes.check_means(mu)?;
        let var = self.edge_var(ev)?;
        Ok((0..var.len())
            .map(|c| self.edge_logit_unchecked(mu, ev, c))
            .collect())
    }

    /// `Σ_v β ψ_v` over observed and latent nodes.
    pub fn node_log_potential_at(&self, mu: &[Vec<f64>]) -> f64 {
        match self.potentials.node {
            NodePotential::None => 0.0,
            NodePotential::Quadratic => {
                let sq: f64 = self
                    .nodes
                    .observed
                    .iter()
                    .chain(mu.iter())
                    .map(|x| norm_sq(x))
                    .sum();
                -0.5 * self.beta * sq
            }
        }
    }

    /// Unnormalized `ln p(x, E)` for one configuration (candidate index per
    /// edge variable), with the stored latent means.
    ///
    /// Accumulation order: node term first, then `edge_logit(i, config[i])`
    /// for `i = 0, 1, ...`.
    pub fn log_joint(&self, config: &[usize]) -> Result<f64> {
        self.log_joint_at(&self.nodes.latent, config)
    }

    pub fn log_joint_at(&self, mu: &[Vec<f64>], config: &[usize]) -> Result<f64> {
        self.nodes.check_means(mu)?;
        if config.len() != self.prior.len() {
            return Err(Error::Shape(format!(
                "configuration of length {} for {} edge variables",
                config.len(),
                self.prior.len()
            )));
        }
        let mut acc = self.node_log_potential_at(mu);
        for (i, &c) in config.iter().enumerate() {
            let n = self.prior.edge_vars[i].len();
            if c >= n {
                return Err(Error::IndexOutOfRange {
                    what: "candidate",
                    index: c,
                    len: n,
                });
            }
            acc += self.edge_logit_unchecked(mu, i, c);
        }
        Ok(acc)
    }
}

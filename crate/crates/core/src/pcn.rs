//! Predictive coding on a layered network of scalar nodes.
//!
//! Layer 0 is observed. Every node `j` of layer `l ≥ 1` is an edge variable
//! over its candidate senders `i` in layer `l - 1`; edge `(i, j)` carries the
//! prediction error `ε_ij = z_j - w_ji z_i` with the receiver's precision
//! `k_j`.
//!
//! Two energies are provided:
//!
//! * dense baseline: `E = ½ Σ_j Σ_i k_j ε_ij²` over all candidate edges;
//! * marginalized: `F = -Σ_j ln Σ_i (1/n_j) exp(-½ β k_j ε_ij²)`, with the
//!   edge variable summed out under a uniform prior over its `n_j` senders.
//!
//! With one sender per receiver `F = β E` exactly (the uniform prior term is
//! `ln 1 = 0`). Gradients are `∂/∂z` of these energies; descent follows `-∇`.
//! Precisions are fixed inputs.

use crate::error::{Error, Result};
use crate::numerics::{check_beta, check_finite, log_sum_exp, normalize_log_weights, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgePriorMode {
    DenseBaseline,
    Marginalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcnLayer {
    pub values: Vec<f64>,
    pub precisions: Vec<f64>,
    /// `size_l × size_{l-1}`, entry `(j, i)` is `w_ij`. `None` for layer 0.
    pub weights: Option<Mat>,
    /// Candidate senders per receiver; `None` means every node of the layer below.
    pub senders: Option<Vec<Vec<usize>>>,
}

impl PcnLayer {
    pub fn input(values: Vec<f64>) -> Self {
        let n = values.len();
        PcnLayer {
            values,
            precisions: vec![1.0; n],
            weights: None,
            senders: None,
        }
    }

    pub fn hidden(values: Vec<f64>, precisions: Vec<f64>, weights: Mat) -> Self {
        PcnLayer {
            values,
            precisions,
            weights: Some(weights),
            senders: None,
        }
    }

    pub fn with_senders(mut self, senders: Vec<Vec<usize>>) -> Self {
        self.senders = Some(senders);
        self
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcnNetwork {
    layers: Vec<PcnLayer>,
    senders: Vec<Vec<Vec<usize>>>,
    pub mode: EdgePriorMode,
    pub beta: f64,
}

/// Error on one candidate edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionError {
    pub layer: usize,
    pub receiver: usize,
    pub sender: usize,
    pub error: f64,
}

impl PcnNetwork {
    pub fn new(layers: Vec<PcnLayer>, mode: EdgePriorMode, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        let mut senders = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let size = layer.size();
            check_finite("node value", &layer.values)?;
            if layer.precisions.len() != size {
                return Err(Error::Shape(format!(
                    "layer {l}: {} precisions for {size} nodes",
                    layer.precisions.len()
                )));
            }
            if layer.precisions.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "layer {l}: precisions must be positive"
                )));
            }
            if l == 0 {
                if layer.weights.is_some() {
                    return Err(Error::Shape("layer 0 has no incoming weights".into()));
                }
                senders.push(Vec::new());
                continue;
            }
            let below = layers[l - 1].size();
            let w = layer
                .weights
                .as_ref()
                .ok_or_else(|| Error::Shape(format!("layer {l} is missing weights")))?;
            if w.shape() != (size, below) {
                return Err(Error::Shape(format!(
                    "layer {l}: weights are {}x{}, expected {size}x{below}",
                    w.rows(),
                    w.cols()
                )));
            }
            let s = match &layer.senders {
                None => vec![(0..below).collect::<Vec<_>>(); size],
                Some(s) => {
                    if s.len() != size {
                        return Err(Error::Shape(format!(
                            "layer {l}: sender lists for {} of {size} nodes",
                            s.len()
                        )));
                    }
                    for (j, list) in s.iter().enumerate() {
                        let mut sorted = list.clone();
                        sorted.sort_unstable();
                        sorted.dedup();
                        if list.is_empty() || sorted.len() != list.len() {
                            return Err(Error::InvalidPrior(format!(
                                "layer {l} node {j}: sender list must be non-empty and distinct"
                            )));
                        }
                        if let Some(&bad) = list.iter().find(|&&i| i >= below) {
                            return Err(Error::IndexOutOfRange {
                                what: "sender",
                                index: bad,
                                len: below,
                            });
                        }
                    }
                    s.clone()
                }
            };
            senders.push(s);
        }
        Ok(PcnNetwork {
            layers,
            senders,
            mode,
            beta,
        })
    }

    pub fn layers(&self) -> &[PcnLayer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(PcnLayer::size).collect()
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.values.clone()).collect()
    }

    pub fn senders(&self, layer: usize, receiver: usize) -> &[usize] {
        &self.senders[layer][receiver]
    }

    pub fn with_mode(mut self, mode: EdgePriorMode) -> Self {
        self.mode = mode;
        self
    }

    fn check_state(&self, mu: &[Vec<f64>]) -> Result<()> {
        if mu.len() != self.layers.len() || mu.iter().zip(&self.layers).any(|(m, l)| m.len() != l.size())
        {
            return Err(Error::Shape(format!(
                "state does not match layer sizes {:?}",
                self.sizes()
            )));
        }
        Ok(())
    }

    fn weight(&self, l: usize, j: usize, i: usize) -> f64 {
        self.layers[l].weights.as_ref().unwrap().get(j, i)
    }

    fn edge_error(&self, mu: &[Vec<f64>], l: usize, j: usize, i: usize) -> f64 {
        mu[l][j] - self.weight(l, j, i) * mu[l - 1][i]
    }

    /// Log-weights `-ln n_j - ½ β k_j ε_ij²` of receiver `j`'s senders.
    fn receiver_logits(&self, mu: &[Vec<f64>], l: usize, j: usize) -> Vec<f64> {
        let s = &self.senders[l][j];
        let k = self.layers[l].precisions[j];
        let lp = -(s.len() as f64).ln();
        s.iter()
            .map(|&i| {
                let e = self.edge_error(mu, l, j, i);
                lp - 0.5 * self.beta * k * e * e
            })
            .collect()
    }
}

pub fn prediction_errors(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<Vec<PredictionError>> {
    net.check_state(mu)?;
    let mut out = Vec::new();
    for l in 1..net.layers.len() {
        for j in 0..net.layers[l].size() {
            for &i in &net.senders[l][j] {
                out.push(PredictionError {
                    layer: l,
                    receiver: j,
                    sender: i,
                    error: net.edge_error(mu, l, j, i),
                });
            }
        }
    }
    Ok(out)
}

/// `½ Σ k_j ε_ij²` over every candidate edge.
pub fn baseline_energy(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<f64> {
    Ok(prediction_errors(net, mu)?
        .iter()
        .map(|e| 0.5 * net.layers[e.layer].precisions[e.receiver] * e.error * e.error)
        .sum())
}

/// `-Σ_j ln Σ_i (1/n_j) exp(-½ β k_j ε_ij²)`.
pub fn collapsed_energy(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<f64> {
    net.check_state(mu)?;
    let mut f = 0.0;
    for l in 1..net.layers.len() {
        for j in 0..net.layers[l].size() {
            f -= log_sum_exp(&net.receiver_logits(mu, l, j))?;
        }
    }
    Ok(f)
}

/// Energy of the network's mode.
pub fn energy(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<f64> {
    match net.mode {
        EdgePriorMode::DenseBaseline => baseline_energy(net, mu),
        EdgePriorMode::Marginalized => collapsed_energy(net, mu),
    }
}

/// Posterior weights over each receiver's senders, `[layer][receiver][k]`
/// aligned with [`PcnNetwork::senders`]. Layer 0 is empty.
pub fn sender_weights(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
    net.check_state(mu)?;
    let mut out = vec![Vec::new()];
    for l in 1..net.layers.len() {
        out.push(
            (0..net.layers[l].size())
                .map(|j| normalize_log_weights(&net.receiver_logits(mu, l, j)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(out)
}

fn zero_grad(net: &PcnNetwork) -> Vec<Vec<f64>> {
    net.layers.iter().map(|l| vec![0.0; l.size()]).collect()
}

/// `∂E/∂z` of the dense energy. A receiver collects `+k_j ε_ij` from every
/// incoming edge; a sender collects `-k_j ε_ij w_ij` from every outgoing edge.
pub fn pcn_baseline_grad(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    net.check_state(mu)?;
    let mut g = zero_grad(net);
    for l in 1..net.layers.len() {
        for j in 0..net.layers[l].size() {
            let k = net.layers[l].precisions[j];
            for &i in &net.senders[l][j] {
                let ke = k * net.edge_error(mu, l, j, i);
                g[l][j] += ke;
                g[l - 1][i] -= ke * net.weight(l, j, i);
            }
        }
    }
    Ok(g)
}

/// `∂F/∂z` of the collapsed energy: the baseline terms scaled by `β` and by
/// the softmax weight of each edge within its receiver's sender set.
pub fn pcn_marginal_grad(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    net.check_state(mu)?;
    let mut g = zero_grad(net);
    for l in 1..net.layers.len() {
        for j in 0..net.layers[l].size() {
            let k = net.layers[l].precisions[j];
            let p = normalize_log_weights(&net.receiver_logits(mu, l, j))?;
            for (&i, pi) in net.senders[l][j].iter().zip(&p) {
                let term = net.beta * pi * k * net.edge_error(mu, l, j, i);
                g[l][j] += term;
                g[l - 1][i] -= term * net.weight(l, j, i);
            }
        }
    }
    Ok(g)
}

pub fn grad(net: &PcnNetwork, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match net.mode {
        EdgePriorMode::DenseBaseline => pcn_baseline_grad(net, mu),
        EdgePriorMode::Marginalized => pcn_marginal_grad(net, mu),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxTrace {
    pub mu: Vec<Vec<f64>>,
    /// Energy before the first step and after each step.
    pub f_trace: Vec<f64>,
}

/// Euler gradient descent on the hidden layers with layer 0 clamped to
/// `observations`, starting from the network's stored values.
pub fn relax(
    net: &PcnNetwork,
    observations: &[f64],
    steps: usize,
    step_size: f64,
) -> Result<RelaxTrace> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {step_size}"
        )));
    }
    if observations.len() != net.layers[0].size() {
        return Err(Error::Shape(format!(
            "{} observations for an input layer of {}",
            observations.len(),
            net.layers[0].size()
        )));
    }
    check_finite("observation", observations)?;
    let mut mu = net.values();
    mu[0].copy_from_slice(observations);
    let mut f_trace = vec![energy(net, &mu)?];
    for t in 1..=steps {
        let g = grad(net, &mu)?;
        for (m, gl) in mu.iter_mut().zip(&g).skip(1) {
            for (x, gx) in m.iter_mut().zip(gl) {
                *x -= step_size * gx;
            }
        }
        let f = energy(net, &mu).map_err(|_| Error::Diverged { iteration: t })?;
        if !f.is_finite() || mu.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: t });
        }
        f_trace.push(f);
    }
    Ok(RelaxTrace { mu, f_trace })
}

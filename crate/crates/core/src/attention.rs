//! Non-iterative attention: exact edge posteriors of an all-observed MRF and
//! the posterior expectation of a linear value function.
//!
//! With the cross-attention prior (every query receives from exactly one key,
//! uniformly a priori) and coupling `W = W_Qᵀ W_K`, [`attend`] is the usual
//! softmax attention. [`closed_form_cross_attention`] computes the same thing
//! directly with explicit loops.
//!
//! Logits are canonicalized as `L_ij = β · q_iᵀ W_Qᵀ W_K k_j` with the softmax
//! over keys `j`. Rows are produced in edge-variable order.

use crate::error::{Error, Result};
use crate::mrf::{NodePotential, NodeSet, PairwiseMrf, PotentialSpec, StructuralPrior};
use crate::numerics::{axpy, check_beta, dot, normalize_log_weights, Mat};

/// Per-edge-variable categorical posteriors (rows of the attention matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePosterior {
    rows: Vec<Vec<f64>>,
}

impl EdgePosterior {
    /// Rows must be non-empty, non-negative and sum to one within `1e-10`.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.is_empty() {
                return Err(Error::InvalidArgument(format!("posterior row {i} is empty")));
            }
            if r.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "posterior row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "posterior row {i} sums to {s}"
                )));
            }
        }
        Ok(EdgePosterior { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        EdgePosterior { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn num_vars(&self) -> usize {
        self.rows.len()
    }

    /// Most probable candidate per variable, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &p)| {
                        if p > best.1 {
                            (k, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &EdgePosterior) -> f64 {
        assert_eq!(self.rows.len(), other.rows.len());
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| {
                assert_eq!(a.len(), b.len());
                a.iter().zip(b).map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Linear value function `V_i(E_i) = W_V · x_{source(E_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSpec {
    w_v: Mat,
}

impl ValueSpec {
    pub fn new(w_v: Mat) -> Self {
        ValueSpec { w_v }
    }

    pub fn identity(d: usize) -> Self {
        ValueSpec::new(Mat::identity(d))
    }

    pub fn matrix(&self) -> &Mat {
        &self.w_v
    }

    pub fn out_dim(&self) -> usize {
        self.w_v.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w_v.matvec(x)
    }

    pub(crate) fn check(&self, d: usize) -> Result<()> {
        if self.w_v.cols() != d {
            return Err(Error::Shape(format!(
                "value matrix has {} columns, nodes have dimension {d}",
                self.w_v.cols()
            )));
        }
        Ok(())
    }
}

/// Exact factorized posterior with the stored latent means.
pub fn edge_posterior(mrf: &PairwiseMrf) -> Result<EdgePosterior> {
    edge_posterior_at(mrf, mrf.nodes().latent())
}

/// Row `i` is the softmax of `edge_logit(i, ·)` with latent nodes at `mu`.
pub fn edge_posterior_at(mrf: &PairwiseMrf, mu: &[Vec<f64>]) -> Result<EdgePosterior> {
    mrf.nodes().check_means(mu)?;
    let rows = (0..mrf.num_edge_vars())
        .map(|i| normalize_log_weights(&mrf.edge_logits_at(mu, i)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgePosterior { rows })
}

/// Posterior expectation of the value function for a given posterior.
pub fn expected_values(
    mrf: &PairwiseMrf,
    posterior: &EdgePosterior,
    values: &ValueSpec,
) -> Result<Mat> {
    values.check(mrf.dim())?;
    if posterior.num_vars() != mrf.num_edge_vars() {
        return Err(Error::Shape(format!(
            "posterior has {} rows for {} edge variables",
            posterior.num_vars(),
            mrf.num_edge_vars()
        )));
    }
    let nodes = mrf.nodes();
    let mu = nodes.latent();
    let mut out = Mat::zeros(mrf.num_edge_vars(), values.out_dim());
    for (i, ev) in mrf.edge_vars().iter().enumerate() {
        let row = posterior.row(i);
        if row.len() != ev.len() {
            return Err(Error::Shape(format!(
                "posterior row {i} has {} entries for {} candidates",
                row.len(),
                ev.len()
            )));
        }
        let acc = out.row_mut(i);
        for (e, &p) in ev.candidates().iter().zip(row) {
            if p > 0.0 {
                axpy(acc, p, &values.apply(nodes.value_at(mu, e.source)));
            }
        }
    }
    Ok(out)
}

/// `out_i = Σ_c p(E_i = c | x) · W_V x_source(c)`, one row per edge variable.
pub fn attend(mrf: &PairwiseMrf, values: &ValueSpec) -> Result<Mat> {
    values.check(mrf.dim())?;
    let post = edge_posterior(mrf)?;
    expected_values(mrf, &post, values)
}

/// Couplings `W_Qᵀ W_K`; both must be `p × d`.
pub fn bilinear_coupling(w_q: &Mat, w_k: &Mat) -> Result<Mat> {
    if w_q.shape() != w_k.shape() {
        return Err(Error::Shape(format!(
            "W_Q is {}x{} but W_K is {}x{}",
            w_q.rows(),
            w_q.cols(),
            w_k.rows(),
            w_k.cols()
        )));
    }
    w_q.transpose().matmul(w_k)
}

/// Keys are nodes `0..n`, queries `n..n+m`; cross-attention prior;
/// no node potentials.
pub fn cross_attention_mrf(
    queries: &Mat,
    keys: &Mat,
    w_q: &Mat,
    w_k: &Mat,
    beta: f64,
) -> Result<PairwiseMrf> {
    if queries.cols() != keys.cols() {
        return Err(Error::Shape("queries and keys differ in dimension".into()));
    }
    check_projection(w_q, keys.cols(), "W_Q")?;
    let w = bilinear_coupling(w_q, w_k)?;
    let n = keys.rows();
    let m = queries.rows();
    let mut observed = keys.to_rows();
    observed.extend(queries.to_rows());
    let nodes = NodeSet::observed_only(observed)?;
    let prior = StructuralPrior::cross_attention(0..n, n..n + m)?;
    PairwiseMrf::new(nodes, prior, PotentialSpec::new(NodePotential::None, w), beta)
}

/// Nodes `0..n` are the rows of `x`; self-attention prior with self-edges.
pub fn self_attention_mrf(x: &Mat, w_q: &Mat, w_k: &Mat, beta: f64) -> Result<PairwiseMrf> {
    check_projection(w_q, x.cols(), "W_Q")?;
    let w = bilinear_coupling(w_q, w_k)?;
    let nodes = NodeSet::observed_only(x.to_rows())?;
    let prior = StructuralPrior::self_attention(0..x.rows())?;
    PairwiseMrf::new(nodes, prior, PotentialSpec::new(NodePotential::None, w), beta)
}

fn check_projection(w: &Mat, d: usize, name: &str) -> Result<()> {
    if w.cols() != d {
        return Err(Error::Shape(format!(
            "{name} has {} columns, inputs have dimension {d}",
            w.cols()
        )));
    }
    Ok(())
}

/// Reference softmax attention with explicit loops.
///
/// Row `i` is `Σ_j softmax_j(β (W_Q q_i)·(W_K k_j)) W_V k_j`.
pub fn closed_form_cross_attention(
    queries: &Mat,
    keys: &Mat,
    w_q: &Mat,
    w_k: &Mat,
    w_v: &Mat,
    beta: f64,
) -> Result<Mat> {
    check_beta(beta)?;
    let d = keys.cols();
    if queries.cols() != d {
        return Err(Error::Shape("queries and keys differ in dimension".into()));
    }
    if keys.rows() == 0 {
        return Err(Error::Shape("no keys".into()));
    }
    check_projection(w_q, d, "W_Q")?;
    check_projection(w_k, d, "W_K")?;
    check_projection(w_v, d, "W_V")?;
    if w_q.rows() != w_k.rows() {
        return Err(Error::Shape("W_Q and W_K differ in output dimension".into()));
    }
    let proj_k: Vec<Vec<f64>> = (0..keys.rows()).map(|j| w_k.matvec(keys.row(j))).collect();
    let vals: Vec<Vec<f64>> = (0..keys.rows()).map(|j| w_v.matvec(keys.row(j))).collect();
    let mut out = Mat::zeros(queries.rows(), w_v.rows());
    for i in 0..queries.rows() {
        let pq = w_q.matvec(queries.row(i));
        let logits: Vec<f64> = proj_k.iter().map(|pk| beta * dot(&pq, pk)).collect();
        let weights = normalize_log_weights(&logits)?;
        let row = out.row_mut(i);
        for (w, v) in weights.iter().zip(&vals) {
            axpy(row, *w, v);
        }
    }
    Ok(out)
}

pub fn closed_form_self_attention(
    x: &Mat,
    w_q: &Mat,
    w_k: &Mat,
    w_v: &Mat,
    beta: f64,
) -> Result<Mat> {
    closed_form_cross_attention(x, x, w_q, w_k, w_v, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{Edge, EdgeVariable};

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn degenerate_and_symmetric_posteriors() {
        let nodes = NodeSet::observed_only(vec![vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        let prior = StructuralPrior::new(vec![
            EdgeVariable::uniform(vec![Edge::new(0, 2)]).unwrap(),
            EdgeVariable::uniform(vec![Edge::new(0, 1), Edge::new(2, 1)]).unwrap(),
        ]);
        let mrf = PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::None, Mat::zeros(1, 1)),
            1.0,
        )
        .unwrap();
        let post = edge_posterior(&mrf).unwrap();
        assert_eq!(post.row(0), &[1.0]);
        assert_eq!(post.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn two_key_posterior() {
        let keys = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let q = mat(&[&[1.0, 0.0]]);
        let id = Mat::identity(2);
        let mrf = cross_attention_mrf(&q, &keys, &id, &id, 1.0).unwrap();
        let post = edge_posterior(&mrf).unwrap();
        let e = std::f64::consts::E;
        assert!((post.row(0)[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((post.row(0)[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn single_key_returns_its_value() {
        let keys = mat(&[&[0.3, -2.0]]);
        let q = mat(&[&[7.0, 1.0], &[-1.0, 4.0]]);
        let wv = mat(&[&[1.0, 2.0], &[0.0, -1.0], &[3.0, 0.5]]);
        let id = Mat::identity(2);
        let mrf = cross_attention_mrf(&q, &keys, &id, &id, 1.0).unwrap();
        let out = attend(&mrf, &ValueSpec::new(wv.clone())).unwrap();
        let expect = wv.matvec(keys.row(0));
        for i in 0..2 {
            assert_eq!(out.row(i), expect.as_slice());
        }
        let cf = closed_form_cross_attention(&q, &keys, &id, &id, &wv, 1.0).unwrap();
        assert_eq!(cf.row(0), expect.as_slice());
    }

    #[test]
    fn zero_projection_gives_mean_value() {
        let keys = mat(&[&[1.0, 2.0], &[3.0, -4.0], &[5.0, 0.0]]);
        let q = mat(&[&[1.0, 1.0], &[9.0, -3.0]]);
        let z = Mat::zeros(2, 2);
        let wv = mat(&[&[2.0, 0.0], &[1.0, 1.0]]);
        let out = closed_form_cross_attention(&q, &keys, &z, &z, &wv, 1.0).unwrap();
        let mean = [3.0, -2.0 / 3.0];
        let expect = wv.matvec(&mean);
        for i in 0..2 {
            for (a, b) in out.row(i).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identical_rows_self_attention() {
        let x = mat(&[&[0.5, 1.0, -1.0]; 4].map(|r| r as &[f64]));
        let w = mat(&[&[1.0, 0.2, 0.0], &[0.0, 1.0, 0.3]]);
        let wv = Mat::identity(3);
        let out = closed_form_self_attention(&x, &w, &w, &wv, 0.5).unwrap();
        for i in 1..4 {
            assert_eq!(out.row(i), out.row(0));
        }
        let single = mat(&[&[2.0, -1.0, 0.0]]);
        let out = closed_form_self_attention(&single, &w, &w, &wv, 1.0).unwrap();
        assert_eq!(out.row(0), &[2.0, -1.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let keys = mat(&[&[1.0, 2.0]]);
        let q = mat(&[&[1.0, 2.0, 3.0]]);
        let id = Mat::identity(2);
        assert!(closed_form_cross_attention(&q, &keys, &id, &id, &id, 1.0).is_err());
        assert!(cross_attention_mrf(&q, &keys, &id, &id, 1.0).is_err());
        let mrf = cross_attention_mrf(&keys, &keys, &id, &id, 1.0).unwrap();
        assert!(attend(&mrf, &ValueSpec::identity(3)).is_err());
        assert!(closed_form_cross_attention(&keys, &keys, &id, &id, &id, -1.0).is_err());
    }

    #[test]
    fn masked_key_matches_deleted_key() {
        let keys = mat(&[&[1.0, 0.5], &[-0.2, 0.7], &[0.9, -1.1]]);
        let q = mat(&[&[0.4, 0.3]]);
        let id = Mat::identity(2);
        let mut mrf = cross_attention_mrf(&q, &keys, &id, &id, 1.0).unwrap();
        let mut prior = mrf.prior().clone();
        prior.edge_vars_mut()[0].mask(1).unwrap();
        mrf = PairwiseMrf::new(mrf.nodes().clone(), prior, mrf.potentials().clone(), 1.0).unwrap();
        let post = edge_posterior(&mrf).unwrap();
        assert_eq!(post.row(0)[1], 0.0);
        let out = attend(&mrf, &ValueSpec::identity(2)).unwrap();
        let reduced = mat(&[&[1.0, 0.5], &[0.9, -1.1]]);
        let cf = closed_form_cross_attention(&q, &reduced, &id, &id, &id, 1.0).unwrap();
        assert!(out.max_abs_diff(&cf) < 1e-12);
    }
}

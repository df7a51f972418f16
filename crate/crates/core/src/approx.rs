//! Hard attention, top-k truncation, and information-loss diagnostics for an
//! approximation `q` of the exact edge posterior `p`.
//!
//! Information loss is `D_KL[q ‖ p] = Σ q ln(q/p)` per edge variable with
//! `0 ln 0 = 0`. For a single hard sample `φ*` it is `-ln p(φ*)`, whose
//! expectation under `p` is the entropy `H[p]`.

use std::fmt;
use std::str::FromStr;

use crate::attention::{edge_posterior, expected_values, EdgePosterior, ValueSpec};
use crate::error::{Error, Result};
use crate::mrf::PairwiseMrf;
use crate::numerics::{axpy, Mat, SeededRng};

/// Draws one candidate per edge variable, independently.
pub fn sample_config(posterior: &EdgePosterior, rng: &mut SeededRng) -> Vec<usize> {
    posterior.rows().iter().map(|r| rng.categorical(r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardSample {
    pub config: Vec<usize>,
    /// `W_V x_source` of the sampled edge, one row per edge variable.
    pub output: Mat,
}

/// Hard attention: sample `φ*` from the posterior and return `v(x, φ*)`.
pub fn hard_sample(
    mrf: &PairwiseMrf,
    posterior: &EdgePosterior,
    values: &ValueSpec,
    rng: &mut SeededRng,
) -> Result<HardSample> {
    let config = sample_config(posterior, rng);
    let output = hard_output(mrf, &config, values)?;
    Ok(HardSample { config, output })
}

/// `v(x, φ)` for a fixed configuration.
pub fn hard_output(mrf: &PairwiseMrf, config: &[usize], values: &ValueSpec) -> Result<Mat> {
    values.check(mrf.dim())?;
    if config.len() != mrf.num_edge_vars() {
        return Err(Error::Shape("configuration length".into()));
    }
    let nodes = mrf.nodes();
    let mut out = Mat::zeros(config.len(), values.out_dim());
    for (i, (&c, ev)) in config.iter().zip(mrf.edge_vars()).enumerate() {
        let e = ev.candidates().get(c).ok_or(Error::IndexOutOfRange {
            what: "candidate",
            index: c,
            len: ev.len(),
        })?;
        let v = values.apply(nodes.value_at(nodes.latent(), e.source));
        out.row_mut(i).copy_from_slice(&v);
    }
    Ok(out)
}

/// Shannon entropy in nats per edge variable.
pub fn entropy(p: &EdgePosterior) -> Vec<f64> {
    p.rows()
        .iter()
        .map(|r| -r.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
        .collect()
}

/// `D_KL[q ‖ p]` per edge variable; `+inf` where `q` has mass and `p` has none.
pub fn kl_information_loss(p: &EdgePosterior, q: &EdgePosterior) -> Result<Vec<f64>> {
    check_same_shape(p, q)?;
    Ok(p.rows()
        .iter()
        .zip(q.rows())
        .map(|(pr, qr)| {
            let mut kl = 0.0;
            for (&pp, &qq) in pr.iter().zip(qr) {
                if qq > 0.0 {
                    if pp <= 0.0 {
                        return f64::INFINITY;
                    }
                    kl += qq * (qq / pp).ln();
                }
            }
            kl
        })
        .collect())
}

fn check_same_shape(p: &EdgePosterior, q: &EdgePosterior) -> Result<()> {
    if p.num_vars() != q.num_vars()
        || p.rows().iter().zip(q.rows()).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Shape("posteriors differ in shape".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

fn mean_and_std_error(sum: f64, sum_sq: f64, n: usize) -> MonteCarloEstimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    MonteCarloEstimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
    }
}

/// Monte-Carlo estimate of `E_p[-ln p(φ*)]` per edge variable.
pub fn expected_hard_loss(
    p: &EdgePosterior,
    num_samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<MonteCarloEstimate>> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    let mut sums = vec![(0.0, 0.0); p.num_vars()];
    for _ in 0..num_samples {
        for (i, c) in sample_config(p, rng).into_iter().enumerate() {
            let loss = -p.row(i)[c].ln();
            sums[i].0 += loss;
            sums[i].1 += loss * loss;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(s, s2)| mean_and_std_error(s, s2, num_samples))
        .collect())
}

fn check_k(k: usize, i: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n} for edge variable {i}")));
    }
    Ok(())
}

/// Candidate indices by decreasing probability, lowest index first on ties.
fn ranked(r: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    order
}

/// Keeps the `k` most probable candidates per variable (lowest index on
/// ties) and renormalizes. `k = n` returns the row untouched.
pub fn topk_approx(p: &EdgePosterior, k: usize) -> Result<EdgePosterior> {
    let rows = p
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            check_k(k, i, r.len())?;
            if k == r.len() {
                return Ok(r.clone());
            }
            let order = ranked(r);
            let mut q = vec![0.0; r.len()];
            let kept: f64 = order[..k].iter().map(|&c| r[c]).sum();
            for &c in &order[..k] {
                q[c] = r[c] / kept;
            }
            Ok(q)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgePosterior::from_rows_unchecked(rows))
}

/// `D_KL[q ‖ p]` for `q = topk_approx(p, k)` in closed form, `ln(total/kept)`.
///
/// Both masses are running sums over the same ranked order, so `kept ≤ total`
/// holds in floating point: the result is never negative, exactly zero at
/// `k = n` and non-increasing in `k`.
pub fn topk_kl(p: &EdgePosterior, k: usize) -> Result<Vec<f64>> {
    p.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            check_k(k, i, r.len())?;
            let mut kept = 0.0;
            let mut total = 0.0;
            for (rank, &c) in ranked(r).iter().enumerate() {
                total += r[c];
                if rank < k {
                    kept = total;
                }
            }
            Ok((total / kept).ln())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxMethod {
    Soft,
    Hard,
    TopK(usize),
}

impl fmt::Display for ApproxMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApproxMethod::Soft => write!(f, "soft"),
            ApproxMethod::Hard => write!(f, "hard"),
            ApproxMethod::TopK(k) => write!(f, "top{k}"),
        }
    }
}

impl FromStr for ApproxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "soft" => Ok(ApproxMethod::Soft),
            "hard" => Ok(ApproxMethod::Hard),
            other => other
                .strip_prefix("top")
                .and_then(|k| k.parse().ok())
                .map(ApproxMethod::TopK)
                .ok_or_else(|| Error::Parse(format!("unknown method '{other}'"))),
        }
    }
}

/// Diagnostics for one approximation method.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxReport {
    pub method: ApproxMethod,
    /// For `hard`, the Monte-Carlo mean of `-ln p(φ*)`.
    pub kl_per_edge_var: Vec<f64>,
    pub entropy_p: Vec<f64>,
    /// Frobenius norm of the approximate minus soft output; root mean square
    /// over samples for `hard`.
    pub output_error: f64,
    /// Candidate potential evaluations plus value-vector evaluations per
    /// forward pass.
    pub cost_proxy: u64,
}

fn frobenius_diff(a: &Mat, b: &Mat) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Compares each method against exact soft attention. `samples` is the
/// Monte-Carlo sample count for `hard`.
pub fn compare(
    mrf: &PairwiseMrf,
    values: &ValueSpec,
    methods: &[ApproxMethod],
    samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<ApproxReport>> {
    values.check(mrf.dim())?;
    let p = edge_posterior(mrf)?;
    let soft = expected_values(mrf, &p, values)?;
    let h = entropy(&p);
    let scored: u64 = mrf.edge_vars().iter().map(|ev| ev.len() as u64).sum();
    let m = mrf.num_edge_vars() as u64;
    methods
        .iter()
        .map(|&method| {
            let (kl, output_error, cost) = match method {
                ApproxMethod::Soft => (vec![0.0; p.num_vars()], 0.0, 2 * scored),
                ApproxMethod::TopK(k) => {
                    let q = topk_approx(&p, k)?;
                    let out = expected_values(mrf, &q, values)?;
                    let kept: u64 = p.rows().iter().map(|r| k.min(r.len()) as u64).sum();
                    (topk_kl(&p, k)?, frobenius_diff(&out, &soft), scored + kept)
                }
                ApproxMethod::Hard => {
                    if samples == 0 {
                        return Err(Error::InvalidArgument("hard needs at least one sample".into()));
                    }
                    let mut loss = vec![0.0; p.num_vars()];
                    let mut sq_err = 0.0;
                    for _ in 0..samples {
                        let config = sample_config(&p, rng);
                        for (i, &c) in config.iter().enumerate() {
                            loss[i] -= p.row(i)[c].ln();
                        }
                        let out = hard_output(mrf, &config, values)?;
                        sq_err += frobenius_diff(&out, &soft).powi(2);
                    }
                    let n = samples as f64;
                    loss.iter_mut().for_each(|l| *l /= n);
                    (loss, (sq_err / n).sqrt(), scored + m)
                }
            };
            Ok(ApproxReport {
                method,
                kl_per_edge_var: kl,
                entropy_p: h.clone(),
                output_error,
                cost_proxy: cost,
            })
        })
        .collect()
}

/// Empirical mean and per-coordinate standard error of hard outputs.
pub fn hard_output_mean(
    mrf: &PairwiseMrf,
    values: &ValueSpec,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<(Mat, Mat)> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let p = edge_posterior(mrf)?;
    let rows = mrf.num_edge_vars();
    let cols = values.out_dim();
    let mut sum = vec![0.0; rows * cols];
    let mut sum_sq = vec![0.0; rows * cols];
    for _ in 0..samples {
        let out = hard_sample(mrf, &p, values, rng)?.output;
        axpy(&mut sum, 1.0, out.data());
        for (s, x) in sum_sq.iter_mut().zip(out.data()) {
            *s += x * x;
        }
    }
    let mut mean = Vec::with_capacity(sum.len());
    let mut se = Vec::with_capacity(sum.len());
    for (s, s2) in sum.iter().zip(&sum_sq) {
        let est = mean_and_std_error(*s, *s2, samples);
        mean.push(est.estimate);
        se.push(est.std_error);
    }
    Ok((Mat::new(rows, cols, mean)?, Mat::new(rows, cols, se)?))
}

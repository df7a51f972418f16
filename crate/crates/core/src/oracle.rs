//! Brute-force references: exhaustive enumeration of edge configurations and
//! one EM step of an isotropic Gaussian mixture.
//!
//! Nothing here uses the factorized shortcuts of the rest of the crate; each
//! configuration goes through [`PairwiseMrf::log_joint_at`] and marginals are
//! accumulated by plain summation.

use crate::attention::EdgePosterior;
use crate::error::{Error, Result};
use crate::mrf::PairwiseMrf;
use crate::numerics::{log_sum_exp, Mat};

pub const MAX_CONFIGS: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub sizes: Vec<usize>,
    pub configs: Vec<Vec<usize>>,
    pub log_joint: Vec<f64>,
}

impl JointTable {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// `ln Σ_E exp(log_joint(E))`.
    pub fn log_marginal(&self) -> Result<f64> {
        log_sum_exp(&self.log_joint)
    }

    /// `-ln Σ_E p(x, μ, E)`, same constant offset as the collapsed free energy.
    pub fn free_energy(&self) -> Result<f64> {
        Ok(-self.log_marginal()?)
    }

    /// Marginal posterior of every edge variable.
    pub fn marginals(&self) -> Result<EdgePosterior> {
        let lse = self.log_marginal()?;
        let mut rows: Vec<Vec<f64>> = self.sizes.iter().map(|&n| vec![0.0; n]).collect();
        for (config, &lj) in self.configs.iter().zip(&self.log_joint) {
            let w = (lj - lse).exp();
            for (row, &c) in rows.iter_mut().zip(config) {
                row[c] += w;
            }
        }
        EdgePosterior::new(rows)
    }
}

/// Every configuration with the stored latent means.
pub fn enumerate_joint(mrf: &PairwiseMrf) -> Result<JointTable> {
    enumerate_joint_at(mrf, mrf.nodes().latent())
}

pub fn enumerate_joint_at(mrf: &PairwiseMrf, mu: &[Vec<f64>]) -> Result<JointTable> {
    let sizes: Vec<usize> = mrf.edge_vars().iter().map(|ev| ev.len()).collect();
    let total = sizes
        .iter()
        .try_fold(1u128, |acc, &n| acc.checked_mul(n as u128))
        .unwrap_or(u128::MAX);
    if total > MAX_CONFIGS {
        return Err(Error::TooManyConfigs(total));
    }
    let mut configs = Vec::with_capacity(total as usize);
    let mut log_joint = Vec::with_capacity(total as usize);
    let mut config = vec![0usize; sizes.len()];
    loop {
        log_joint.push(mrf.log_joint_at(mu, &config)?);
        configs.push(config.clone());
        // odometer increment, last variable fastest
        let mut pos = sizes.len();
        loop {
            if pos == 0 {
                return Ok(JointTable {
                    sizes,
                    configs,
                    log_joint,
                });
            }
            pos -= 1;
            config[pos] += 1;
            if config[pos] < sizes[pos] {
                break;
            }
            config[pos] = 0;
        }
    }
}

/// One EM step for a mixture of unit-variance isotropic Gaussians with
/// uniform mixing weights: `r_ij ∝ exp(-½‖x_j - μ_i‖²)` normalized over `i`,
/// then `μ_i = Σ_j r_ij x_j / Σ_j r_ij`.
pub fn gmm_em_step(points: &Mat, means: &Mat) -> Result<Mat> {
    if points.rows() == 0 || means.rows() == 0 {
        return Err(Error::Shape("empty points or means".into()));
    }
    if points.cols() != means.cols() {
        return Err(Error::Shape("points and means differ in dimension".into()));
    }
    let (m, d) = (means.rows(), means.cols());
    let mut num = vec![vec![0.0; d]; m];
    let mut den = vec![0.0; m];
    for j in 0..points.rows() {
        let x = points.row(j);
        let log_r: Vec<f64> = (0..m)
            .map(|i| {
                let sq: f64 = x.iter().zip(means.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                -0.5 * sq
            })
            .collect();
        let lse = log_sum_exp(&log_r)?;
        for i in 0..m {
            let r = (log_r[i] - lse).exp();
            den[i] += r;
            for (acc, v) in num[i].iter_mut().zip(x) {
                *acc += r * v;
            }
        }
    }
    let mut out = Mat::zeros(m, d);
    for i in 0..m {
        for k in 0..d {
            let v = if den[i] > 0.0 { num[i][k] / den[i] } else { means.get(i, k) };
            out.set(i, k, v);
        }
    }
    Ok(out)
}

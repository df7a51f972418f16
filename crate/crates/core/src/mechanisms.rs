//! Iterative attention mechanisms as configurations of the collapsed
//! free-energy engine.
//!
//! Each mechanism has a direct update formula and an equivalent MRF
//! (nodes, structural prior, couplings) whose CCCP step reproduces it:
//!
//! | mechanism | prior | softmax over |
//! |-----------|-------|--------------|
//! | Hopfield retrieval | one variable per query over patterns | patterns |
//! | slot attention | one variable per input over slots | slots |
//! | block-slot | slot prior + per (slot, block) over block memories | slots / memories |

use crate::error::{Error, Result};
use crate::mrf::{NodePotential, NodeSet, PairwiseMrf, PotentialSpec, StructuralPrior};
use crate::numerics::{axpy, check_beta, check_finite, dot, norm_sq, softmax, Mat, SeededRng};
use crate::vfe::{self, CccpState, FixedPointNormalization};

#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldConfig {
    /// Stored patterns, one per row (`n × d`).
    pub patterns: Mat,
    pub w_q: Mat,
    pub w_k: Mat,
    pub beta: f64,
    pub query: Vec<f64>,
}

impl HopfieldConfig {
    pub fn new(patterns: Mat, w_q: Mat, w_k: Mat, beta: f64, query: Vec<f64>) -> Result<Self> {
        check_beta(beta)?;
        let d = patterns.cols();
        if patterns.rows() == 0 || d == 0 {
            return Err(Error::Shape("no patterns".into()));
        }
        if w_q.shape() != w_k.shape() || w_q.cols() != d {
            return Err(Error::Shape(format!(
                "W_Q {}x{} and W_K {}x{} must both be p x {d}",
                w_q.rows(),
                w_q.cols(),
                w_k.rows(),
                w_k.cols()
            )));
        }
        if query.len() != d {
            return Err(Error::Shape(format!(
                "query of dimension {} for patterns of dimension {d}",
                query.len()
            )));
        }
        check_finite("query", &query)?;
        Ok(HopfieldConfig {
            patterns,
            w_q,
            w_k,
            beta,
            query,
        })
    }

    /// Classical retrieval: `W_Q = W_K = I`.
    pub fn identity(patterns: Mat, beta: f64, query: Vec<f64>) -> Result<Self> {
        let d = patterns.cols();
        HopfieldConfig::new(patterns, Mat::identity(d), Mat::identity(d), beta, query)
    }

    pub fn dim(&self) -> usize {
        self.patterns.cols()
    }

    /// `W_Qᵀ W_K`.
    pub fn coupling(&self) -> Mat {
        self.w_q
            .transpose()
            .matmul(&self.w_k)
            .expect("shapes checked at construction")
    }

    /// `W_Qᵀ W_K x_j` for every pattern: the vectors retrieval converges to.
    pub fn images(&self) -> Vec<Vec<f64>> {
        let w = self.coupling();
        (0..self.patterns.rows())
            .map(|j| w.matvec(self.patterns.row(j)))
            .collect()
    }

    /// Patterns are nodes `0..n`, the state is latent node `n`.
    pub fn mrf(&self) -> Result<PairwiseMrf> {
        let n = self.patterns.rows();
        let nodes = NodeSet::new(self.patterns.to_rows(), vec![self.query.clone()])?;
        let prior = StructuralPrior::cross_attention(0..n, n..n + 1)?;
        PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::Quadratic, self.coupling()),
            self.beta,
        )
    }
}

/// `μ* = Σ_j softmax_j(β μᵀ W_Qᵀ W_K x_j) W_Qᵀ W_K x_j`
pub fn hopfield_step(cfg: &HopfieldConfig, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != cfg.dim() {
        return Err(Error::Shape("state dimension".into()));
    }
    let images = cfg.images();
    let scores: Vec<f64> = images.iter().map(|y| dot(mu, y)).collect();
    let p = softmax(&scores, cfg.beta)?;
    let mut out = vec![0.0; cfg.dim()];
    for (pj, y) in p.iter().zip(&images) {
        axpy(&mut out, *pj, y);
    }
    Ok(out)
}

/// The same update computed through the MRF and [`vfe::cccp_step`].
pub fn hopfield_step_engine(cfg: &HopfieldConfig, mu: &[f64]) -> Result<Vec<f64>> {
    let mrf = cfg.mrf()?;
    let next = vfe::cccp_step(&mrf, &[mu.to_vec()], FixedPointNormalization::RawSum)?;
    Ok(next.into_iter().next().unwrap())
}

/// Runs the fixed-point iteration from the query until `|ΔF| < tol`.
pub fn hopfield_retrieve(
    cfg: &HopfieldConfig,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CccpState)> {
    let mrf = cfg.mrf()?;
    let state = vfe::solve(
        &mrf,
        vec![cfg.query.clone()],
        FixedPointNormalization::RawSum,
        tol,
        max_iter,
    )?;
    Ok((state.mu[0].clone(), state))
}

/// Initial slot means.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotInit {
    Given(Mat),
    /// Gaussian draws, each rescaled to the mean input norm (so all slots
    /// share one norm).
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotConfig {
    /// Inputs, one per row (`n × d`).
    pub inputs: Mat,
    pub num_slots: usize,
    /// Bilinear coupling (`d × d`), `Qᵀ K` in projection form.
    pub w: Mat,
    pub beta: f64,
    pub init: SlotInit,
}

impl SlotConfig {
    pub fn new(inputs: Mat, num_slots: usize, w: Mat, beta: f64, init: SlotInit) -> Result<Self> {
        check_beta(beta)?;
        let d = inputs.cols();
        if inputs.rows() == 0 || d == 0 {
            return Err(Error::Shape("no inputs".into()));
        }
        if num_slots == 0 {
            return Err(Error::InvalidArgument("need at least one slot".into()));
        }
        if w.shape() != (d, d) {
            return Err(Error::Shape(format!("coupling must be {d}x{d}")));
        }
        if let SlotInit::Given(m) = &init {
            if m.shape() != (num_slots, d) {
                return Err(Error::Shape(format!(
                    "initial slots are {}x{}, expected {num_slots}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(SlotConfig {
            inputs,
            num_slots,
            w,
            beta,
            init,
        })
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn initial_slots(&self) -> Mat {
        match &self.init {
            SlotInit::Given(m) => m.clone(),
            SlotInit::Seeded(seed) => seeded_slots(&self.inputs, self.num_slots, *seed),
        }
    }

    /// Inputs are nodes `0..n`, slots are latent nodes `n..n+m`.
    pub fn mrf(&self, mu: &Mat) -> Result<PairwiseMrf> {
        let n = self.inputs.rows();
        let nodes = NodeSet::new(self.inputs.to_rows(), mu.to_rows())?;
        let prior = StructuralPrior::slot(0..n, n..n + self.num_slots)?;
        PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::Quadratic, self.w.clone()),
            self.beta,
        )
    }

    fn mapped_inputs(&self) -> Vec<Vec<f64>> {
        (0..self.inputs.rows())
            .map(|j| self.w.matvec(self.inputs.row(j)))
            .collect()
    }

    fn check_slots(&self, mu: &Mat) -> Result<()> {
        if mu.shape() != (self.num_slots, self.dim()) {
            return Err(Error::Shape(format!(
                "slot means are {}x{}, expected {}x{}",
                mu.rows(),
                mu.cols(),
                self.num_slots,
                self.dim()
            )));
        }
        Ok(())
    }
}

fn seeded_slots(inputs: &Mat, m: usize, seed: u64) -> Mat {
    let mut rng = SeededRng::new(seed);
    let d = inputs.cols();
    let n = inputs.rows().max(1) as f64;
    let target = (0..inputs.rows())
        .map(|j| norm_sq(inputs.row(j)).sqrt())
        .sum::<f64>()
        / n;
    let target = if target > 0.0 { target } else { 1.0 };
    let mut out = Mat::zeros(m, d);
    for i in 0..m {
        let mut g = rng.normal_vec(d);
        let len = norm_sq(&g).sqrt();
        if len > 0.0 {
            g.iter_mut().for_each(|x| *x *= target / len);
        }
        out.row_mut(i).copy_from_slice(&g);
    }
    out
}

/// Weights `softmax_i(β μ_iᵀ W x_j)` as an `m × n` matrix; columns sum to one.
pub fn slot_weights(cfg: &SlotConfig, mu: &Mat) -> Result<Mat> {
    cfg.check_slots(mu)?;
    let mapped = cfg.mapped_inputs();
    let mut weights = Mat::zeros(cfg.num_slots, mapped.len());
    for (j, y) in mapped.iter().enumerate() {
        let scores: Vec<f64> = (0..cfg.num_slots).map(|i| dot(mu.row(i), y)).collect();
        for (i, p) in softmax(&scores, cfg.beta)?.into_iter().enumerate() {
            weights.set(i, j, p);
        }
    }
    Ok(weights)
}

/// `μ_i* = Σ_j softmax_i(β μ_iᵀ W x_j) W x_j`, optionally divided by `Σ_j` of
/// the weights.
pub fn slot_step(cfg: &SlotConfig, mu: &Mat, norm: FixedPointNormalization) -> Result<Mat> {
    let weights = slot_weights(cfg, mu)?;
    let mapped = cfg.mapped_inputs();
    let mut out = Mat::zeros(cfg.num_slots, cfg.dim());
    for i in 0..cfg.num_slots {
        let mut mass = 0.0;
        let row = out.row_mut(i);
        for (j, y) in mapped.iter().enumerate() {
            let w = weights.get(i, j);
            axpy(row, w, y);
            mass += w;
        }
        if norm == FixedPointNormalization::WeightedMean {
            if mass > 0.0 {
                row.iter_mut().for_each(|x| *x /= mass);
            } else {
                row.copy_from_slice(mu.row(i));
            }
        }
    }
    Ok(out)
}

/// [`slot_step`] through the slot-prior MRF and [`vfe::cccp_step`].
pub fn slot_step_engine(cfg: &SlotConfig, mu: &Mat, norm: FixedPointNormalization) -> Result<Mat> {
    cfg.check_slots(mu)?;
    let mrf = cfg.mrf(mu)?;
    let next = vfe::cccp_step(&mrf, &mu.to_rows(), norm)?;
    Mat::from_rows(&next)
}

/// Iterates slot updates from the configured initialization.
pub fn run_slots(
    cfg: &SlotConfig,
    norm: FixedPointNormalization,
    tol: f64,
    max_iter: usize,
) -> Result<(Mat, CccpState)> {
    let mu0 = cfg.initial_slots();
    let mrf = cfg.mrf(&mu0)?;
    let state = vfe::solve(&mrf, mu0.to_rows(), norm, tol, max_iter)?;
    Ok((Mat::from_rows(&state.mu)?, state))
}

/// Most responsible slot for each input (lowest index on ties).
pub fn assignments(cfg: &SlotConfig, mu: &Mat) -> Result<Vec<usize>> {
    let w = slot_weights(cfg, mu)?;
    Ok((0..w.cols())
        .map(|j| {
            (0..w.rows()).fold(0, |best, i| if w.get(i, j) > w.get(best, j) { i } else { best })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSlotConfig {
    pub slots: SlotConfig,
    /// Block widths; they partition the slot dimension in order.
    pub block_dims: Vec<usize>,
    /// `memories[b]` is `l_b × block_dims[b]`; `l_b` may be zero.
    pub memories: Vec<Mat>,
    /// Temperature of the memory softmax; defaults to the slot `beta`.
    pub memory_beta: Option<f64>,
}

impl BlockSlotConfig {
    pub fn new(
        slots: SlotConfig,
        block_dims: Vec<usize>,
        memories: Vec<Mat>,
        memory_beta: Option<f64>,
    ) -> Result<Self> {
        let d = slots.dim();
        if block_dims.contains(&0) || block_dims.iter().sum::<usize>() != d {
            return Err(Error::Shape(format!(
                "block widths {block_dims:?} do not partition dimension {d}"
            )));
        }
        if memories.len() != block_dims.len() {
            return Err(Error::Shape(format!(
                "{} memory banks for {} blocks",
                memories.len(),
                block_dims.len()
            )));
        }
        for (b, (m, &w)) in memories.iter().zip(&block_dims).enumerate() {
            if m.rows() > 0 && m.cols() != w {
                return Err(Error::Shape(format!(
                    "block {b} memories have width {}, block width is {w}",
                    m.cols()
                )));
            }
        }
        if let Some(mb) = memory_beta {
            check_beta(mb)?;
        }
        Ok(BlockSlotConfig {
            slots,
            block_dims,
            memories,
            memory_beta,
        })
    }

    pub fn memory_beta(&self) -> f64 {
        self.memory_beta.unwrap_or(self.slots.beta)
    }

    fn block_offsets(&self) -> Vec<usize> {
        self.block_dims
            .iter()
            .scan(0, |acc, &w| {
                let start = *acc;
                *acc += w;
                Some(start)
            })
            .collect()
    }

    /// Inputs `0..n`, memories zero-padded to full width next, then slots as
    /// latent nodes. Memory edges use coupling `(β_mem/β) I`, so the memory
    /// logit is `β_mem μ_i^{(b)}·m_k^{(b)}` and the update adds
    /// `(β_mem/β) m_k^{(b)}`.
    pub fn mrf(&self, mu: &Mat) -> Result<PairwiseMrf> {
        let cfg = &self.slots;
        let d = cfg.dim();
        let n = cfg.inputs.rows();
        let mut observed = cfg.inputs.to_rows();
        let mut blocks = Vec::with_capacity(self.block_dims.len());
        for (mem, &off) in self.memories.iter().zip(&self.block_offsets()) {
            let start = observed.len();
            for k in 0..mem.rows() {
                let mut padded = vec![0.0; d];
                padded[off..off + mem.cols()].copy_from_slice(mem.row(k));
                observed.push(padded);
            }
            blocks.push(start..observed.len());
        }
        let first_slot = observed.len();
        let nodes = NodeSet::new(observed, mu.to_rows())?;
        let memory_coupling = Mat::scaled_identity(d, self.memory_beta() / cfg.beta);
        let prior = StructuralPrior::block_slot(
            0..n,
            first_slot..first_slot + cfg.num_slots,
            &blocks,
            &memory_coupling,
        )?;
        PairwiseMrf::new(
            nodes,
            prior,
            PotentialSpec::new(NodePotential::Quadratic, cfg.w.clone()),
            cfg.beta,
        )
    }
}

/// Slot term (raw sum, softmax over slots) plus [`block_memory_term`].
pub fn block_slot_step(cfg: &BlockSlotConfig, mu: &Mat) -> Result<Mat> {
    let mut out = slot_step(&cfg.slots, mu, FixedPointNormalization::RawSum)?;
    let memory = block_memory_term(cfg, mu)?;
    for i in 0..out.rows() {
        axpy(out.row_mut(i), 1.0, memory.row(i));
    }
    Ok(out)
}

/// Per block, `(β_mem/β) Σ_k softmax_k(β_mem μ_i^{(b)}·m_k^{(b)}) m_k^{(b)}`
/// written into that block's coordinates; zero elsewhere.
pub fn block_memory_term(cfg: &BlockSlotConfig, mu: &Mat) -> Result<Mat> {
    cfg.slots.check_slots(mu)?;
    let scale = cfg.memory_beta() / cfg.slots.beta;
    let mut out = Mat::zeros(cfg.slots.num_slots, cfg.slots.dim());
    for i in 0..cfg.slots.num_slots {
        for ((mem, &off), &w) in cfg.memories.iter().zip(&cfg.block_offsets()).zip(&cfg.block_dims) {
            if mem.rows() == 0 {
                continue;
            }
            let block = &mu.row(i)[off..off + w];
            let scores: Vec<f64> = (0..mem.rows()).map(|k| dot(block, mem.row(k))).collect();
            let p = softmax(&scores, cfg.memory_beta())?;
            let dst = &mut out.row_mut(i)[off..off + w];
            for (k, pk) in p.iter().enumerate() {
                axpy(dst, scale * pk, mem.row(k));
            }
        }
    }
    Ok(out)
}

pub fn block_slot_step_engine(cfg: &BlockSlotConfig, mu: &Mat) -> Result<Mat> {
    cfg.slots.check_slots(mu)?;
    let mrf = cfg.mrf(mu)?;
    let next = vfe::cccp_step(&mrf, &mu.to_rows(), FixedPointNormalization::RawSum)?;
    Mat::from_rows(&next)
}

pub fn run_block_slots(cfg: &BlockSlotConfig, tol: f64, max_iter: usize) -> Result<(Mat, CccpState)> {
    let mu0 = cfg.slots.initial_slots();
    let mrf = cfg.mrf(&mu0)?;
    let state = vfe::solve(&mrf, mu0.to_rows(), FixedPointNormalization::RawSum, tol, max_iter)?;
    Ok((Mat::from_rows(&state.mu)?, state))
}

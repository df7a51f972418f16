//! Attention as exact marginalization over latent edge structures.
//!
//! A [`PairwiseMrf`] carries nodes, bilinear edge potentials and a factorized
//! structural prior over which edges exist. Summing the edge variables out
//! gives:
//!
//! - [`attention`]: softmax cross/self attention as the posterior expectation
//!   of a value function (all nodes observed);
//! - [`vfe`]: the collapsed free energy of models with latent nodes and the
//!   CCCP fixed-point solver;
//! - [`mechanisms`]: Hopfield retrieval, slot attention and block-slot
//!   attention as particular priors for that solver;
//! - [`pcn`]: predictive coding with softmax-normalized prediction errors;
//! - [`approx`]: hard attention, top-k truncation and KL diagnostics.
//!
//! [`oracle`] holds brute-force references used to check all of the above;
//! [`instances`] generates the seeded random problems they are checked on.

pub mod approx;
pub mod attention;
pub mod error;
pub mod instances;
pub mod io;
pub mod mechanisms;
pub mod mrf;
pub mod numerics;
pub mod oracle;
pub mod pcn;
pub mod vfe;

pub use approx::{ApproxMethod, ApproxReport};
pub use attention::{attend, edge_posterior, EdgePosterior, ValueSpec};
pub use error::{Error, Result};
pub use mechanisms::{BlockSlotConfig, HopfieldConfig, SlotConfig, SlotInit};
pub use mrf::{
    Edge, EdgeVariable, NodePotential, NodeSet, PairwiseMrf, PotentialSpec, StructuralPrior,
};
pub use numerics::{log_sum_exp, softmax, Mat, SeededRng};
pub use pcn::{EdgePriorMode, PcnLayer, PcnNetwork};
pub use vfe::{CccpState, FixedPointNormalization};

//! Exact information geometry for binary multivariate distributions and
//! Boltzmann-machine training.
//!
//! The crate is organised bottom-up:
//!
//! * [`subset`]: bitmask subsets and the zeta/Möbius transforms over the
//!   subset lattice that every coordinate conversion is built on.
//! * [`simplex`]: probability tables and their η-, θ- and mixed coordinates.
//! * [`fisher`]: closed-form Fisher information matrices, confidence
//!   ratios, CIF tailoring and a finite-difference score oracle.
//! * [`sbm`] / [`rbm`]: Boltzmann machines without and with hidden units,
//!   their exact distributions and trainers.
//! * [`eval`]: target generation, sampling, metrics and the experiment
//!   runner.
//!
//! States and subsets share one convention: bit `i - 1` of a mask is set
//! iff variable `x_i` is one (or belongs to the subset).

pub mod config;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod linalg;
pub mod rbm;
pub mod rng;
pub mod sbm;
pub mod simplex;
pub mod subset;

pub use config::{CifRule, GammaBMode, GammaHMode, LearningRate, NegativePhase, TrainConfig};
pub use error::{Error, Result};
pub use eval::{ExperimentSpec, ResultTable, SampleSet};
pub use fisher::{CoordSystem, FisherMatrix, InformationRatios};
pub use rbm::{JointDistribution, RbmParams};
pub use sbm::SbmParams;
pub use simplex::{kl_divergence, Distribution, EtaCoords, MixedCoords, ThetaCoords};
pub use subset::{SubsetIndex, MAX_VARS};

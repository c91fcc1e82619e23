//! Recovery of layered latent causal variables from linearly mixed data.
//!
//! The pipeline is: simulate an additive-Gaussian-noise SCM ([`synth`]), obtain
//! score Jacobians of the observations ([`oracle`] or [`stein`]), search for
//! directions whose Jacobian quadratic form has zero variance ([`solver`]), peel
//! the latent layers off one round at a time ([`recovery`]), and score the result
//! against ground truth ([`eval`], [`experiment`]).

pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod krr;
pub mod linalg;
pub mod mechanism;
pub mod oracle;
pub mod recovery;
pub mod rng;
pub mod scm;
pub mod solver;
pub mod stein;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{mac, perturb_jacobians, EvalReport};
pub use experiment::{run_experiment, ser_sweep, ExperimentConfig, GraphSpec, ScoreMode};
pub use graph::{Dag, Layers, Relatives};
pub use mechanism::{Mechanism, MechanismRegistry};
pub use oracle::{JacobianBatch, Source, Space};
pub use recovery::{
    recover_latents, recover_noise, JacobianSource, NoiseResult, RecoveryConfig, RecoveryResult,
    RecoveryStatus,
};
pub use scm::Scm;
pub use solver::{find_null_direction, NullDirectionResult, SolverConfig};
pub use stein::SteinConfig;
pub use synth::{MixingMatrix, SampleBatch};

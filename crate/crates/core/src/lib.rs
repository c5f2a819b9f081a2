//! Data-driven adaptive output regulation for unknown SISO LTI plants driven
//! by unknown linear exosystems.
//!
//! The pipeline: collect an input/output record from the plant
//! ([`sim`]), replay filters and the nominal internal model over it
//! ([`postproc`]), synthesize a stabilizing gain from the sampled data
//! ([`synth`]), then close the loop with a jump-driven identifier that adapts
//! the internal model ([`identifier`], [`regulator`]). [`oracle`] computes
//! the model-based quantities the data-driven path never sees, for checking.

pub mod cli;
pub mod config;
pub mod error;
pub mod identifier;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod postproc;
pub mod regulator;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
pub use model::{Exosystem, FilterParams, LtiPlant, ThetaBox};
pub use regulator::{run, RegulatorConfig, RunLog};
pub use sim::Dataset;

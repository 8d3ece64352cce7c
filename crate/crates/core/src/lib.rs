//! Online aggregation of an unbounded, growing pool of local regression
//! experts under square loss, with analytic handling of the infinite prior
//! tail.

pub mod datagen;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod experts;
pub mod loss;
pub mod math;
pub mod oracle;
pub mod weights;

pub use engine::{run, Engine, EngineConfig, StepRecord};
pub use error::{Error, Result};
pub use loss::{square_loss, substitute, superprediction, MixableLoss, OutcomeRange, SquareLoss};
pub use weights::{MixingScheme, PosteriorHistory, WeightState};

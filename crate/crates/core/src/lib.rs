pub mod analysis;
pub mod copula;
pub mod data;
pub mod error;
pub mod joint;
pub mod marginal;
pub mod mvn;
pub mod optimize;
pub mod rng;
pub mod sim;
pub mod synth;
pub mod trial_level;
pub mod verdict;

pub use error::{Error, Result};

//! Mallows models and mixtures: exact and sampled distributions, moment
//! oracles, identifiability checks, lower-bound constructions and two mixture
//! learners.

pub mod config;
pub mod distance;
pub mod error;
pub mod identifiability;
pub mod learner_general;
pub mod learner_separated;
pub mod lowerbound;
pub mod model;
pub mod oracle;
pub mod perm;
pub mod seed;
pub mod structures;
pub mod table;

pub use error::{Error, Result};
pub use learner_general::{learn_mixture_general, GeneralOutcome, LearnerBudget};
pub use learner_separated::{learn_mixture_separated, SeparatedOutcome, SeparationParams};
pub use model::{DistributionVector, MallowsMixture, MallowsModel};
pub use oracle::{Estimate, PlacementOracle, PlacementQuery, TableOracle};
pub use perm::{ElementSubset, Permutation};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

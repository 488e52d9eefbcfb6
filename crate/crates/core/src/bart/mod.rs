//! Sum-of-trees regression with Gaussian and probit response layers.

pub mod hyper;
pub mod sampler;
pub mod tree;

pub use hyper::{calibrate_s0, calibrate_tau, split_prior_prob, BartHyperparams, Link, PROBIT_TARGET};
pub(crate) use sampler::probit_latent_one;
pub use sampler::{probit_latent_update, sample_sigma, sample_sigma_prior, BartSampler, MoveStats};
pub use tree::{forest_predict, Design, FeatureKind, FeatureSpace, Forest, LeafPrior, Node, MAX_CUTS, SplitRule, SplitTest, Tree};

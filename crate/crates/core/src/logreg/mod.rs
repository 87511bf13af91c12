//! Private logistic regression trained on corrupted labels and inputs via
//! importance-sampled EM.

mod energy;
mod model;
mod sampling;
mod train;

pub use energy::{energy_class, update_prior_discrete};
pub use model::{logistic_loglik, predict, train_logistic, FeatureMap, LogisticFit};
pub use sampling::{
    sample_importance, GaussianProposal, ImportanceBatch, InputNoise, PriorRef,
};
pub use train::{
    exact_em_spread_logreg, train_spread_logreg, ExactEmFit, PriorMode, SpreadFit, TrainConfig,
    TrainedPrior,
};

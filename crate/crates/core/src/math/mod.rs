//! Priors over the expert set, relative entropy and stable exponential sums.

mod distribution;
mod logsum;
mod prior;

pub use distribution::{log_mix, relative_entropy, Distribution, RelativeEntropy};
pub use logsum::{log_add_exp, log_sum_exp};
pub use prior::{partial_constant, prior_constant, prior_weight, Prior, PriorWeights};

pub(crate) use logsum::ln_or_neg_inf;
pub(crate) use prior::KahanSum;

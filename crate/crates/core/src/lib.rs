//! ReLU network constructions for the maximum function, together with the
//! numerical tooling used to check them: Monte Carlo error estimation,
//! separation predicates, Fourier-side special functions and lower-bound
//! diagnostics.

pub mod construct;
pub mod error;
pub mod lowerbound;
pub mod net;
pub mod quadrature;
pub mod report;
pub mod sampling;
pub mod spectral;
pub mod train;

pub use construct::{
    alpha_for_accuracy, beta, deep_max, depth3_max, exact_max_tree, rescale_to_box,
    ConstructionParams, DomainBox,
};
pub use error::{Error, Result};
pub use net::{Activation, AffineLayer, FeedForwardNet, NetStats};
pub use sampling::{
    estimate_violation_prob, is_delta_separated, max_oracle, mc_l2_error, mc_max_error,
    DistKind, DistributionSpec, ErrorEstimate, ProportionEstimate,
};

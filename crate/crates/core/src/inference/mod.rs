//! Markov chain Monte Carlo for landmark matching and template estimation.

pub mod gibbs;
pub mod moves;
pub mod priors;
pub mod rng;
pub mod wiener;

pub use gibbs::{
    run_matching, run_template, AcceptanceStats, ChainSettings, MatchingOutput, SavedBridge, TemplateOutput,
    ThetaRecord, Tuning,
};
pub use moves::{
    build_guide, momentum_log_target, template_log_target, update_bridge_pcn, update_momenta_mala,
    update_template_rmmala, update_theta, Bridge, Guide, MomentumTarget, TemplateShapeTarget,
};
pub use priors::Priors;
pub use wiener::{sample_wiener, WienerPath};

//! Simulation-based sample size determination for designs whose power has no
//! closed form.

pub mod dgp;
pub mod engine;
pub mod estimators;
pub mod linalg;
pub mod numeric;
pub mod proxy;
pub mod pvalue;
pub mod rng;

//! Special functions, exact binomial intervals and quadrature used by every
//! statistical decision in the cascade.

mod beta;
mod binomial;
mod quadrature;

pub use beta::{beta_quantile, ln_beta, ln_gamma, reg_inc_beta, QUANTILE_TOL};
pub use binomial::{binom_cdf, binom_ci, binom_ln_pmf, binom_sf, lower_bound_reaches, upper_bound_below, BinomInterval};
pub use quadrature::{integrate_unit, normal_cdf, normal_pdf, GaussLegendre, DEFAULT_NODES, MIN_NODES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("convergence error: {0}")]
    Convergence(String),
}

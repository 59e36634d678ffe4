//! Certificate functionals, stability checks, the γ* search, linear
//! bounded-real checks and empirical gain falsification.

mod functionals;
mod linear;
mod stability;

pub use functionals::{delta_v, g0, g_beta, h0, h1, GainValue, VSearch};
pub use linear::{
    adjoint_series, default_linear_beta_grid, derive_p0_q0_gamma0, estimate_c1_c2,
    linear_brl, linear_brl_search, linear_internal, A2Diagnostics, EnvelopeRow, EnvelopeTable,
    LemmaConstants, LinearBrlReport, LinearBrlSearch, PStrategy,
};
pub use stability::{
    check_external, check_internal, default_beta_grid, dissipation_profile, empirical_gain,
    gamma_star_search, log_beta_grid, GainReport, GammaStar, StorageFamily, Verdict,
    CONVEXITY_PAIRS,
};

pub(crate) use functionals::{check_beta, composed_degree, Split};

#[cfg(test)]
mod tests;

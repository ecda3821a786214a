//! Poisson count likelihood over flat cell collections.
//!
//! Deaths in each cell follow `d ~ Poisson(E * exp(eta))`. The full
//! normalizing constant `-log d!` is kept so values match an external
//! Poisson pmf; it cancels in every Metropolis-Hastings ratio. Cells with
//! zero exposure are structurally missing and contribute nothing.

use statrs::function::gamma::ln_gamma;

use crate::error::{CoreError, Result};

/// Log-likelihood of `(deaths, exposures, eta)` cells under the Poisson model.
/// Works for any flattened grid, so both the age-period and the
/// age-period-product layers share it.
pub fn log_likelihood(deaths: &[f64], exposures: &[f64], eta: &[f64]) -> Result<f64> {
    if deaths.len() != exposures.len() || deaths.len() != eta.len() {
        return Err(CoreError::Data(format!(
            "cell count mismatch: {} deaths, {} exposures, {} eta",
            deaths.len(),
            exposures.len(),
            eta.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..deaths.len() {
        let (d, e) = (deaths[i], exposures[i]);
        if e == 0.0 {
            if d > 0.0 {
                return Err(CoreError::Data(format!("cell {i}: deaths {d} with zero exposure")));
            }
            continue;
        }
        total += d * (e.ln() + eta[i]) - e * eta[i].exp() - ln_gamma(d + 1.0);
    }
    Ok(total)
}

/// Same sum without shape or structural checks, for the sampler's hot path.
/// Returns `-inf` when any term is non-finite, which rejects the proposal.
pub fn log_likelihood_unchecked(deaths: &[f64], exposures: &[f64], eta: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..deaths.len() {
        let e = exposures[i];
        if e == 0.0 {
            continue;
        }
        let d = deaths[i];
        let term = d * (e.ln() + eta[i]) - e * eta[i].exp() - ln_gamma(d + 1.0);
        if !term.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += term;
    }
    total
}

/// Per-cell score `d - E * exp(eta)` (zero for structurally missing cells).
/// This is the gradient of the log-likelihood with respect to `eta`.
pub fn residuals(deaths: &[f64], exposures: &[f64], eta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..deaths.len()).map(|i| {
        let e = exposures[i];
        if e == 0.0 {
            0.0
        } else {
            deaths[i] - e * eta[i].exp()
        }
    }));
}

/// Per-cell curvature weight `E * exp(eta)` (zero for missing cells); the
/// negative second derivative of the log-likelihood with respect to `eta`.
pub fn weights(exposures: &[f64], eta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..exposures.len()).map(|i| {
        let e = exposures[i];
        if e == 0.0 {
            0.0
        } else {
            e * eta[i].exp()
        }
    }));
}

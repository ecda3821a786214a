//! Sampler output against independent numerical oracles.
//!
//! The two-model target is small enough that posterior model probabilities
//! follow from one-dimensional quadrature of the marginal likelihoods; the
//! chain's visit frequencies must agree. Prior-only runs (no informative
//! cells, proper priors) must reproduce the model prior over the catalog.

use rjmort::dataset::ApDataset;
use rjmort::inference::{run_chain, ApFramework, Framework, SamplerOptions, Schedule};
use rjmort::prior::{ModelPrior, ParamPrior};
use rjmort::sim::config_probabilities;
use rjmort::toy::{ToyData, ToySampler};
use statrs::function::gamma::ln_gamma;

/// log integral of `Pois(d; E exp(theta)) N(theta; 0, tau^2)` over theta,
/// by trapezoid on a wide fixed grid.
fn log_marginal_one_cell(d: f64, e: f64, tau: f64) -> f64 {
    let lo = -40.0;
    let hi = 20.0;
    let n = 120_001;
    let h = (hi - lo) / (n - 1) as f64;
    let mut max_term = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let theta: f64 = lo + i as f64 * h;
        let log_lik = d * (e.ln() + theta) - e * theta.exp() - ln_gamma(d + 1.0);
        let log_prior = -0.5 * (theta / tau).powi(2)
            - tau.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let weight: f64 = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let term = log_lik + log_prior + weight.ln() + h.ln();
        terms.push(term);
        if term > max_term {
            max_term = term;
        }
    }
    max_term + terms.iter().map(|t| (t - max_term).exp()).sum::<f64>().ln()
}

/// Quadrature posterior probability of the per-age model under a uniform
/// model prior. The constant model integrates the product likelihood over
/// one shared level; the per-age model factorizes into one-cell marginals.
fn quadrature_per_age_probability(data: &ToyData, tau: f64) -> f64 {
    // Per-age model: product of independent one-cell marginals.
    let log_z_per_age: f64 = data
        .deaths
        .iter()
        .zip(&data.exposures)
        .map(|(&d, &e)| log_marginal_one_cell(d, e, tau))
        .sum();

    // Constant model: one-dimensional integral of the joint likelihood.
    let lo = -40.0;
    let hi = 20.0;
    let n = 120_001;
    let h = (hi - lo) / (n - 1) as f64;
    let mut max_term = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let theta: f64 = lo + i as f64 * h;
        let mut log_lik = 0.0;
        for (&d, &e) in data.deaths.iter().zip(&data.exposures) {
            log_lik += d * (e.ln() + theta) - e * theta.exp() - ln_gamma(d + 1.0);
        }
        let log_prior = -0.5 * (theta / tau).powi(2)
            - tau.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let weight: f64 = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let term = log_lik + log_prior + weight.ln() + h.ln();
        terms.push(term);
        if term > max_term {
            max_term = term;
        }
    }
    let log_z_constant =
        max_term + terms.iter().map(|t| (t - max_term).exp()).sum::<f64>().ln();

    let m = log_z_per_age.max(log_z_constant);
    let za = (log_z_per_age - m).exp();
    let zc = (log_z_constant - m).exp();
    za / (za + zc)
}

#[test]
fn two_model_chain_tracks_quadrature() {
    // Mild heterogeneity: both models keep non-trivial posterior mass.
    let data = ToyData::new(vec![13.0, 8.0, 12.0], vec![100.0, 100.0, 100.0]).unwrap();
    let tau = 10.0;
    let oracle = quadrature_per_age_probability(&data, tau);
    let sampler = ToySampler::new(&data, tau);
    let opts = SamplerOptions { param_prior: ParamPrior::Normal { tau }, ..Default::default() };
    let chain = sampler.run(40_000, &opts, 20240);
    assert!(
        (chain - oracle).abs() < 0.06,
        "chain frequency {chain} vs quadrature {oracle}"
    );
}

fn empty_dataset() -> ApDataset {
    ApDataset::new(
        vec![60, 61, 62],
        vec![2000, 2001, 2002],
        vec![0.0; 9],
        vec![0.0; 9],
    )
    .unwrap()
}

#[test]
fn prior_only_run_recovers_uniform_model_prior() {
    let data = empty_dataset();
    let fw = ApFramework::new(&data);
    let opts = SamplerOptions {
        model_prior: ModelPrior::Uniform,
        param_prior: ParamPrior::Normal { tau: 10.0 },
        ..Default::default()
    };
    let schedule = Schedule::new(2_000, 25_000, 1).unwrap();
    let trace = run_chain(&fw, fw.default_init_config(), schedule, &opts, 0, 7).unwrap();
    let probs = config_probabilities(std::slice::from_ref(&trace));
    let expected = 1.0 / fw.catalog().len() as f64;
    for cfg in fw.catalog() {
        let p = probs.get(&cfg.to_string()).copied().unwrap_or(0.0);
        assert!(
            (p - expected).abs() < 0.05,
            "config {cfg}: frequency {p} vs prior {expected}"
        );
    }
}

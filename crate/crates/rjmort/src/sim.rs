//! Synthetic age-period datasets with controlled effect sizes, and replicate
//! grids that measure how often each configuration is recovered.
//!
//! Two generating designs are provided. The first plants a non-linear age
//! level (noise of scale `sigma_a` around a linear trend) and a cohort effect
//! of scale `sigma_g` on top of an age-independent period effect. The second
//! plants an age-modulated period effect `k_t (1 + b_bar * b_x)` with profile
//! noise of scale `sigma_b`; smaller `b_bar` hides the modulation, smaller
//! `sigma_b` hides its non-linearity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use std::collections::BTreeMap;

use crate::ap::{constraint_set_ap, ApConfig};
use crate::constraint::{project_to_constraints, BlockLayout};
use crate::dataset::{age_dev, cohort_index, year_dev, ApDataset};
use crate::error::Result;
use crate::inference::{
    derive_seed, run_chain, ApFramework, Framework, SamplerOptions, Schedule, Trace,
};
use crate::params::BlockId;

/// Which effects the generator plants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimStudy {
    /// Non-linear age level plus cohort effect (per-age noise `sigma_a`,
    /// cohort noise `sigma_g`); the period effect is age-independent.
    LevelCohort { sigma_a: f64, sigma_g: f64 },
    /// Age-modulated period effect `k_t (1 + b_bar b_x)` over a linear age
    /// level; `b_x` is noise of scale `sigma_b`.
    AgeModulation { b_bar: f64, sigma_b: f64 },
}

impl SimStudy {
    pub fn knobs(&self) -> (f64, f64) {
        match *self {
            SimStudy::LevelCohort { sigma_a, sigma_g } => (sigma_a, sigma_g),
            SimStudy::AgeModulation { b_bar, sigma_b } => (b_bar, sigma_b),
        }
    }

    /// The 3x3 grid of knob settings used by the replicate studies.
    pub fn grid(study: u8) -> Vec<SimStudy> {
        let mut out = Vec::with_capacity(9);
        match study {
            1 => {
                for &sigma_a in &[0.025, 0.05, 0.075] {
                    for &sigma_g in &[0.05, 0.07, 0.09] {
                        out.push(SimStudy::LevelCohort { sigma_a, sigma_g });
                    }
                }
            }
            _ => {
                for &b_bar in &[0.3, 0.4, 0.5] {
                    for &sigma_b in &[0.05, 0.10, 0.15] {
                        out.push(SimStudy::AgeModulation { b_bar, sigma_b });
                    }
                }
            }
        }
        out
    }
}

/// Generator settings: grid shape, exposure level, and the base surface.
#[derive(Debug, Clone, Copy)]
pub struct SimRecipe {
    pub study: SimStudy,
    pub n_ages: usize,
    pub n_years: usize,
    pub exposure_mean: f64,
    /// Mean log-mortality at the central age.
    pub base_level: f64,
    /// Log-mortality slope per age step.
    pub base_slope: f64,
    /// Period-effect slope per year step.
    pub period_slope: f64,
    /// Standard deviation of the period-effect wiggle.
    pub period_noise: f64,
}

impl SimRecipe {
    /// Defaults sized so the planted effects are detectable at exposure 1000
    /// on a 20 x 30 grid.
    pub fn new(study: SimStudy) -> Self {
        Self {
            study,
            n_ages: 20,
            n_years: 30,
            exposure_mean: 1000.0,
            base_level: -2.0,
            base_slope: 0.04,
            period_slope: -0.08,
            period_noise: 0.02,
        }
    }
}

/// Draw one dataset plus the generating log-mortality surface.
pub fn simulate_ap_dataset_with_eta(recipe: &SimRecipe, seed: u64) -> Result<(ApDataset, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_n, t_n) = (recipe.n_ages, recipe.n_years);

    // Centered period path.
    let noise = Normal::new(0.0, recipe.period_noise.max(1e-12)).expect("valid sd");
    let mut k: Vec<f64> = (0..t_n)
        .map(|t| recipe.period_slope * year_dev(t, t_n) + noise.sample(&mut rng))
        .collect();
    let k_mean = k.iter().sum::<f64>() / t_n as f64;
    for v in &mut k {
        *v -= k_mean;
    }

    let eta = match recipe.study {
        SimStudy::LevelCohort { sigma_a, sigma_g } => {
            let na = Normal::new(0.0, sigma_a.max(1e-12)).expect("valid sd");
            let a_x: Vec<f64> = (0..x_n)
                .map(|x| {
                    recipe.base_level + recipe.base_slope * age_dev(x, x_n) + na.sample(&mut rng)
                })
                .collect();
            let ng = Normal::new(0.0, sigma_g.max(1e-12)).expect("valid sd");
            let raw_gamma: Vec<f64> = (0..x_n + t_n - 1).map(|_| ng.sample(&mut rng)).collect();
            let cfg = ApConfig::new(1, 1, 1, 2).expect("valid");
            let layout =
                BlockLayout::general(BlockId::Gamma, x_n + t_n - 1, &constraint_set_ap(cfg));
            let gamma = project_to_constraints(&raw_gamma, &layout)?;
            let mut eta = vec![0.0; x_n * t_n];
            for x in 0..x_n {
                for t in 0..t_n {
                    eta[x * t_n + t] = a_x[x] + k[t] + gamma[cohort_index(x, t, x_n)];
                }
            }
            eta
        }
        SimStudy::AgeModulation { b_bar, sigma_b } => {
            let nb = Normal::new(0.0, sigma_b.max(1e-12)).expect("valid sd");
            let raw_b: Vec<f64> = (0..x_n).map(|_| nb.sample(&mut rng)).collect();
            let cfg = ApConfig::new(2, 2, 2, 1).expect("valid");
            let layout = BlockLayout::general(BlockId::Bx, x_n, &constraint_set_ap(cfg));
            let b_x = project_to_constraints(&raw_b, &layout)?;
            let mut eta = vec![0.0; x_n * t_n];
            for x in 0..x_n {
                let level = recipe.base_level + recipe.base_slope * age_dev(x, x_n);
                for t in 0..t_n {
                    eta[x * t_n + t] = level + k[t] * (1.0 + b_bar * b_x[x]);
                }
            }
            eta
        }
    };

    let pois_e = Poisson::new(recipe.exposure_mean).expect("positive mean");
    let mut deaths = vec![0.0; x_n * t_n];
    let mut exposures = vec![0.0; x_n * t_n];
    for i in 0..x_n * t_n {
        let e: f64 = pois_e.sample(&mut rng);
        exposures[i] = e;
        if e > 0.0 {
            let mean = e * eta[i].exp();
            deaths[i] = Poisson::new(mean.max(1e-12)).expect("positive mean").sample(&mut rng);
        }
    }
    let ages: Vec<i32> = (0..x_n as i32).map(|x| 60 + x).collect();
    let years: Vec<i32> = (0..t_n as i32).map(|t| 1990 + t).collect();
    Ok((ApDataset::new(ages, years, deaths, exposures)?, eta))
}

/// Draw one dataset from the recipe.
pub fn simulate_ap_dataset(recipe: &SimRecipe, seed: u64) -> Result<ApDataset> {
    simulate_ap_dataset_with_eta(recipe, seed).map(|(d, _)| d)
}

/// Averaged posterior configuration probabilities for one grid setting.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub study: SimStudy,
    pub replicates: usize,
    /// Mean posterior probability per configuration string.
    pub avg_probability: BTreeMap<String, f64>,
}

impl StudyRow {
    pub fn probability(&self, config: &str) -> f64 {
        self.avg_probability.get(config).copied().unwrap_or(0.0)
    }

    /// Marginal probability that the given indicator (1-based position in
    /// the configuration string) equals `value`.
    pub fn delta_marginal(&self, delta_index: usize, value: u8) -> f64 {
        self.avg_probability
            .iter()
            .filter(|(cfg, _)| cfg.as_bytes().get(delta_index - 1).map(|b| b - b'0') == Some(value))
            .map(|(_, p)| p)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

/// Posterior configuration probabilities of one fit: kept-sample frequencies
/// pooled across chains.
pub fn config_probabilities<C: std::fmt::Display>(traces: &[Trace<C>]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for trace in traces {
        for sample in &trace.samples {
            *counts.entry(sample.config.to_string()).or_insert(0.0) += 1.0;
            total += 1.0;
        }
    }
    for v in counts.values_mut() {
        *v /= total;
    }
    counts
}

/// Simulate and fit `replicates` datasets per grid setting and average the
/// posterior configuration probabilities. Settings and replicates run in
/// parallel; every dataset and chain seed derives from `base_seed`.
pub fn run_study(
    settings: &[SimStudy],
    template: &SimRecipe,
    replicates: usize,
    chains: usize,
    schedule: Schedule,
    opts: &SamplerOptions,
    base_seed: u64,
) -> Result<StudyTable> {
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|cell| (0..replicates).map(move |rep| (cell, rep)))
        .collect();
    let results: Vec<(usize, BTreeMap<String, f64>)> = jobs
        .par_iter()
        .map(|&(cell, rep)| -> Result<(usize, BTreeMap<String, f64>)> {
            let recipe = SimRecipe { study: settings[cell], ..*template };
            let replicate_seed = derive_seed(base_seed, (cell * replicates + rep) as u64 + 1);
            let dataset = simulate_ap_dataset(&recipe, replicate_seed)?;
            let framework = ApFramework::new(&dataset);
            let traces: Result<Vec<_>> = (0..chains)
                .map(|chain_id| {
                    let chain_seed = derive_seed(replicate_seed, chain_id as u64 + 1);
                    run_chain(
                        &framework,
                        framework.default_init_config(),
                        schedule,
                        opts,
                        chain_id,
                        chain_seed,
                    )
                })
                .collect();
            Ok((cell, config_probabilities(&traces?)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<StudyRow> = settings
        .iter()
        .map(|&study| StudyRow { study, replicates, avg_probability: BTreeMap::new() })
        .collect();
    for (cell, probs) in results {
        for (cfg, p) in probs {
            *rows[cell].avg_probability.entry(cfg).or_insert(0.0) += p / replicates as f64;
        }
    }
    Ok(StudyTable { rows })
}

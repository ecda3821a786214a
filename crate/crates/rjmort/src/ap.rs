//! The age-period model family.
//!
//! Log-mortality decomposes as an age effect, an (optionally age-modulated)
//! period effect, and an optional cohort effect:
//!
//! ```text
//! eta(x,t) = f1(x) + f2(t, f3(x)) + f4(t - x)
//!
//! f1: a_x                    (delta1 = 1)     f3: bbar * (x - xbar)   (delta3 = 1)
//!     a + b (x - xbar)       (delta1 = 2)         b_x                 (delta3 = 2)
//! f2: k1_t                   (delta2 = 1)     f4: 0                   (delta4 = 1)
//!     k2_t (1 + f3(x))       (delta2 = 2)         gamma_{t-x}         (delta4 = 2)
//!     k1_t + k2_t m(x)       (delta2 = 3)
//! ```
//!
//! Under `delta2 = 3` the modulation profile carries no separate scale: the
//! linear case uses `m(x) = x - xbar` directly and the profile case pins
//! `b_1 = -1` on top of the sum-to-zero constraint.
//!
//! The sampler applies one uniform constraint set across configurations
//! (`sum k2 = 0` whenever `k2` is active, `gamma_{1-X} = 0` whenever the
//! cohort term is active) so that jumps between models leave the constraints
//! of the shared blocks untouched.

use std::fmt;
use std::str::FromStr;

use crate::constraint::{BlockLayout, Constraint, ConstraintSet};
use crate::dataset::{age_dev, cohort_index, ApDataset};
use crate::error::{CoreError, Result};
use crate::params::{BlockId, Params};

/// Model indicator vector `(delta1, delta2, delta3, delta4)`.
///
/// Canonical form stores `delta3 = 1` when `delta2 = 1` (the age modulation
/// only exists once an interaction is chosen).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ApConfig {
    pub delta1: u8,
    pub delta2: u8,
    pub delta3: u8,
    pub delta4: u8,
}

impl ApConfig {
    pub fn new(delta1: u8, delta2: u8, delta3: u8, delta4: u8) -> Result<Self> {
        let cfg = Self { delta1, delta2, delta3, delta4 };
        if !(1..=2).contains(&delta1)
            || !(1..=3).contains(&delta2)
            || !(1..=2).contains(&delta3)
            || !(1..=2).contains(&delta4)
        {
            return Err(CoreError::InvalidConfig(format!("{cfg} out of range")));
        }
        if delta2 == 1 && delta3 != 1 {
            return Err(CoreError::InvalidConfig(format!(
                "{cfg} is non-canonical: delta3 must be 1 when delta2 = 1"
            )));
        }
        Ok(cfg)
    }

    /// All 20 canonical configurations.
    pub fn catalog() -> Vec<Self> {
        let mut out = Vec::new();
        for d1 in 1..=2 {
            for d2 in 1..=3 {
                let d3_range: &[u8] = if d2 == 1 { &[1] } else { &[1, 2] };
                for &d3 in d3_range {
                    for d4 in 1..=2 {
                        out.push(Self { delta1: d1, delta2: d2, delta3: d3, delta4: d4 });
                    }
                }
            }
        }
        out
    }

    /// Whether the age modulation carries a separate scalar slope block.
    pub fn has_bbar(self) -> bool {
        self.delta2 == 2 && self.delta3 == 1
    }

    pub fn has_bx(self) -> bool {
        self.delta2 >= 2 && self.delta3 == 2
    }

    pub fn has_k1(self) -> bool {
        self.delta2 == 1 || self.delta2 == 3
    }

    pub fn has_k2(self) -> bool {
        self.delta2 >= 2
    }

    pub fn has_gamma(self) -> bool {
        self.delta4 == 2
    }

    /// Active blocks in sweep order.
    pub fn active_blocks(self) -> Vec<BlockId> {
        let mut blocks = Vec::with_capacity(5);
        blocks.push(if self.delta1 == 1 { BlockId::Ax } else { BlockId::LevelAb });
        if self.has_k1() {
            blocks.push(BlockId::K1);
        }
        if self.has_k2() {
            blocks.push(BlockId::K2);
        }
        if self.has_bbar() {
            blocks.push(BlockId::Bbar);
        }
        if self.has_bx() {
            blocks.push(BlockId::Bx);
        }
        if self.has_gamma() {
            blocks.push(BlockId::Gamma);
        }
        blocks
    }
}

impl fmt::Display for ApConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}{}", self.delta1, self.delta2, self.delta3, self.delta4)
    }
}

impl FromStr for ApConfig {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s.chars().filter_map(|c| c.to_digit(10).map(|d| d as u8)).collect();
        if digits.len() != 4 || s.chars().count() != 4 {
            return Err(CoreError::InvalidConfig(format!("expected 4 digits, got {s:?}")));
        }
        Self::new(digits[0], digits[1], digits[2], digits[3])
    }
}

/// Raw length of a block given the dataset dimensions.
pub fn block_len_ap(block: BlockId, n_ages: usize, n_years: usize) -> usize {
    match block {
        BlockId::Ax | BlockId::Bx => n_ages,
        BlockId::LevelAb => 2,
        BlockId::K1 | BlockId::K2 => n_years,
        BlockId::Bbar => 1,
        BlockId::Gamma => n_ages + n_years - 1,
        _ => panic!("block {block} does not belong to the age-period family"),
    }
}

/// Identifiability constraints for one configuration, with the sampler-side
/// uniform choices applied: `sum k2 = 0` for every model with `k2` active and
/// `gamma_{1-X} = 0` for every model with a cohort term.
pub fn constraint_set_ap(config: ApConfig) -> ConstraintSet {
    let mut cs = Vec::new();
    if config.has_k1() {
        cs.push(Constraint::sum_zero(BlockId::K1));
    }
    if config.has_k2() {
        cs.push(Constraint::sum_zero(BlockId::K2));
    }
    if config.has_bx() {
        cs.push(Constraint::sum_zero(BlockId::Bx));
        if config.delta2 == 3 {
            cs.push(Constraint::Pin { block: BlockId::Bx, index: 0, value: -1.0 });
        }
    }
    if config.has_gamma() {
        cs.push(Constraint::sum_zero(BlockId::Gamma));
        // gamma_{1-X} is the first cohort in storage order.
        cs.push(Constraint::Pin { block: BlockId::Gamma, index: 0, value: 0.0 });
    }
    ConstraintSet::new(cs)
}

/// Free-coordinate layout of one active block.
pub fn layout_ap(config: ApConfig, block: BlockId, n_ages: usize, n_years: usize) -> BlockLayout {
    let set = constraint_set_ap(config);
    BlockLayout::general(block, block_len_ap(block, n_ages, n_years), &set)
}

/// Number of free coordinates of the whole model.
pub fn model_dimension_ap(config: ApConfig, n_ages: usize, n_years: usize) -> usize {
    config
        .active_blocks()
        .into_iter()
        .map(|b| layout_ap(config, b, n_ages, n_years).free_dim())
        .sum()
}

/// Age-modulation profile entering `f2`; `None` when `delta2 = 1`.
/// For `delta2 = 2` the period effect multiplies `1 + phi(x)`, for
/// `delta2 = 3` it multiplies `phi(x)` next to the additive `k1`.
fn modulation_profile(config: ApConfig, params: &Params, n_ages: usize) -> Result<Option<Vec<f64>>> {
    if !config.has_k2() {
        return Ok(None);
    }
    let phi = match (config.delta2, config.delta3) {
        (2, 1) => {
            let bbar = params.get(BlockId::Bbar)?[0];
            (0..n_ages).map(|x| bbar * age_dev(x, n_ages)).collect()
        }
        (3, 1) => (0..n_ages).map(|x| age_dev(x, n_ages)).collect(),
        (_, 2) => params.get(BlockId::Bx)?.to_vec(),
        _ => unreachable!(),
    };
    Ok(Some(phi))
}

/// Predicted log-mortality on the full grid, row-major `X x T`.
pub fn predict_eta_ap(config: ApConfig, params: &Params, n_ages: usize, n_years: usize) -> Result<Vec<f64>> {
    let mut eta = vec![0.0; n_ages * n_years];
    accumulate_eta_ap(config, params, n_ages, n_years, &mut eta)?;
    Ok(eta)
}

pub(crate) fn accumulate_eta_ap(
    config: ApConfig,
    params: &Params,
    n_ages: usize,
    n_years: usize,
    eta: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(eta.len(), n_ages * n_years);
    let level: Vec<f64> = if config.delta1 == 1 {
        params.get(BlockId::Ax)?.to_vec()
    } else {
        let ab = params.get(BlockId::LevelAb)?;
        (0..n_ages).map(|x| ab[0] + ab[1] * age_dev(x, n_ages)).collect()
    };
    let k1 = if config.has_k1() { Some(params.get(BlockId::K1)?) } else { None };
    let k2 = if config.has_k2() { Some(params.get(BlockId::K2)?) } else { None };
    let phi = modulation_profile(config, params, n_ages)?;
    let gamma = if config.has_gamma() { Some(params.get(BlockId::Gamma)?) } else { None };

    for x in 0..n_ages {
        for t in 0..n_years {
            let mut v = level[x];
            match config.delta2 {
                1 => v += k1.unwrap()[t],
                2 => v += k2.unwrap()[t] * (1.0 + phi.as_ref().unwrap()[x]),
                3 => v += k1.unwrap()[t] + k2.unwrap()[t] * phi.as_ref().unwrap()[x],
                _ => unreachable!(),
            }
            if let Some(g) = gamma {
                v += g[cohort_index(x, t, n_ages)];
            }
            eta[x * n_years + t] = v;
        }
    }
    Ok(())
}

/// Gradient of the log-likelihood with respect to the free coordinates of
/// `block`, at the current parameter values.
pub fn loglik_gradient_block(
    data: &ApDataset,
    config: ApConfig,
    params: &Params,
    block: BlockId,
) -> Result<Vec<f64>> {
    if !config.active_blocks().contains(&block) {
        return Err(CoreError::InactiveBlock(block));
    }
    let (x_n, t_n) = (data.n_ages(), data.n_years());
    let eta = predict_eta_ap(config, params, x_n, t_n)?;
    let mut r = Vec::new();
    crate::likelihood::residuals(&data.deaths, &data.exposures, &eta, &mut r);
    let raw = raw_gradient_ap(data, config, params, block, &r)?;
    Ok(layout_ap(config, block, x_n, t_n).chain_gradient(&raw))
}

/// Gradient with respect to the raw entries of `block`, given per-cell scores `r`.
pub(crate) fn raw_gradient_ap(
    data: &ApDataset,
    config: ApConfig,
    params: &Params,
    block: BlockId,
    r: &[f64],
) -> Result<Vec<f64>> {
    let (x_n, t_n) = (data.n_ages(), data.n_years());
    let g = match block {
        BlockId::Ax => (0..x_n)
            .map(|x| (0..t_n).map(|t| r[x * t_n + t]).sum())
            .collect(),
        BlockId::LevelAb => {
            let mut ga = 0.0;
            let mut gb = 0.0;
            for x in 0..x_n {
                let dev = age_dev(x, x_n);
                for t in 0..t_n {
                    ga += r[x * t_n + t];
                    gb += r[x * t_n + t] * dev;
                }
            }
            vec![ga, gb]
        }
        BlockId::K1 => (0..t_n)
            .map(|t| (0..x_n).map(|x| r[x * t_n + t]).sum())
            .collect(),
        BlockId::K2 => {
            let phi = modulation_profile(config, params, x_n)?.expect("k2 active");
            (0..t_n)
                .map(|t| {
                    (0..x_n)
                        .map(|x| {
                            let load = if config.delta2 == 2 { 1.0 + phi[x] } else { phi[x] };
                            r[x * t_n + t] * load
                        })
                        .sum()
                })
                .collect()
        }
        BlockId::Bbar => {
            let k2 = params.get(BlockId::K2)?;
            let mut g = 0.0;
            for x in 0..x_n {
                let dev = age_dev(x, x_n);
                for t in 0..t_n {
                    g += r[x * t_n + t] * k2[t] * dev;
                }
            }
            vec![g]
        }
        BlockId::Bx => {
            let k2 = params.get(BlockId::K2)?;
            (0..x_n)
                .map(|x| (0..t_n).map(|t| r[x * t_n + t] * k2[t]).sum())
                .collect()
        }
        BlockId::Gamma => {
            let mut g = vec![0.0; data.n_cohorts()];
            for x in 0..x_n {
                for t in 0..t_n {
                    g[cohort_index(x, t, x_n)] += r[x * t_n + t];
                }
            }
            g
        }
        _ => return Err(CoreError::InactiveBlock(block)),
    };
    Ok(g)
}

/// Largest constraint residual over all active blocks.
pub fn max_constraint_residual_ap(config: ApConfig, params: &Params, n_ages: usize, n_years: usize) -> f64 {
    config
        .active_blocks()
        .into_iter()
        .filter_map(|b| {
            let layout = layout_ap(config, b, n_ages, n_years);
            params.get(b).ok().map(|raw| layout.max_residual(raw))
        })
        .fold(0.0, f64::max)
}

/// Reparametrization of the age-modulated period effect `k2_t (1 + b_x)`
/// as `k_t (1 + bbar * btilde_x)` with `btilde_1 = -1`, used when a jump
/// changes the constraints on the modulation profile.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeReparam {
    pub k: Vec<f64>,
    pub bbar: f64,
    pub btilde: Vec<f64>,
}

/// Forward bridge. Requires `sum b_x = 0` and `|b_1| > 1e-8`; the enclosing
/// jump is rejected on the singular case.
pub fn bridge_reparam(k2: &[f64], b_x: &[f64]) -> Result<BridgeReparam> {
    let b1 = b_x[0];
    if b1.abs() <= 1e-8 {
        return Err(CoreError::SingularBridge);
    }
    let bbar = -b1;
    let btilde = b_x.iter().map(|&b| b / bbar).collect();
    Ok(BridgeReparam { k: k2.to_vec(), bbar, btilde })
}

/// Inverse bridge: recovers `(k2, b_x)` from `(k, bbar, btilde)`.
pub fn bridge_inverse(bridge: &BridgeReparam) -> (Vec<f64>, Vec<f64>) {
    let b_x = bridge.btilde.iter().map(|&b| b * bridge.bbar).collect();
    (bridge.k.clone(), b_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn catalog_has_twenty_canonical_rows() {
        let cat = ApConfig::catalog();
        assert_eq!(cat.len(), 20);
        for cfg in &cat {
            assert!(ApConfig::new(cfg.delta1, cfg.delta2, cfg.delta3, cfg.delta4).is_ok());
        }
        assert!(ApConfig::new(1, 1, 2, 1).is_err());
    }

    #[test]
    fn config_string_roundtrip() {
        for cfg in ApConfig::catalog() {
            let parsed: ApConfig = cfg.to_string().parse().unwrap();
            assert_eq!(parsed, cfg);
        }
        assert!("112".parse::<ApConfig>().is_err());
    }

    #[test]
    fn constraint_sets_match_catalog_rows() {
        // a_x + k1 + gamma
        let cs = constraint_set_ap(ApConfig::new(1, 1, 1, 2).unwrap());
        assert_eq!(
            cs.constraints,
            vec![
                Constraint::sum_zero(BlockId::K1),
                Constraint::sum_zero(BlockId::Gamma),
                Constraint::Pin { block: BlockId::Gamma, index: 0, value: 0.0 },
            ]
        );
        // a_x + k1 + k2 b_x
        let cs = constraint_set_ap(ApConfig::new(1, 3, 2, 1).unwrap());
        assert_eq!(
            cs.constraints,
            vec![
                Constraint::sum_zero(BlockId::K1),
                Constraint::sum_zero(BlockId::K2),
                Constraint::sum_zero(BlockId::Bx),
                Constraint::Pin { block: BlockId::Bx, index: 0, value: -1.0 },
            ]
        );
        // a + b(x - xbar) + k1
        let cs = constraint_set_ap(ApConfig::new(2, 1, 1, 1).unwrap());
        assert_eq!(cs.constraints, vec![Constraint::sum_zero(BlockId::K1)]);
    }

    #[test]
    fn model_dimensions_by_free_coordinate_count() {
        // X=20, T=30, C=49.
        let (x, t) = (20, 30);
        assert_eq!(model_dimension_ap(ApConfig::new(2, 1, 1, 1).unwrap(), x, t), 31);
        assert_eq!(model_dimension_ap(ApConfig::new(1, 1, 1, 1).unwrap(), x, t), 49);
        assert_eq!(model_dimension_ap(ApConfig::new(1, 2, 2, 1).unwrap(), x, t), 68);
        // Largest model: X + 2(T-1) + (X-2) + (C-2).
        assert_eq!(
            model_dimension_ap(ApConfig::new(1, 3, 2, 2).unwrap(), x, t),
            20 + 2 * 29 + 18 + 47
        );
    }

    #[test]
    fn eta_constant_model() {
        let cfg = ApConfig::new(2, 1, 1, 1).unwrap();
        let mut params = Params::new();
        params.set(BlockId::LevelAb, vec![-4.0, 0.0]);
        params.set(BlockId::K1, vec![0.0; 4]);
        let eta = predict_eta_ap(cfg, &params, 3, 4).unwrap();
        assert!(eta.iter().all(|&v| v == -4.0));
    }

    #[test]
    fn eta_interaction_vanishes_when_k2_zero() {
        let cfg = ApConfig::new(1, 2, 2, 1).unwrap();
        let mut params = Params::new();
        params.set(BlockId::Ax, vec![-4.0, -3.5, -3.0]);
        params.set(BlockId::K2, vec![0.0; 4]);
        params.set(BlockId::Bx, vec![0.4, -0.1, -0.3]);
        let eta = predict_eta_ap(cfg, &params, 3, 4).unwrap();
        for x in 0..3 {
            for t in 0..4 {
                assert_eq!(eta[x * 4 + t], [-4.0, -3.5, -3.0][x]);
            }
        }
    }

    #[test]
    fn eta_full_model_matches_cellwise_evaluation() {
        // Config (2,3,1,2) on a 3x3 grid with hand-set blocks; eta evaluated
        // independently per cell as a + b(x-xbar) + k1_t + k2_t (x-xbar) + gamma_{t-x}.
        let cfg = ApConfig::new(2, 3, 1, 2).unwrap();
        let (a, b) = (-3.9, 0.05);
        let k1 = [0.2, -0.05, -0.15];
        let k2 = [0.1, 0.02, -0.12];
        let gamma = [0.0, 0.03, -0.01, 0.05, -0.07];
        let mut params = Params::new();
        params.set(BlockId::LevelAb, vec![a, b]);
        params.set(BlockId::K1, k1.to_vec());
        params.set(BlockId::K2, k2.to_vec());
        params.set(BlockId::Gamma, gamma.to_vec());
        let eta = predict_eta_ap(cfg, &params, 3, 3).unwrap();
        for x in 0..3usize {
            for t in 0..3usize {
                let dev = x as f64 - 1.0;
                let expected = a + b * dev + k1[t] + k2[t] * dev + gamma[t + 2 - x];
                assert_relative_eq!(eta[x * 3 + t], expected, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn eta_invariant_under_absorbable_shift() {
        // (1,1,1,1): adding c to every k1 and subtracting it from every a_x
        // leaves eta unchanged (raw, pre-constraint evaluation).
        let cfg = ApConfig::new(1, 1, 1, 1).unwrap();
        let a_x = vec![-4.0, -3.6, -3.1];
        let k1 = vec![0.3, 0.0, -0.1, 0.2];
        let mut p1 = Params::new();
        p1.set(BlockId::Ax, a_x.clone());
        p1.set(BlockId::K1, k1.clone());
        let e1 = predict_eta_ap(cfg, &p1, 3, 4).unwrap();
        let c = 0.731;
        let mut p2 = Params::new();
        p2.set(BlockId::Ax, a_x.iter().map(|v| v - c).collect());
        p2.set(BlockId::K1, k1.iter().map(|v| v + c).collect());
        let e2 = predict_eta_ap(cfg, &p2, 3, 4).unwrap();
        for (u, v) in e1.iter().zip(&e2) {
            assert_relative_eq!(u, v, max_relative = 1e-12);
        }
    }

    #[test]
    fn bridge_small_case_and_identity() {
        let b_x = vec![-0.5, 0.1, 0.4];
        let k2 = vec![0.3, -0.1, -0.2];
        let bridge = bridge_reparam(&k2, &b_x).unwrap();
        assert_relative_eq!(bridge.bbar, 0.5, max_relative = 1e-15);
        assert_eq!(bridge.btilde, vec![-1.0, 0.2, 0.8]);
        assert_eq!(bridge.k, k2);
        // k2_t (1 + b_x) == k_t (1 + bbar btilde_x) cell by cell.
        for t in 0..3 {
            for x in 0..3 {
                let lhs = k2[t] * (1.0 + b_x[x]);
                let rhs = bridge.k[t] * (1.0 + bridge.bbar * bridge.btilde[x]);
                assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
            }
        }
        let (k2_back, bx_back) = bridge_inverse(&bridge);
        for (u, v) in k2_back.iter().zip(&k2) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
        for (u, v) in bx_back.iter().zip(&b_x) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn bridge_rejects_zero_leading_entry() {
        assert!(matches!(
            bridge_reparam(&[0.1, 0.2], &[0.0, 0.5, -0.5]),
            Err(CoreError::SingularBridge)
        ));
    }
}

//! The age-period-product model family.
//!
//! The base model is an age-period-cohort-interaction decomposition,
//!
//! ```text
//! eta(x,t,p) = A(x,p) + B(x,p) (t - tbar) + K(t,p) + gamma_{t-x}
//! ```
//!
//! and each term optionally varies with the stratifying product:
//!
//! ```text
//! A: a_x          (delta1 = 1)   B: b_x        (delta2 = 1)   K: k_t              (delta3 = 1)
//!    a_x + c1_p   (delta1 = 2)      b_x c2_p   (delta2 = 2)      k_t + k2_t c3_p  (delta3 = 2)
//!    a_xp         (delta1 = 3)
//! ```
//!
//! The cohort effect pins its first and last entry instead of the usual
//! moment conditions; that keeps the cohort block's constraints identical in
//! every configuration. `sum c2 = P` (average one) makes the no-product trend
//! the exact nested case, and the extra period term fixes `c3_1 = 1` to pin
//! the scale shared with `k2_t`.

use std::fmt;
use std::str::FromStr;

use crate::constraint::{BlockLayout, Constraint, ConstraintSet};
use crate::dataset::{cohort_index, year_dev, AppDataset};
use crate::error::{CoreError, Result};
use crate::params::{BlockId, Params};

/// Model indicator vector `(delta1, delta2, delta3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AppConfig {
    pub delta1: u8,
    pub delta2: u8,
    pub delta3: u8,
}

impl AppConfig {
    pub fn new(delta1: u8, delta2: u8, delta3: u8) -> Result<Self> {
        let cfg = Self { delta1, delta2, delta3 };
        if !(1..=3).contains(&delta1) || !(1..=2).contains(&delta2) || !(1..=2).contains(&delta3) {
            return Err(CoreError::InvalidConfig(format!("{cfg} out of range")));
        }
        Ok(cfg)
    }

    /// All 12 configurations.
    pub fn catalog() -> Vec<Self> {
        let mut out = Vec::new();
        for d1 in 1..=3 {
            for d2 in 1..=2 {
                for d3 in 1..=2 {
                    out.push(Self { delta1: d1, delta2: d2, delta3: d3 });
                }
            }
        }
        out
    }

    pub fn active_blocks(self) -> Vec<BlockId> {
        let mut blocks = Vec::with_capacity(8);
        match self.delta1 {
            1 => blocks.push(BlockId::Ax),
            2 => {
                blocks.push(BlockId::Ax);
                blocks.push(BlockId::C1);
            }
            _ => blocks.push(BlockId::Axp),
        }
        blocks.push(BlockId::Bx);
        if self.delta2 == 2 {
            blocks.push(BlockId::C2);
        }
        blocks.push(BlockId::Kt);
        if self.delta3 == 2 {
            blocks.push(BlockId::K2t);
            blocks.push(BlockId::C3);
        }
        blocks.push(BlockId::Gamma);
        blocks
    }
}

impl fmt::Display for AppConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.delta1, self.delta2, self.delta3)
    }
}

impl FromStr for AppConfig {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s.chars().filter_map(|c| c.to_digit(10).map(|d| d as u8)).collect();
        if digits.len() != 3 || s.chars().count() != 3 {
            return Err(CoreError::InvalidConfig(format!("expected 3 digits, got {s:?}")));
        }
        Self::new(digits[0], digits[1], digits[2])
    }
}

pub fn block_len_app(block: BlockId, n_ages: usize, n_years: usize, n_products: usize) -> usize {
    match block {
        BlockId::Ax | BlockId::Bx => n_ages,
        BlockId::Axp => n_ages * n_products,
        BlockId::C1 | BlockId::C2 | BlockId::C3 => n_products,
        BlockId::Kt | BlockId::K2t => n_years,
        BlockId::Gamma => n_ages + n_years - 1,
        _ => panic!("block {block} does not belong to the age-period-product family"),
    }
}

/// Identifiability constraints for one configuration.
pub fn constraint_set_app(config: AppConfig, n_ages: usize, n_years: usize, n_products: usize) -> ConstraintSet {
    let n_cohorts = n_ages + n_years - 1;
    let mut cs = vec![
        Constraint::sum_zero(BlockId::Bx),
        Constraint::sum_zero(BlockId::Kt),
        Constraint::sum_zero(BlockId::Gamma),
        Constraint::Pin { block: BlockId::Gamma, index: 0, value: 0.0 },
        Constraint::Pin { block: BlockId::Gamma, index: n_cohorts - 1, value: 0.0 },
    ];
    if config.delta1 == 2 {
        cs.push(Constraint::sum_zero(BlockId::C1));
    }
    if config.delta2 == 2 {
        cs.push(Constraint::SumTo { block: BlockId::C2, target: n_products as f64 });
    }
    if config.delta3 == 2 {
        cs.push(Constraint::sum_zero(BlockId::K2t));
        cs.push(Constraint::sum_zero(BlockId::C3));
        cs.push(Constraint::Pin { block: BlockId::C3, index: 0, value: 1.0 });
    }
    ConstraintSet::new(cs)
}

pub fn layout_app(
    config: AppConfig,
    block: BlockId,
    n_ages: usize,
    n_years: usize,
    n_products: usize,
) -> BlockLayout {
    let set = constraint_set_app(config, n_ages, n_years, n_products);
    BlockLayout::general(block, block_len_app(block, n_ages, n_years, n_products), &set)
}

pub fn model_dimension_app(config: AppConfig, n_ages: usize, n_years: usize, n_products: usize) -> usize {
    config
        .active_blocks()
        .into_iter()
        .map(|b| layout_app(config, b, n_ages, n_years, n_products).free_dim())
        .sum()
}

/// Expand the nested product-level parametrization
/// `a_xp = a_x + c1_p + ctilde_xp` where `ctilde` has all row and column sums
/// zero; `ctilde_free` holds its `(X-1)(P-1)` free values.
pub fn expand_a_nested(a_x: &[f64], c1_p: &[f64], ctilde_free: &[f64]) -> Vec<f64> {
    let (x_n, p_n) = (a_x.len(), c1_p.len());
    let layout = BlockLayout::doubly_centered(BlockId::Axp, x_n, p_n);
    let ctilde = layout.embed(ctilde_free);
    let mut a_xp = vec![0.0; x_n * p_n];
    for x in 0..x_n {
        for p in 0..p_n {
            a_xp[x * p_n + p] = a_x[x] + c1_p[p] + ctilde[x * p_n + p];
        }
    }
    a_xp
}

/// Inverse of [`expand_a_nested`]: `a_x` are the row means, `c1_p` the
/// centered column means, `ctilde` the doubly-centered remainder.
pub fn extract_a_nested(a_xp: &[f64], n_ages: usize, n_products: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (x_n, p_n) = (n_ages, n_products);
    let a_x: Vec<f64> = (0..x_n)
        .map(|x| (0..p_n).map(|p| a_xp[x * p_n + p]).sum::<f64>() / p_n as f64)
        .collect();
    let grand = a_x.iter().sum::<f64>() / x_n as f64;
    let c1_p: Vec<f64> = (0..p_n)
        .map(|p| (0..x_n).map(|x| a_xp[x * p_n + p]).sum::<f64>() / x_n as f64 - grand)
        .collect();
    let mut ctilde = vec![0.0; x_n * p_n];
    for x in 0..x_n {
        for p in 0..p_n {
            ctilde[x * p_n + p] = a_xp[x * p_n + p] - a_x[x] - c1_p[p];
        }
    }
    let layout = BlockLayout::doubly_centered(BlockId::Axp, x_n, p_n);
    let free = layout.extract(&ctilde);
    (a_x, c1_p, free)
}

/// Per-(x,p) level term.
fn level_table(config: AppConfig, params: &Params, n_ages: usize, n_products: usize) -> Result<Vec<f64>> {
    let mut a = vec![0.0; n_ages * n_products];
    match config.delta1 {
        1 => {
            let ax = params.get(BlockId::Ax)?;
            for x in 0..n_ages {
                for p in 0..n_products {
                    a[x * n_products + p] = ax[x];
                }
            }
        }
        2 => {
            let ax = params.get(BlockId::Ax)?;
            let c1 = params.get(BlockId::C1)?;
            for x in 0..n_ages {
                for p in 0..n_products {
                    a[x * n_products + p] = ax[x] + c1[p];
                }
            }
        }
        _ => a.copy_from_slice(params.get(BlockId::Axp)?),
    }
    Ok(a)
}

/// Predicted log-mortality on the full grid, row-major `X x T x P`.
pub fn predict_eta_app(
    config: AppConfig,
    params: &Params,
    n_ages: usize,
    n_years: usize,
    n_products: usize,
) -> Result<Vec<f64>> {
    let (x_n, t_n, p_n) = (n_ages, n_years, n_products);
    let level = level_table(config, params, x_n, p_n)?;
    let b_x = params.get(BlockId::Bx)?;
    let c2 = if config.delta2 == 2 { Some(params.get(BlockId::C2)?) } else { None };
    let k_t = params.get(BlockId::Kt)?;
    let (k2_t, c3) = if config.delta3 == 2 {
        (Some(params.get(BlockId::K2t)?), Some(params.get(BlockId::C3)?))
    } else {
        (None, None)
    };
    let gamma = params.get(BlockId::Gamma)?;

    let mut eta = vec![0.0; x_n * t_n * p_n];
    for x in 0..x_n {
        for t in 0..t_n {
            let tdev = year_dev(t, t_n);
            let g = gamma[cohort_index(x, t, x_n)];
            for p in 0..p_n {
                let trend = match c2 {
                    Some(c2) => b_x[x] * c2[p],
                    None => b_x[x],
                };
                let period = match (k2_t, c3) {
                    (Some(k2), Some(c3)) => k_t[t] + k2[t] * c3[p],
                    _ => k_t[t],
                };
                eta[(x * t_n + t) * p_n + p] = level[x * p_n + p] + trend * tdev + period + g;
            }
        }
    }
    Ok(eta)
}

/// Gradient of the log-likelihood with respect to the free coordinates of `block`.
pub fn loglik_gradient_block_app(
    data: &AppDataset,
    config: AppConfig,
    params: &Params,
    block: BlockId,
) -> Result<Vec<f64>> {
    if !config.active_blocks().contains(&block) {
        return Err(CoreError::InactiveBlock(block));
    }
    let (x_n, t_n, p_n) = (data.n_ages(), data.n_years(), data.n_products());
    let eta = predict_eta_app(config, params, x_n, t_n, p_n)?;
    let mut r = Vec::new();
    crate::likelihood::residuals(&data.deaths, &data.exposures, &eta, &mut r);
    let raw = raw_gradient_app(data, config, params, block, &r)?;
    Ok(layout_app(config, block, x_n, t_n, p_n).chain_gradient(&raw))
}

pub(crate) fn raw_gradient_app(
    data: &AppDataset,
    config: AppConfig,
    params: &Params,
    block: BlockId,
    r: &[f64],
) -> Result<Vec<f64>> {
    let (x_n, t_n, p_n) = (data.n_ages(), data.n_years(), data.n_products());
    let idx = |x: usize, t: usize, p: usize| (x * t_n + t) * p_n + p;
    let g = match block {
        BlockId::Ax => (0..x_n)
            .map(|x| (0..t_n).flat_map(|t| (0..p_n).map(move |p| (t, p))).map(|(t, p)| r[idx(x, t, p)]).sum())
            .collect(),
        BlockId::C1 => (0..p_n)
            .map(|p| (0..x_n).flat_map(|x| (0..t_n).map(move |t| (x, t))).map(|(x, t)| r[idx(x, t, p)]).sum())
            .collect(),
        BlockId::Axp => {
            let mut g = vec![0.0; x_n * p_n];
            for x in 0..x_n {
                for t in 0..t_n {
                    for p in 0..p_n {
                        g[x * p_n + p] += r[idx(x, t, p)];
                    }
                }
            }
            g
        }
        BlockId::Bx => {
            let c2 = if config.delta2 == 2 { Some(params.get(BlockId::C2)?) } else { None };
            (0..x_n)
                .map(|x| {
                    let mut s = 0.0;
                    for t in 0..t_n {
                        let tdev = year_dev(t, t_n);
                        for p in 0..p_n {
                            let load = c2.map_or(1.0, |c2| c2[p]);
                            s += r[idx(x, t, p)] * load * tdev;
                        }
                    }
                    s
                })
                .collect()
        }
        BlockId::C2 => {
            let b_x = params.get(BlockId::Bx)?;
            (0..p_n)
                .map(|p| {
                    let mut s = 0.0;
                    for x in 0..x_n {
                        for t in 0..t_n {
                            s += r[idx(x, t, p)] * b_x[x] * year_dev(t, t_n);
                        }
                    }
                    s
                })
                .collect()
        }
        BlockId::Kt => (0..t_n)
            .map(|t| (0..x_n).flat_map(|x| (0..p_n).map(move |p| (x, p))).map(|(x, p)| r[idx(x, t, p)]).sum())
            .collect(),
        BlockId::K2t => {
            let c3 = params.get(BlockId::C3)?;
            (0..t_n)
                .map(|t| {
                    let mut s = 0.0;
                    for x in 0..x_n {
                        for p in 0..p_n {
                            s += r[idx(x, t, p)] * c3[p];
                        }
                    }
                    s
                })
                .collect()
        }
        BlockId::C3 => {
            let k2 = params.get(BlockId::K2t)?;
            (0..p_n)
                .map(|p| {
                    let mut s = 0.0;
                    for x in 0..x_n {
                        for t in 0..t_n {
                            s += r[idx(x, t, p)] * k2[t];
                        }
                    }
                    s
                })
                .collect()
        }
        BlockId::Gamma => {
            let mut g = vec![0.0; data.n_cohorts()];
            for x in 0..x_n {
                for t in 0..t_n {
                    let c = cohort_index(x, t, x_n);
                    for p in 0..p_n {
                        g[c] += r[idx(x, t, p)];
                    }
                }
            }
            g
        }
        _ => return Err(CoreError::InactiveBlock(block)),
    };
    Ok(g)
}

pub fn max_constraint_residual_app(
    config: AppConfig,
    params: &Params,
    n_ages: usize,
    n_years: usize,
    n_products: usize,
) -> f64 {
    config
        .active_blocks()
        .into_iter()
        .filter_map(|b| {
            let layout = layout_app(config, b, n_ages, n_years, n_products);
            params.get(b).ok().map(|raw| layout.max_residual(raw))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn catalog_has_twelve_rows() {
        assert_eq!(AppConfig::catalog().len(), 12);
    }

    #[test]
    fn base_constraints_match_catalog() {
        let cs = constraint_set_app(AppConfig::new(1, 1, 1).unwrap(), 3, 4, 2);
        assert_eq!(
            cs.constraints,
            vec![
                Constraint::sum_zero(BlockId::Bx),
                Constraint::sum_zero(BlockId::Kt),
                Constraint::sum_zero(BlockId::Gamma),
                Constraint::Pin { block: BlockId::Gamma, index: 0, value: 0.0 },
                Constraint::Pin { block: BlockId::Gamma, index: 5, value: 0.0 },
            ]
        );
    }

    #[test]
    fn product_constraints_by_config() {
        let cs = constraint_set_app(AppConfig::new(2, 2, 1).unwrap(), 3, 4, 2);
        assert!(cs.constraints.contains(&Constraint::sum_zero(BlockId::C1)));
        assert!(cs.constraints.contains(&Constraint::SumTo { block: BlockId::C2, target: 2.0 }));

        let cs = constraint_set_app(AppConfig::new(3, 1, 2).unwrap(), 3, 4, 2);
        assert!(cs.constraints.contains(&Constraint::sum_zero(BlockId::K2t)));
        assert!(cs.constraints.contains(&Constraint::sum_zero(BlockId::C3)));
        assert!(cs.constraints.contains(&Constraint::Pin { block: BlockId::C3, index: 0, value: 1.0 }));
        assert!(!cs.constraints.iter().any(|c| c.block() == BlockId::C1));
    }

    #[test]
    fn dimension_gap_between_product_level_models() {
        // Moving a_x + c1_p -> a_xp adds (X-1)(P-1) free coordinates.
        for (x, t, p) in [(3, 3, 2), (5, 4, 3), (10, 6, 4)] {
            let d2 = model_dimension_app(AppConfig::new(2, 1, 1).unwrap(), x, t, p);
            let d3 = model_dimension_app(AppConfig::new(3, 1, 1).unwrap(), x, t, p);
            assert_eq!(d3 - d2, (x - 1) * (p - 1));
        }
    }

    #[test]
    fn nested_expansion_zero_free_values() {
        let a_x = vec![-4.0, -3.5, -3.0];
        let c1 = vec![0.2, -0.2];
        let a_xp = expand_a_nested(&a_x, &c1, &[0.0, 0.0]);
        for x in 0..3 {
            for p in 0..2 {
                assert_eq!(a_xp[x * 2 + p], a_x[x] + c1[p]);
            }
        }
    }

    #[test]
    fn nested_roundtrip() {
        let a_x = vec![-4.0, -3.4, -2.9, -2.2];
        let c1 = vec![0.3, -0.1, -0.2];
        let free = vec![0.05, -0.02, 0.11, 0.07, -0.4, 0.09];
        let a_xp = expand_a_nested(&a_x, &c1, &free);
        let (a_back, c_back, f_back) = extract_a_nested(&a_xp, 4, 3);
        for (u, v) in a_back.iter().zip(&a_x) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
        for (u, v) in c_back.iter().zip(&c1) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
        for (u, v) in f_back.iter().zip(&free) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    fn base_params(x_n: usize, t_n: usize, p_n: usize) -> Params {
        let mut params = Params::new();
        params.set(BlockId::Ax, vec![-4.0; x_n]);
        params.set(BlockId::Bx, vec![0.0; x_n]);
        params.set(BlockId::Kt, vec![0.0; t_n]);
        params.set(BlockId::Gamma, vec![0.0; x_n + t_n - 1]);
        let _ = p_n;
        params
    }

    #[test]
    fn eta_product_free_case() {
        let cfg = AppConfig::new(1, 1, 1).unwrap();
        let mut params = base_params(3, 3, 2);
        params.set(BlockId::Ax, vec![-4.0, -3.5, -3.0]);
        let eta = predict_eta_app(cfg, &params, 3, 3, 2).unwrap();
        for x in 0..3 {
            for t in 0..3 {
                for p in 0..2 {
                    assert_eq!(eta[(x * 3 + t) * 2 + p], [-4.0, -3.5, -3.0][x]);
                }
            }
        }
    }

    #[test]
    fn eta_product_shift_is_additive() {
        let cfg = AppConfig::new(2, 1, 1).unwrap();
        let mut params = base_params(3, 3, 2);
        params.set(BlockId::C1, vec![0.4, -0.4]);
        params.set(BlockId::Kt, vec![0.1, 0.0, -0.1]);
        let eta = predict_eta_app(cfg, &params, 3, 3, 2).unwrap();
        for x in 0..3 {
            for t in 0..3 {
                let d = eta[(x * 3 + t) * 2] - eta[(x * 3 + t) * 2 + 1];
                assert_relative_eq!(d, 0.8, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn eta_matches_cellwise_hand_evaluation() {
        // (1,2,2) on a 3x3x2 grid with hand-set blocks.
        let cfg = AppConfig::new(1, 2, 2).unwrap();
        let x_n = 3;
        let t_n = 3;
        let p_n = 2;
        let a_x = [-4.0, -3.6, -3.1];
        let b_x = [0.3, -0.1, -0.2];
        let c2 = [1.5, 0.5];
        let k_t = [0.2, -0.05, -0.15];
        let k2_t = [0.1, -0.04, -0.06];
        let c3 = [1.0, -1.0];
        let gamma = [0.0, 0.02, -0.03, 0.05, 0.0];
        let mut params = Params::new();
        params.set(BlockId::Ax, a_x.to_vec());
        params.set(BlockId::Bx, b_x.to_vec());
        params.set(BlockId::C2, c2.to_vec());
        params.set(BlockId::Kt, k_t.to_vec());
        params.set(BlockId::K2t, k2_t.to_vec());
        params.set(BlockId::C3, c3.to_vec());
        params.set(BlockId::Gamma, gamma.to_vec());
        let eta = predict_eta_app(cfg, &params, x_n, t_n, p_n).unwrap();
        for x in 0..x_n {
            for t in 0..t_n {
                for p in 0..p_n {
                    let tdev = t as f64 - 1.0;
                    let expected = a_x[x]
                        + b_x[x] * c2[p] * tdev
                        + k_t[t]
                        + k2_t[t] * c3[p]
                        + gamma[t + 2 - x];
                    assert_relative_eq!(eta[(x * t_n + t) * p_n + p], expected, epsilon = 1e-13);
                }
            }
        }
    }
}

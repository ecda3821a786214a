//! Sweep and jump catalog for the age-period-product family.
//!
//! Indicator kernel: `delta1` walks the chain `1 <-> 2 <-> 3` (from 2 it
//! proposes 1 or 3 with probability one half each); `delta2` and `delta3`
//! toggle. Every jump adds or removes product-varying coordinates with a
//! deterministic reverse: product offsets (`c1`), the full age-product table
//! through its nested parametrization, trend scalings (`c2`), and the extra
//! period term (`k2`, `c3`) drawn jointly from its bilinear conditional.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use crate::app::{
    block_len_app, expand_a_nested, extract_a_nested, layout_app, max_constraint_residual_app,
    model_dimension_app, predict_eta_app, AppConfig,
};
use crate::constraint::BlockLayout;
use crate::dataset::{cohort_index, year_dev, AppDataset};
use crate::error::Result;
use crate::laplace::{GaussianProposal, Objective};
use crate::likelihood::{log_likelihood, log_likelihood_unchecked};
use crate::params::{BlockId, Params};
use crate::prior::ParamPrior;

use super::objective::{AffineObjective, BilinearObjective, CellTouch};
use super::{
    accept_log, independence_mh, jump_log_ratio, laplace_proposal, ChainState, Diagnostics,
    Framework, JumpPieces, MhOutcome, MoveKind, MovePlan, SamplerOptions,
};

pub struct AppFramework<'d> {
    data: &'d AppDataset,
    /// log |det| of the linear bijection between the nested level coordinates
    /// `(a_x, c1 free, ctilde free)` and the raw `a_xp` table.
    log_det_nested: f64,
}

impl<'d> AppFramework<'d> {
    pub fn new(data: &'d AppDataset) -> Self {
        let log_det_nested = nested_log_det(data.n_ages(), data.n_products());
        Self { data, log_det_nested }
    }

    pub fn dataset(&self) -> &AppDataset {
        self.data
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.data.n_ages(), self.data.n_years(), self.data.n_products())
    }

    fn ll(&self, config: AppConfig, params: &Params) -> f64 {
        let (x_n, t_n, p_n) = self.dims();
        let eta = predict_eta_app(config, params, x_n, t_n, p_n).expect("blocks present");
        log_likelihood_unchecked(&self.data.deaths, &self.data.exposures, &eta)
    }

    fn layout(&self, config: AppConfig, block: BlockId) -> BlockLayout {
        let (x_n, t_n, p_n) = self.dims();
        layout_app(config, block, x_n, t_n, p_n)
    }

    fn single_objective(
        &self,
        config: AppConfig,
        params: &Params,
        block: BlockId,
        prior: ParamPrior,
    ) -> AffineObjective<'d> {
        let (x_n, t_n, p_n) = self.dims();
        let mut zeroed = params.clone();
        zeroed.set(block, vec![0.0; block_len_app(block, x_n, t_n, p_n)]);
        let eta0 = predict_eta_app(config, &zeroed, x_n, t_n, p_n).expect("blocks present");

        let mut touch = Vec::with_capacity(x_n * t_n * p_n);
        let c2 = if config.delta2 == 2 && block != BlockId::C2 {
            Some(params.get(BlockId::C2).expect("c2 present").to_vec())
        } else {
            None
        };
        for x in 0..x_n {
            for t in 0..t_n {
                let tdev = year_dev(t, t_n);
                for p in 0..p_n {
                    let touch_cell = match block {
                        BlockId::Ax => CellTouch::one(x, 1.0),
                        BlockId::C1 => CellTouch::one(p, 1.0),
                        BlockId::Axp => CellTouch::one(x * p_n + p, 1.0),
                        BlockId::Bx => {
                            let load = c2.as_ref().map_or(1.0, |c2| c2[p]);
                            CellTouch::one(x, load * tdev)
                        }
                        BlockId::C2 => {
                            let b_x = params.get(BlockId::Bx).expect("b_x present");
                            CellTouch::one(p, b_x[x] * tdev)
                        }
                        BlockId::Kt => CellTouch::one(t, 1.0),
                        BlockId::K2t => {
                            let c3 = params.get(BlockId::C3).expect("c3 present");
                            CellTouch::one(t, c3[p])
                        }
                        BlockId::C3 => {
                            let k2 = params.get(BlockId::K2t).expect("k2 present");
                            CellTouch::one(p, k2[t])
                        }
                        BlockId::Gamma => CellTouch::one(cohort_index(x, t, x_n), 1.0),
                        _ => unreachable!("not an age-period-product block"),
                    };
                    touch.push(touch_cell);
                }
            }
        }
        AffineObjective::new(
            &self.data.deaths,
            &self.data.exposures,
            eta0,
            touch,
            vec![self.layout(config, block)],
            prior,
        )
    }

    /// Conditional of the nested level residual table, given `(a_x, c1)`.
    /// The level is rebuilt as `a_x + c1_p + ctilde_xp` per evaluation.
    fn nested_residual_objective(
        &self,
        config3: AppConfig,
        shared: &Params,
        a_x: &[f64],
        c1: &[f64],
        prior: ParamPrior,
    ) -> AffineObjective<'d> {
        let (x_n, t_n, p_n) = self.dims();
        let mut zeroed = shared.clone();
        zeroed.set(BlockId::Axp, expand_a_nested(a_x, c1, &vec![0.0; (x_n - 1) * (p_n - 1)]));
        let eta0 = predict_eta_app(config3, &zeroed, x_n, t_n, p_n).expect("blocks present");
        let mut touch = Vec::with_capacity(x_n * t_n * p_n);
        for x in 0..x_n {
            for _t in 0..t_n {
                for p in 0..p_n {
                    touch.push(CellTouch::one(x * p_n + p, 1.0));
                }
            }
        }
        AffineObjective::new(
            &self.data.deaths,
            &self.data.exposures,
            eta0,
            touch,
            vec![BlockLayout::doubly_centered(BlockId::Axp, x_n, p_n)],
            prior,
        )
    }

    /// Joint conditional of the extra period term and its product loadings:
    /// `eta = eta0 + k2_t c3_p` (bilinear).
    fn period_product_objective(
        &self,
        config2: AppConfig,
        shared: &Params,
        prior: ParamPrior,
    ) -> BilinearObjective<'d> {
        debug_assert_eq!(config2.delta3, 2);
        let (x_n, t_n, p_n) = self.dims();
        let mut zeroed = shared.clone();
        zeroed.set(BlockId::K2t, vec![0.0; t_n]);
        if !zeroed.contains(BlockId::C3) {
            zeroed.set(BlockId::C3, vec![0.0; p_n]);
        }
        let eta0 = predict_eta_app(config2, &zeroed, x_n, t_n, p_n).expect("blocks present");
        let mut cells = Vec::with_capacity(x_n * t_n * p_n);
        for _x in 0..x_n {
            for t in 0..t_n {
                for p in 0..p_n {
                    cells.push((t as u32, p as u32, 0.0, 1.0));
                }
            }
        }
        BilinearObjective::new(
            &self.data.deaths,
            &self.data.exposures,
            eta0,
            cells,
            self.layout(config2, BlockId::K2t),
            self.layout(config2, BlockId::C3),
            prior,
        )
    }

    /// Laplace of the (extra period, loadings) joint: affine pre-solve of
    /// `k2` at the neutral loadings, then the bilinear joint.
    fn period_product_proposal(
        &self,
        config2: AppConfig,
        shared: &Params,
        opts: &SamplerOptions,
    ) -> Option<(BilinearObjective<'d>, GaussianProposal)> {
        let (_, t_n, _) = self.dims();
        let c3_layout = self.layout(config2, BlockId::C3);
        let neutral_c3 = c3_layout.embed(&vec![0.0; c3_layout.free_dim()]);
        let mut pre_params = shared.clone();
        pre_params.set(BlockId::K2t, vec![0.0; t_n]);
        pre_params.set(BlockId::C3, neutral_c3);
        let pre = self.single_objective(config2, &pre_params, BlockId::K2t, opts.param_prior);
        let pre_result =
            crate::laplace::laplace_approximate(&pre, &vec![0.0; pre.dim()], &opts.newton);
        if !pre_result.converged {
            return None;
        }
        let objective = self.period_product_objective(config2, shared, opts.param_prior);
        let mut init = pre_result.mode;
        init.extend(std::iter::repeat(0.0).take(c3_layout.free_dim()));
        let proposal = laplace_proposal(&objective, &init, &opts.newton)?;
        Some((objective, proposal))
    }

    fn block_free(&self, config: AppConfig, params: &Params, block: BlockId) -> Vec<f64> {
        self.layout(config, block).extract(params.get(block).expect("block present"))
    }

    fn mh_block(
        &self,
        state: &mut ChainState<AppConfig>,
        block: BlockId,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        diag.entry(block_update_name(block)).proposed += 1;
        let objective = self.single_objective(state.config, &state.params, block, opts.param_prior);
        let current = self.block_free(state.config, &state.params, block);
        match independence_mh(&objective, &current, &opts.newton, rng) {
            MhOutcome::Accepted { free } => {
                self.layout(state.config, block).install(&mut state.params, &free);
                state.log_lik = self.ll(state.config, &state.params);
                diag.entry(block_update_name(block)).accepted += 1;
            }
            MhOutcome::Rejected => {}
            MhOutcome::LaplaceFailed => {
                diag.entry(block_update_name(block)).laplace_failures += 1;
            }
        }
    }

    fn apply_jump(
        &self,
        state: &mut ChainState<AppConfig>,
        name: &'static str,
        attempt: JumpAttempt,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        diag.entry(name).proposed += 1;
        match attempt {
            JumpAttempt::Proposal { to, params, pieces } => {
                let log_prior_cur =
                    self.log_param_prior(state.config, &state.params, &opts.param_prior);
                let log_model_cur = opts.model_prior.log_weight(self.dimension(state.config));
                let log_ratio = jump_log_ratio(state.log_lik, log_prior_cur, log_model_cur, &pieces);
                if accept_log(log_ratio, rng) {
                    state.config = to;
                    state.params = params;
                    state.log_lik = pieces.log_lik_new;
                    diag.entry(name).accepted += 1;
                }
            }
            JumpAttempt::LaplaceFailed => {
                diag.entry(name).laplace_failures += 1;
            }
        }
    }

    // --- jump constructions -------------------------------------------------

    /// `delta1: 1 -> 2`, adding product offsets to the level.
    fn jump_add_product_level(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let to = AppConfig { delta1: 2, ..state.config };
        let objective = self.single_objective(to, &state.params, BlockId::C1, opts.param_prior);
        let layout = self.layout(to, BlockId::C1);
        let Some(fwd) = laplace_proposal(&objective, &vec![0.0; layout.free_dim()], &opts.newton)
        else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let mut new_params = state.params.clone();
        layout.install(&mut new_params, &u);
        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.5f64.ln(),
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: 0.0,
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_drop_product_level(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = AppConfig { delta1: 1, ..cfg };
        let mut new_params = state.params.clone();
        new_params.remove(BlockId::C1);

        let rev_objective = self.single_objective(cfg, &state.params, BlockId::C1, opts.param_prior);
        let current = self.block_free(cfg, &state.params, BlockId::C1);
        let Some(rev) = laplace_proposal(&rev_objective, &current, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };
        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.5f64.ln(),
            log_kernel_rev: 0.0,
            log_q_fwd: 0.0,
            log_q_rev: rev.log_density(&current),
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    /// `delta1: 2 -> 3`: the level becomes a full age-product table,
    /// built from the current level plus a drawn doubly-centered residual.
    fn jump_add_product_age_table(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = AppConfig { delta1: 3, ..cfg };
        let a_x = state.params.get(BlockId::Ax).expect("a_x present").to_vec();
        let c1 = state.params.get(BlockId::C1).expect("c1 present").to_vec();
        let mut shared = state.params.clone();
        shared.remove(BlockId::Ax);
        shared.remove(BlockId::C1);

        let objective =
            self.nested_residual_objective(to, &shared, &a_x, &c1, opts.param_prior);
        let Some(fwd) = laplace_proposal(&objective, &vec![0.0; objective.dim()], &opts.newton)
        else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let mut new_params = shared;
        new_params.set(BlockId::Axp, expand_a_nested(&a_x, &c1, &u));

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.5f64.ln(),
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: 0.0,
            log_jacobian: self.log_det_nested,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    /// `delta1: 3 -> 2`: deterministic decomposition of the table into level,
    /// offsets, and the discarded residual.
    fn jump_drop_product_age_table(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = AppConfig { delta1: 2, ..cfg };
        let (x_n, _, p_n) = self.dims();
        let a_xp = state.params.get(BlockId::Axp).expect("table present");
        let (a_x, c1_raw, ctilde_free) = extract_a_nested(a_xp, x_n, p_n);
        let c1_layout = self.layout(to, BlockId::C1);
        let c1 = c1_layout.embed(&c1_layout.extract(&c1_raw));

        let mut new_params = state.params.clone();
        new_params.remove(BlockId::Axp);
        new_params.set(BlockId::Ax, a_x.clone());
        new_params.set(BlockId::C1, c1.clone());

        let mut shared = state.params.clone();
        shared.remove(BlockId::Axp);
        let rev_objective =
            self.nested_residual_objective(cfg, &shared, &a_x, &c1, opts.param_prior);
        let Some(rev) = laplace_proposal(&rev_objective, &ctilde_free, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.5f64.ln(),
            log_q_fwd: 0.0,
            log_q_rev: rev.log_density(&ctilde_free),
            log_jacobian: -self.log_det_nested,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_add_trend_scale(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let to = AppConfig { delta2: 2, ..state.config };
        let layout = self.layout(to, BlockId::C2);
        // The nested value is c2 = 1 everywhere (sum P), which is the
        // embedding of all-ones free coordinates.
        let mut base = state.params.clone();
        base.set(BlockId::C2, layout.embed(&vec![1.0; layout.free_dim()]));
        let objective = self.single_objective(to, &base, BlockId::C2, opts.param_prior);
        let Some(fwd) = laplace_proposal(&objective, &vec![1.0; layout.free_dim()], &opts.newton)
        else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let mut new_params = state.params.clone();
        layout.install(&mut new_params, &u);
        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: 0.0,
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_drop_trend_scale(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = AppConfig { delta2: 1, ..cfg };
        let mut new_params = state.params.clone();
        new_params.remove(BlockId::C2);

        let rev_objective = self.single_objective(cfg, &state.params, BlockId::C2, opts.param_prior);
        let current = self.block_free(cfg, &state.params, BlockId::C2);
        let Some(rev) = laplace_proposal(&rev_objective, &current, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };
        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.0,
            log_q_fwd: 0.0,
            log_q_rev: rev.log_density(&current),
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_add_product_period(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let to = AppConfig { delta3: 2, ..state.config };
        let Some((objective, fwd)) = self.period_product_proposal(to, &state.params, opts) else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let (k2_raw, c3_raw) = objective.embed(&u);
        let mut new_params = state.params.clone();
        new_params.set(BlockId::K2t, k2_raw);
        new_params.set(BlockId::C3, c3_raw);
        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: 0.0,
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_drop_product_period(
        &self,
        state: &ChainState<AppConfig>,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = AppConfig { delta3: 1, ..cfg };
        let mut new_params = state.params.clone();
        new_params.remove(BlockId::K2t);
        new_params.remove(BlockId::C3);

        let Some((objective, rev)) = self.period_product_proposal(cfg, &new_params, opts) else {
            return JumpAttempt::LaplaceFailed;
        };
        let k2 = state.params.get(BlockId::K2t).expect("k2 present");
        let c3 = state.params.get(BlockId::C3).expect("c3 present");
        let dropped = objective.pack(k2, c3);

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.0,
            log_q_fwd: 0.0,
            log_q_rev: rev.log_density(&dropped),
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn update_delta1(
        &self,
        state: &mut ChainState<AppConfig>,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        use rand::Rng as _;
        match state.config.delta1 {
            1 => {
                let attempt = self.jump_add_product_level(state, opts, rng);
                self.apply_jump(state, "add_product_level", attempt, opts, diag, rng);
            }
            2 => {
                if rng.random::<f64>() < 0.5 {
                    let attempt = self.jump_drop_product_level(state, opts);
                    self.apply_jump(state, "drop_product_level", attempt, opts, diag, rng);
                } else {
                    let attempt = self.jump_add_product_age_table(state, opts, rng);
                    self.apply_jump(state, "add_product_age_table", attempt, opts, diag, rng);
                }
            }
            _ => {
                let attempt = self.jump_drop_product_age_table(state, opts);
                self.apply_jump(state, "drop_product_age_table", attempt, opts, diag, rng);
            }
        }
    }
}

enum JumpAttempt {
    Proposal { to: AppConfig, params: Params, pieces: JumpPieces },
    LaplaceFailed,
}

/// log |det| of the map `(a_x, c1 free, ctilde free) -> a_xp`.
fn nested_log_det(x_n: usize, p_n: usize) -> f64 {
    let n = x_n * p_n;
    let mut m = DMatrix::zeros(n, n);
    let mut col = 0;
    for x in 0..x_n {
        for p in 0..p_n {
            m[(x * p_n + p, col)] = 1.0;
        }
        col += 1;
    }
    let c1_layout = BlockLayout::from_parts(BlockId::C1, p_n, Vec::new(), Some(0.0));
    for jac in c1_layout.jacobian_columns() {
        for (raw_p, sign) in jac {
            for x in 0..x_n {
                m[(x * p_n + raw_p, col)] = sign;
            }
        }
        col += 1;
    }
    let ct_layout = BlockLayout::doubly_centered(BlockId::Axp, x_n, p_n);
    for jac in ct_layout.jacobian_columns() {
        for (raw, sign) in jac {
            m[(raw, col)] = sign;
        }
        col += 1;
    }
    debug_assert_eq!(col, n);
    m.lu().determinant().abs().ln()
}

fn block_update_name(block: BlockId) -> &'static str {
    match block {
        BlockId::Ax => "update_a_x",
        BlockId::C1 => "update_c1",
        BlockId::Axp => "update_a_xp",
        BlockId::Bx => "update_b_x",
        BlockId::C2 => "update_c2",
        BlockId::Kt => "update_k",
        BlockId::K2t => "update_k2t",
        BlockId::C3 => "update_c3",
        BlockId::Gamma => "update_gamma",
        _ => "update_other",
    }
}

impl Framework for AppFramework<'_> {
    type Config = AppConfig;

    fn name(&self) -> &'static str {
        "app"
    }

    fn catalog(&self) -> Vec<AppConfig> {
        AppConfig::catalog()
    }

    fn dimension(&self, config: AppConfig) -> usize {
        let (x_n, t_n, p_n) = self.dims();
        model_dimension_app(config, x_n, t_n, p_n)
    }

    fn default_init_config(&self) -> AppConfig {
        AppConfig::new(1, 1, 1).expect("valid")
    }

    /// Crude starting values: per-age levels from pooled rates and the base
    /// period effect from centered per-year rates; product scalings start at
    /// their nested values and the remaining blocks at the
    /// constraint-respecting zero.
    fn initial_params(&self, config: AppConfig) -> Params {
        let (x_n, t_n, p_n) = self.dims();
        let crude: Vec<f64> = (0..x_n).map(|x| self.data.crude_level_by_age(x)).collect();
        let mut params = Params::new();
        match config.delta1 {
            1 | 2 => params.set(BlockId::Ax, crude),
            _ => {
                let mut a_xp = vec![0.0; x_n * p_n];
                for x in 0..x_n {
                    for p in 0..p_n {
                        a_xp[x * p_n + p] = crude[x];
                    }
                }
                params.set(BlockId::Axp, a_xp);
            }
        }
        let mut k_crude: Vec<f64> = (0..t_n)
            .map(|t| {
                let mut d = 0.0;
                let mut e = 0.0;
                for x in 0..x_n {
                    for p in 0..p_n {
                        d += self.data.deaths[self.data.idx(x, t, p)];
                        e += self.data.exposures[self.data.idx(x, t, p)];
                    }
                }
                ((d + 0.5) / (e + 1.0)).ln()
            })
            .collect();
        let k_mean = k_crude.iter().sum::<f64>() / t_n as f64;
        for v in &mut k_crude {
            *v -= k_mean;
        }
        let kt_layout = self.layout(config, BlockId::Kt);
        params.set(BlockId::Kt, kt_layout.embed(&kt_layout.extract(&k_crude)));
        for block in config.active_blocks() {
            if params.contains(block) {
                continue;
            }
            let layout = self.layout(config, block);
            let free = if block == BlockId::C2 {
                vec![1.0; layout.free_dim()]
            } else {
                vec![0.0; layout.free_dim()]
            };
            params.set(block, layout.embed(&free));
        }
        params
    }

    fn log_lik(&self, config: AppConfig, params: &Params) -> Result<f64> {
        let (x_n, t_n, p_n) = self.dims();
        let eta = predict_eta_app(config, params, x_n, t_n, p_n)?;
        log_likelihood(&self.data.deaths, &self.data.exposures, &eta)
    }

    fn log_param_prior(&self, config: AppConfig, params: &Params, prior: &ParamPrior) -> f64 {
        config
            .active_blocks()
            .into_iter()
            .map(|b| prior.log_density(&self.block_free(config, params, b)))
            .sum()
    }

    fn max_constraint_residual(&self, config: AppConfig, params: &Params) -> f64 {
        let (x_n, t_n, p_n) = self.dims();
        max_constraint_residual_app(config, params, x_n, t_n, p_n)
    }

    fn eta(&self, config: AppConfig, params: &Params) -> Result<Vec<f64>> {
        let (x_n, t_n, p_n) = self.dims();
        predict_eta_app(config, params, x_n, t_n, p_n)
    }

    fn move_plans(&self, from: AppConfig) -> Vec<MovePlan<AppConfig>> {
        let (x_n, t_n, p_n) = self.dims();
        let free = |cfg: AppConfig, b: BlockId| layout_app(cfg, b, x_n, t_n, p_n).free_dim();
        let mut plans = Vec::new();

        match from.delta1 {
            1 => {
                let to = AppConfig { delta1: 2, ..from };
                plans.push(MovePlan {
                    name: "add_product_level",
                    from,
                    to,
                    kind: MoveKind::Add,
                    delta_index: 1,
                    fwd_draw_dim: free(to, BlockId::C1),
                    rev_draw_dim: 0,
                    kernel_prob: 1.0,
                });
            }
            2 => {
                let to1 = AppConfig { delta1: 1, ..from };
                plans.push(MovePlan {
                    name: "drop_product_level",
                    from,
                    to: to1,
                    kind: MoveKind::Remove,
                    delta_index: 1,
                    fwd_draw_dim: 0,
                    rev_draw_dim: free(from, BlockId::C1),
                    kernel_prob: 0.5,
                });
                let to3 = AppConfig { delta1: 3, ..from };
                plans.push(MovePlan {
                    name: "add_product_age_table",
                    from,
                    to: to3,
                    kind: MoveKind::Add,
                    delta_index: 1,
                    fwd_draw_dim: (x_n - 1) * (p_n - 1),
                    rev_draw_dim: 0,
                    kernel_prob: 0.5,
                });
            }
            _ => {
                let to = AppConfig { delta1: 2, ..from };
                plans.push(MovePlan {
                    name: "drop_product_age_table",
                    from,
                    to,
                    kind: MoveKind::Remove,
                    delta_index: 1,
                    fwd_draw_dim: 0,
                    rev_draw_dim: (x_n - 1) * (p_n - 1),
                    kernel_prob: 1.0,
                });
            }
        }

        if from.delta2 == 1 {
            let to = AppConfig { delta2: 2, ..from };
            plans.push(MovePlan {
                name: "add_trend_scale",
                from,
                to,
                kind: MoveKind::Add,
                delta_index: 2,
                fwd_draw_dim: free(to, BlockId::C2),
                rev_draw_dim: 0,
                kernel_prob: 1.0,
            });
        } else {
            let to = AppConfig { delta2: 1, ..from };
            plans.push(MovePlan {
                name: "drop_trend_scale",
                from,
                to,
                kind: MoveKind::Remove,
                delta_index: 2,
                fwd_draw_dim: 0,
                rev_draw_dim: free(from, BlockId::C2),
                kernel_prob: 1.0,
            });
        }

        if from.delta3 == 1 {
            let to = AppConfig { delta3: 2, ..from };
            plans.push(MovePlan {
                name: "add_product_period",
                from,
                to,
                kind: MoveKind::Add,
                delta_index: 3,
                fwd_draw_dim: free(to, BlockId::K2t) + free(to, BlockId::C3),
                rev_draw_dim: 0,
                kernel_prob: 1.0,
            });
        } else {
            let to = AppConfig { delta3: 1, ..from };
            plans.push(MovePlan {
                name: "drop_product_period",
                from,
                to,
                kind: MoveKind::Remove,
                delta_index: 3,
                fwd_draw_dim: 0,
                rev_draw_dim: free(from, BlockId::K2t) + free(from, BlockId::C3),
                kernel_prob: 1.0,
            });
        }
        plans
    }

    fn sweep(
        &self,
        state: &mut ChainState<AppConfig>,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        use rand::Rng as _;
        // Indicator updates are lazy (attempted with probability one half) so
        // that always-accepted toggles cannot make the chain periodic; the
        // laziness factor cancels from every acceptance ratio.

        // Level blocks, then the level indicator.
        match state.config.delta1 {
            1 => self.mh_block(state, BlockId::Ax, opts, diag, rng),
            2 => {
                self.mh_block(state, BlockId::Ax, opts, diag, rng);
                self.mh_block(state, BlockId::C1, opts, diag, rng);
            }
            _ => self.mh_block(state, BlockId::Axp, opts, diag, rng),
        }
        if rng.random::<f64>() < 0.5 {
            self.update_delta1(state, opts, diag, rng);
        }

        // Trend blocks, then the trend indicator.
        self.mh_block(state, BlockId::Bx, opts, diag, rng);
        if state.config.delta2 == 2 {
            self.mh_block(state, BlockId::C2, opts, diag, rng);
        }
        if rng.random::<f64>() < 0.5 {
            if state.config.delta2 == 1 {
                let attempt = self.jump_add_trend_scale(state, opts, rng);
                self.apply_jump(state, "add_trend_scale", attempt, opts, diag, rng);
            } else {
                let attempt = self.jump_drop_trend_scale(state, opts);
                self.apply_jump(state, "drop_trend_scale", attempt, opts, diag, rng);
            }
        }

        // Period blocks, then the period indicator.
        self.mh_block(state, BlockId::Kt, opts, diag, rng);
        if state.config.delta3 == 2 {
            self.mh_block(state, BlockId::K2t, opts, diag, rng);
            self.mh_block(state, BlockId::C3, opts, diag, rng);
        }
        if rng.random::<f64>() < 0.5 {
            if state.config.delta3 == 1 {
                let attempt = self.jump_add_product_period(state, opts, rng);
                self.apply_jump(state, "add_product_period", attempt, opts, diag, rng);
            } else {
                let attempt = self.jump_drop_product_period(state, opts);
                self.apply_jump(state, "drop_product_period", attempt, opts, diag, rng);
            }
        }

        // Cohort block (always present in this family).
        self.mh_block(state, BlockId::Gamma, opts, diag, rng);
    }
}

//! Sweep and jump catalog for the age-period family.
//!
//! Indicator kernel: `delta1`, `delta3`, `delta4` toggle; `delta2` proposes
//! `1 -> (2, delta3 = 1)`, `2 -> 1` or `2 -> 3` with probability one half
//! each, and `3 -> 2`. The `2 -> 1` proposal from a model with a per-age
//! modulation profile has no reverse path under this kernel, so it is always
//! rejected; it is still counted as a proposal.
//!
//! The split/merge between the modulated-only and additive-plus-modulated
//! period effects is a swap: the forward move draws the additive pair
//! jointly, the reverse draws the base period and its slope jointly from the
//! bilinear conditional. When the modulation is a per-age profile, the swap
//! passes through the scale bridge and the acceptance ratio carries the
//! bridge's volume change `|b_1|^-(X-2)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ap::{
    accumulate_eta_ap, block_len_ap, bridge_reparam, layout_ap, max_constraint_residual_ap,
    model_dimension_ap, predict_eta_ap, ApConfig,
};
use crate::constraint::BlockLayout;
use crate::dataset::{age_dev, cohort_index, ApDataset};
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

pub struct ApFramework<'d> {
    data: &'d ApDataset,
}

impl<'d> ApFramework<'d> {
    pub fn new(data: &'d ApDataset) -> Self {
        Self { data }
    }

    pub fn dataset(&self) -> &ApDataset {
        self.data
    }

    fn dims(&self) -> (usize, usize) {
        (self.data.n_ages(), self.data.n_years())
    }

    fn ll(&self, config: ApConfig, params: &Params) -> f64 {
        let (x_n, t_n) = self.dims();
        let mut eta = vec![0.0; x_n * t_n];
        accumulate_eta_ap(config, params, x_n, t_n, &mut eta).expect("active blocks present");
        log_likelihood_unchecked(&self.data.deaths, &self.data.exposures, &eta)
    }

    fn layout(&self, config: ApConfig, block: BlockId) -> BlockLayout {
        let (x_n, t_n) = self.dims();
        layout_ap(config, block, x_n, t_n)
    }

    /// Age-profile loading of the modulated period effect under `config`.
    fn modulation(&self, config: ApConfig, params: &Params) -> Vec<f64> {
        let (x_n, _) = self.dims();
        match (config.delta2, config.delta3) {
            (2, 1) => {
                let bbar = params.get(BlockId::Bbar).map(|b| b[0]).unwrap_or(0.0);
                (0..x_n).map(|x| bbar * age_dev(x, x_n)).collect()
            }
            (3, 1) => (0..x_n).map(|x| age_dev(x, x_n)).collect(),
            (_, 2) => params.get(BlockId::Bx).expect("profile block").to_vec(),
            _ => vec![0.0; x_n],
        }
    }

    /// Conditional objective of a single block, all other blocks fixed.
    fn single_objective(
        &self,
        config: ApConfig,
        params: &Params,
        block: BlockId,
        prior: ParamPrior,
    ) -> AffineObjective<'d> {
        let (x_n, t_n) = self.dims();
        let mut zeroed = params.clone();
        zeroed.set(block, vec![0.0; block_len_ap(block, x_n, t_n)]);
        let eta0 = predict_eta_ap(config, &zeroed, x_n, t_n).expect("blocks present");

        let mut touch = Vec::with_capacity(x_n * t_n);
        match block {
            BlockId::Ax => {
                for x in 0..x_n {
                    for _t in 0..t_n {
                        touch.push(CellTouch::one(x, 1.0));
                    }
                }
            }
            BlockId::LevelAb => {
                for x in 0..x_n {
                    let dev = age_dev(x, x_n);
                    for _t in 0..t_n {
                        touch.push(CellTouch::two(0, 1.0, 1, dev));
                    }
                }
            }
            BlockId::K1 => {
                for _x in 0..x_n {
                    for t in 0..t_n {
                        touch.push(CellTouch::one(t, 1.0));
                    }
                }
            }
            BlockId::K2 => {
                let phi = self.modulation(config, params);
                for x in 0..x_n {
                    let load = if config.delta2 == 2 { 1.0 + phi[x] } else { phi[x] };
                    for t in 0..t_n {
                        let _ = t;
                        touch.push(CellTouch::one(t, load));
                    }
                }
            }
            BlockId::Bbar => {
                let k2 = params.get(BlockId::K2).expect("k2 present");
                for x in 0..x_n {
                    let dev = age_dev(x, x_n);
                    for t in 0..t_n {
                        touch.push(CellTouch::one(0, k2[t] * dev));
                    }
                }
            }
            BlockId::Bx => {
                let k2 = params.get(BlockId::K2).expect("k2 present");
                for x in 0..x_n {
                    for t in 0..t_n {
                        touch.push(CellTouch::one(x, k2[t]));
                    }
                }
            }
            BlockId::Gamma => {
                for x in 0..x_n {
                    for t in 0..t_n {
                        touch.push(CellTouch::one(cohort_index(x, t, x_n), 1.0));
                    }
                }
            }
            _ => unreachable!("not an age-period block"),
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

    /// Joint conditional of the additive and modulated period effects under a
    /// `delta2 = 3` configuration (affine in both).
    fn period_pair_objective(
        &self,
        config: ApConfig,
        params: &Params,
        prior: ParamPrior,
    ) -> AffineObjective<'d> {
        debug_assert_eq!(config.delta2, 3);
        let (x_n, t_n) = self.dims();
        let mut zeroed = params.clone();
        zeroed.set(BlockId::K1, vec![0.0; t_n]);
        zeroed.set(BlockId::K2, vec![0.0; t_n]);
        let eta0 = predict_eta_ap(config, &zeroed, x_n, t_n).expect("blocks present");
        let phi = self.modulation(config, params);
        let mut touch = Vec::with_capacity(x_n * t_n);
        for x in 0..x_n {
            for t in 0..t_n {
                touch.push(CellTouch::two(t, 1.0, t_n + t, phi[x]));
            }
        }
        AffineObjective::new(
            &self.data.deaths,
            &self.data.exposures,
            eta0,
            touch,
            vec![self.layout(config, BlockId::K1), self.layout(config, BlockId::K2)],
            prior,
        )
    }

    /// Joint conditional of the base period effect and its scalar slope in a
    /// `delta2 = 2` configuration: `eta = eta0 + k_t (1 + bbar phi_x)`, with
    /// the profile `phi` held fixed. Bilinear, so optimized jointly after an
    /// affine pre-solve of the period effect at slope zero.
    fn period_scale_objective(
        &self,
        config2: ApConfig,
        shared: &Params,
        phi: &[f64],
        prior: ParamPrior,
    ) -> BilinearObjective<'d> {
        debug_assert_eq!(config2.delta2, 2);
        let (x_n, t_n) = self.dims();
        let mut zeroed = shared.clone();
        zeroed.set(BlockId::K2, vec![0.0; t_n]);
        if config2.delta3 == 1 {
            zeroed.set(BlockId::Bbar, vec![0.0]);
        } else {
            zeroed.set(BlockId::Bx, phi.to_vec());
        }
        let eta0 = predict_eta_ap(config2, &zeroed, x_n, t_n).expect("blocks present");
        let mut cells = Vec::with_capacity(x_n * t_n);
        for x in 0..x_n {
            for t in 0..t_n {
                cells.push((t as u32, 0u32, 1.0, phi[x]));
            }
        }
        BilinearObjective::new(
            &self.data.deaths,
            &self.data.exposures,
            eta0,
            cells,
            self.layout(config2, BlockId::K2),
            BlockLayout::unconstrained(BlockId::Bbar, 1),
            prior,
        )
    }

    /// Laplace of the (period, slope) joint conditional: affine pre-solve of
    /// the period block at slope zero, then the bilinear joint. The pre-solve
    /// makes the optimization start deterministic regardless of caller state.
    fn period_scale_proposal(
        &self,
        config2: ApConfig,
        shared: &Params,
        phi: &[f64],
        opts: &SamplerOptions,
    ) -> Option<(BilinearObjective<'d>, GaussianProposal)> {
        let (x_n, t_n) = self.dims();
        let mut pre_params = shared.clone();
        pre_params.set(BlockId::K2, vec![0.0; t_n]);
        if config2.delta3 == 1 {
            pre_params.set(BlockId::Bbar, vec![0.0]);
        } else {
            pre_params.set(BlockId::Bx, phi.to_vec());
        }
        let eta0 = predict_eta_ap(config2, &pre_params, x_n, t_n).expect("blocks present");
        // At slope zero the modulated effect loads every age equally.
        let pre_touch: Vec<CellTouch> = (0..x_n)
            .flat_map(|_x| (0..t_n).map(|t| CellTouch::one(t, 1.0)))
            .collect();
        let pre = AffineObjective::new(
            &self.data.deaths,
            &self.data.exposures,
            eta0,
            pre_touch,
            vec![self.layout(config2, BlockId::K2)],
            opts.param_prior,
        );
        let k_dim = pre.dim();
        let pre_result = crate::laplace::laplace_approximate(&pre, &vec![0.0; k_dim], &opts.newton);
        if !pre_result.converged {
            return None;
        }
        let objective = self.period_scale_objective(config2, shared, phi, opts.param_prior);
        let mut init = pre_result.mode;
        init.push(0.0);
        let proposal = laplace_proposal(&objective, &init, &opts.newton)?;
        Some((objective, proposal))
    }

    fn block_free(&self, config: ApConfig, params: &Params, block: BlockId) -> Vec<f64> {
        self.layout(config, block).extract(params.get(block).expect("block present"))
    }

    fn mh_block(
        &self,
        state: &mut ChainState<ApConfig>,
        block: BlockId,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        let stats = diag.entry(block_update_name(block));
        stats.proposed += 1;
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
        state: &mut ChainState<ApConfig>,
        name: &'static str,
        attempt: JumpAttempt,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        let stats = diag.entry(name);
        stats.proposed += 1;
        match attempt {
            JumpAttempt::Proposal { to, params, pieces } => {
                let log_prior_cur =
                    self.log_param_prior(state.config, &state.params, &opts.param_prior);
                let log_model_cur =
                    opts.model_prior.log_weight(self.dimension(state.config));
                let log_ratio =
                    jump_log_ratio(state.log_lik, log_prior_cur, log_model_cur, &pieces);
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
            JumpAttempt::Blocked => {}
        }
    }

    // --- jump constructions -------------------------------------------------

    fn jump_level_swap(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = ApConfig { delta1: 3 - cfg.delta1, ..cfg };
        let (old_block, new_block) = if cfg.delta1 == 1 {
            (BlockId::Ax, BlockId::LevelAb)
        } else {
            (BlockId::LevelAb, BlockId::Ax)
        };
        let (x_n, _) = self.dims();

        let mut base = state.params.clone();
        base.remove(old_block);

        let fwd_objective = self.single_objective(to, &base, new_block, opts.param_prior);
        let init = match new_block {
            BlockId::Ax => {
                let ab = state.params.get(BlockId::LevelAb).expect("level block");
                (0..x_n).map(|x| ab[0] + ab[1] * age_dev(x, x_n)).collect::<Vec<_>>()
            }
            _ => {
                let a_x = state.params.get(BlockId::Ax).expect("level block");
                vec![mean(a_x), slope_on_age(a_x)]
            }
        };
        let Some(fwd) = laplace_proposal(&fwd_objective, &init, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let mut new_params = base.clone();
        self.layout(to, new_block).install(&mut new_params, &u);

        let rev_objective = self.single_objective(cfg, &state.params, old_block, opts.param_prior);
        let current_old = self.block_free(cfg, &state.params, old_block);
        let Some(rev) = laplace_proposal(&rev_objective, &current_old, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: rev.log_density(&current_old),
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_add_age_modulation(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = ApConfig { delta2: 2, delta3: 1, ..cfg };
        let k1 = state.params.get(BlockId::K1).expect("k1 present").to_vec();
        let mut base = state.params.clone();
        base.remove(BlockId::K1);
        base.set(BlockId::K2, k1);
        base.set(BlockId::Bbar, vec![0.0]);

        let objective = self.single_objective(to, &base, BlockId::Bbar, opts.param_prior);
        let Some(fwd) = laplace_proposal(&objective, &[0.0], &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let mut new_params = base;
        new_params.set(BlockId::Bbar, u.clone());

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

    fn jump_drop_age_modulation(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        debug_assert!(cfg.delta2 == 2 && cfg.delta3 == 1);
        let to = ApConfig { delta2: 1, delta3: 1, ..cfg };
        let k2 = state.params.get(BlockId::K2).expect("k2 present").to_vec();
        let mut new_params = state.params.clone();
        new_params.remove(BlockId::K2);
        new_params.remove(BlockId::Bbar);
        new_params.set(BlockId::K1, k2);

        let rev_objective = self.single_objective(cfg, &state.params, BlockId::Bbar, opts.param_prior);
        let current_bbar = self.block_free(cfg, &state.params, BlockId::Bbar);
        let Some(rev) = laplace_proposal(&rev_objective, &current_bbar, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.5f64.ln(),
            log_kernel_rev: 0.0,
            log_q_fwd: 0.0,
            log_q_rev: rev.log_density(&current_bbar),
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    /// `delta2: 2 -> 3`. The modulated period effect splits into an additive
    /// plus a modulated term; the pair is drawn jointly, the base period and
    /// slope are discarded. With a per-age profile, coordinates pass through
    /// the scale bridge.
    fn jump_split_period(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = ApConfig { delta2: 3, ..cfg };
        let (x_n, t_n) = self.dims();
        let current_k_free = self.block_free(cfg, &state.params, BlockId::K2);

        let (shared_to, phi, dropped_scale, log_jacobian) = if cfg.delta3 == 1 {
            let mut shared = state.params.clone();
            shared.remove(BlockId::K2);
            shared.remove(BlockId::Bbar);
            let bbar = state.params.get(BlockId::Bbar).expect("slope present")[0];
            (shared, (0..x_n).map(|x| age_dev(x, x_n)).collect::<Vec<_>>(), bbar, 0.0)
        } else {
            let b_x = state.params.get(BlockId::Bx).expect("profile present");
            let k2 = state.params.get(BlockId::K2).expect("k2 present");
            let Ok(bridge) = bridge_reparam(k2, b_x) else {
                return JumpAttempt::Blocked;
            };
            let btilde = reembed(&self.layout(to, BlockId::Bx), &bridge.btilde);
            let mut shared = state.params.clone();
            shared.remove(BlockId::K2);
            shared.set(BlockId::Bx, btilde.clone());
            let log_jac = -((x_n as f64 - 2.0) * b_x[0].abs().ln());
            (shared, btilde, bridge.bbar, log_jac)
        };

        // Forward: joint draw of the additive pair in the target model.
        let pair_base = {
            let mut p = shared_to.clone();
            p.set(BlockId::K1, vec![0.0; t_n]);
            p.set(BlockId::K2, vec![0.0; t_n]);
            p
        };
        let fwd_objective = self.period_pair_objective(to, &pair_base, opts.param_prior);
        let mut init = current_k_free.clone();
        init.extend(std::iter::repeat(0.0).take(self.layout(to, BlockId::K2).free_dim()));
        let Some(fwd) = laplace_proposal(&fwd_objective, &init, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let raw = fwd_objective.embed(&u);
        let mut new_params = shared_to.clone();
        new_params.set(BlockId::K1, raw[..t_n].to_vec());
        new_params.set(BlockId::K2, raw[t_n..].to_vec());

        // Reverse: the merge move would draw (base period, slope) jointly.
        let Some((rev_objective, rev)) = self.period_scale_proposal(cfg, &shared_to, &phi, opts)
        else {
            return JumpAttempt::LaplaceFailed;
        };
        let mut dropped = current_k_free;
        dropped.push(dropped_scale);
        let log_q_rev = rev.log_density(&dropped);
        let _ = rev_objective;

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.5f64.ln(),
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev,
            log_jacobian,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    /// `delta2: 3 -> 2`, the reverse of [`Self::jump_split_period`].
    fn jump_merge_period(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to = ApConfig { delta2: 2, ..cfg };
        let (x_n, _) = self.dims();

        let (shared, phi) = if cfg.delta3 == 1 {
            let mut shared = state.params.clone();
            shared.remove(BlockId::K1);
            shared.remove(BlockId::K2);
            (shared, (0..x_n).map(|x| age_dev(x, x_n)).collect::<Vec<_>>())
        } else {
            let btilde = state.params.get(BlockId::Bx).expect("profile present").to_vec();
            let mut shared = state.params.clone();
            shared.remove(BlockId::K1);
            shared.remove(BlockId::K2);
            shared.remove(BlockId::Bx);
            (shared, btilde)
        };

        let Some((fwd_objective, fwd)) = self.period_scale_proposal(to, &shared, &phi, opts) else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let (k_raw, scale_raw) = fwd_objective.embed(&u);
        let bbar_new = scale_raw[0];

        let mut new_params = shared.clone();
        new_params.set(BlockId::K2, k_raw);
        let log_jacobian = if cfg.delta3 == 1 {
            new_params.set(BlockId::Bbar, vec![bbar_new]);
            0.0
        } else {
            let b_x_new: Vec<f64> = phi.iter().map(|&b| b * bbar_new).collect();
            new_params.set(BlockId::Bx, reembed(&self.layout(to, BlockId::Bx), &b_x_new));
            (x_n as f64 - 2.0) * bbar_new.abs().ln()
        };

        // Reverse: the split move would draw the additive pair jointly.
        let pair_base = {
            let mut p = state.params.clone();
            if cfg.delta3 == 2 {
                p.set(BlockId::Bx, phi.clone());
            }
            p
        };
        let rev_objective = self.period_pair_objective(cfg, &pair_base, opts.param_prior);
        let dropped = {
            let k1 = state.params.get(BlockId::K1).expect("k1 present");
            let k2 = state.params.get(BlockId::K2).expect("k2 present");
            rev_objective.extract(&[k1, k2])
        };
        let Some(rev) = laplace_proposal(&rev_objective, &dropped, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.5f64.ln(),
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: rev.log_density(&dropped),
            log_jacobian,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    /// `delta3` swap under `delta2 = 2`: scalar slope versus per-age profile.
    fn jump_modulation_swap(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        let to_profile = cfg.delta3 == 1;
        let to = ApConfig { delta3: if to_profile { 2 } else { 1 }, ..cfg };
        let (old_block, new_block) =
            if to_profile { (BlockId::Bbar, BlockId::Bx) } else { (BlockId::Bx, BlockId::Bbar) };
        let (x_n, _) = self.dims();

        let mut base = state.params.clone();
        base.remove(old_block);
        let init = if to_profile {
            let bbar = state.params.get(BlockId::Bbar).expect("slope")[0];
            let raw: Vec<f64> = (0..x_n).map(|x| bbar * age_dev(x, x_n)).collect();
            self.layout(to, BlockId::Bx).extract(&raw)
        } else {
            let b_x = state.params.get(BlockId::Bx).expect("profile");
            vec![slope_on_age(b_x)]
        };
        let fwd_objective = self.single_objective(to, &base, new_block, opts.param_prior);
        let Some(fwd) = laplace_proposal(&fwd_objective, &init, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };
        let u = fwd.sample(rng);
        let mut new_params = base;
        self.layout(to, new_block).install(&mut new_params, &u);

        let rev_objective = self.single_objective(cfg, &state.params, old_block, opts.param_prior);
        let current_old = self.block_free(cfg, &state.params, old_block);
        let Some(rev) = laplace_proposal(&rev_objective, &current_old, &opts.newton) else {
            return JumpAttempt::LaplaceFailed;
        };

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: rev.log_density(&current_old),
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    /// Add/remove of one block whose reverse is deterministic: the per-age
    /// profile under `delta2 = 3` and the cohort effect.
    fn jump_block_add(
        &self,
        state: &ChainState<ApConfig>,
        to: ApConfig,
        block: BlockId,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let objective = self.single_objective(to, &state.params, block, opts.param_prior);
        let layout = self.layout(to, block);
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
            log_kernel_rev: 0.0,
            log_q_fwd: fwd.log_density(&u),
            log_q_rev: 0.0,
            log_jacobian: 0.0,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_block_remove(
        &self,
        state: &ChainState<ApConfig>,
        to: ApConfig,
        block: BlockId,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        let mut new_params = state.params.clone();
        new_params.remove(block);

        let rev_objective = self.single_objective(cfg, &state.params, block, opts.param_prior);
        let current = self.block_free(cfg, &state.params, block);
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

    fn update_delta2(
        &self,
        state: &mut ChainState<ApConfig>,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        match state.config.delta2 {
            1 => {
                let attempt = self.jump_add_age_modulation(state, opts, rng);
                self.apply_jump(state, "add_age_modulation", attempt, opts, diag, rng);
            }
            2 => {
                if rng.random::<f64>() < 0.5 {
                    // Propose the move back to an age-independent period
                    // effect. From a profile modulation the reverse kernel
                    // cannot produce this state, so the proposal is dead on
                    // arrival; count it and stay.
                    if state.config.delta3 == 2 {
                        diag.entry("drop_age_modulation").proposed += 1;
                    } else {
                        let attempt = self.jump_drop_age_modulation(state, opts);
                        self.apply_jump(state, "drop_age_modulation", attempt, opts, diag, rng);
                    }
                } else if opts.epsilon_period_move && state.config.delta3 == 1 {
                    let attempt = self.jump_split_period_eps(state, opts, rng);
                    self.apply_jump(state, "split_period_eps", attempt, opts, diag, rng);
                } else {
                    let attempt = self.jump_split_period(state, opts, rng);
                    self.apply_jump(state, "split_period", attempt, opts, diag, rng);
                }
            }
            _ => {
                if opts.epsilon_period_move && state.config.delta3 == 1 {
                    let attempt = self.jump_merge_period_eps(state, opts);
                    self.apply_jump(state, "merge_period_eps", attempt, opts, diag, rng);
                } else {
                    let attempt = self.jump_merge_period(state, opts, rng);
                    self.apply_jump(state, "merge_period", attempt, opts, diag, rng);
                }
            }
        }
    }

    fn update_delta3(
        &self,
        state: &mut ChainState<ApConfig>,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        let cfg = state.config;
        match (cfg.delta2, cfg.delta3) {
            (2, 1) => {
                let attempt = self.jump_modulation_swap(state, opts, rng);
                self.apply_jump(state, "slope_to_profile", attempt, opts, diag, rng);
            }
            (2, 2) => {
                let attempt = self.jump_modulation_swap(state, opts, rng);
                self.apply_jump(state, "profile_to_slope", attempt, opts, diag, rng);
            }
            (3, 1) => {
                let to = ApConfig { delta3: 2, ..cfg };
                let attempt = self.jump_block_add(state, to, BlockId::Bx, opts, rng);
                self.apply_jump(state, "add_age_profile", attempt, opts, diag, rng);
            }
            (3, 2) => {
                let to = ApConfig { delta3: 1, ..cfg };
                let attempt = self.jump_block_remove(state, to, BlockId::Bx, opts);
                self.apply_jump(state, "drop_age_profile", attempt, opts, diag, rng);
            }
            _ => {}
        }
    }

    fn update_delta4(
        &self,
        state: &mut ChainState<ApConfig>,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        let cfg = state.config;
        if cfg.delta4 == 1 {
            let to = ApConfig { delta4: 2, ..cfg };
            let attempt = self.jump_block_add(state, to, BlockId::Gamma, opts, rng);
            self.apply_jump(state, "add_cohort", attempt, opts, diag, rng);
        } else {
            let to = ApConfig { delta4: 1, ..cfg };
            let attempt = self.jump_block_remove(state, to, BlockId::Gamma, opts);
            self.apply_jump(state, "drop_cohort", attempt, opts, diag, rng);
        }
    }
}

// Experimental auxiliary-increment construction for the period split/merge
// in the linear-modulation case: increments eps with `k1 = k - eps`,
// `k2 = k + eps`, constrained by `sum eps = 0` and
// `(1/T) sum (k + eps)/(k - eps) = bbar`. The first `T-2` increments are
// drawn, the last two solve the constraints; the reverse map averages the
// pair and reads the slope off the ratio sum. Enabled by
// `SamplerOptions::epsilon_period_move`.
impl ApFramework<'_> {
    /// Full forward map on free coordinates; `None` when the constraint solve
    /// fails or increments collide with the period values.
    fn eps_forward_map(&self, k_free: &[f64], bbar: f64, w: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let cfg2 = ApConfig::new(1, 2, 1, 1).expect("valid");
        let layout = self.layout(cfg2, BlockId::K2);
        let k = layout.embed(k_free);
        let t_n = k.len();
        debug_assert_eq!(w.len(), t_n - 2);
        let (u, v) = solve_eps_tail(&k, bbar, w)?;
        let mut eps = w.to_vec();
        eps.push(u);
        eps.push(v);
        let k1: Vec<f64> = k.iter().zip(&eps).map(|(ki, ei)| ki - ei).collect();
        let k2: Vec<f64> = k.iter().zip(&eps).map(|(ki, ei)| ki + ei).collect();
        let f = |raw: &[f64]| raw[..t_n - 1].to_vec();
        Some((f(&k1), f(&k2)))
    }

    /// Numeric log |det| of [`Self::eps_forward_map`] at the given point.
    fn eps_log_jacobian(&self, k_free: &[f64], bbar: f64, w: &[f64]) -> Option<f64> {
        let n = k_free.len() + 1 + w.len();
        let base: Vec<f64> = k_free.iter().chain(&[bbar]).chain(w).copied().collect();
        let eval = |z: &[f64]| -> Option<Vec<f64>> {
            let kf = &z[..k_free.len()];
            let bb = z[k_free.len()];
            let ww = &z[k_free.len() + 1..];
            let (k1f, k2f) = self.eps_forward_map(kf, bb, ww)?;
            let mut out = k1f;
            out.extend(k2f);
            Some(out)
        };
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + base[j].abs());
            let mut zp = base.clone();
            zp[j] += h;
            let fp = eval(&zp)?;
            zp[j] = base[j] - h;
            let fm = eval(&zp)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = jac.lu().determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(det.abs().ln())
    }

    fn jump_split_period_eps(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
        rng: &mut ChaCha8Rng,
    ) -> JumpAttempt {
        let cfg = state.config;
        debug_assert!(cfg.delta2 == 2 && cfg.delta3 == 1);
        let to = ApConfig { delta2: 3, ..cfg };
        let (_, t_n) = self.dims();

        let k_free = self.block_free(cfg, &state.params, BlockId::K2);
        let bbar = state.params.get(BlockId::Bbar).expect("slope")[0];
        let sigma = opts.epsilon_scale;
        let w: Vec<f64> = (0..t_n - 2).map(|_| rng.sample::<f64, _>(StandardNormal) * sigma).collect();

        let Some((k1_free, k2_free)) = self.eps_forward_map(&k_free, bbar, &w) else {
            return JumpAttempt::Blocked;
        };
        let Some(log_jacobian) = self.eps_log_jacobian(&k_free, bbar, &w) else {
            return JumpAttempt::Blocked;
        };

        let mut new_params = state.params.clone();
        new_params.remove(BlockId::K2);
        new_params.remove(BlockId::Bbar);
        let layout = self.layout(to, BlockId::K1);
        new_params.set(BlockId::K1, layout.embed(&k1_free));
        new_params.set(BlockId::K2, layout.embed(&k2_free));

        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.5f64.ln(),
            log_kernel_rev: 0.0,
            log_q_fwd: w.iter().map(|x| ln_normal_density(*x, sigma)).sum(),
            log_q_rev: 0.0,
            log_jacobian,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }

    fn jump_merge_period_eps(
        &self,
        state: &ChainState<ApConfig>,
        opts: &SamplerOptions,
    ) -> JumpAttempt {
        let cfg = state.config;
        debug_assert!(cfg.delta2 == 3 && cfg.delta3 == 1);
        let to = ApConfig { delta2: 2, ..cfg };
        let (_, t_n) = self.dims();

        let k1 = state.params.get(BlockId::K1).expect("k1").to_vec();
        let k2 = state.params.get(BlockId::K2).expect("k2").to_vec();
        if k1.iter().any(|v| v.abs() < 1e-10) {
            return JumpAttempt::Blocked;
        }
        let eps: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| (b - a) / 2.0).collect();
        let k: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| (a + b) / 2.0).collect();
        let bbar = k1.iter().zip(&k2).map(|(a, b)| b / a).sum::<f64>() / t_n as f64;
        let w = &eps[..t_n - 2];

        let layout = self.layout(to, BlockId::K2);
        let k_reembedded = reembed(&layout, &k);
        let k_free = layout.extract(&k_reembedded);
        let Some(log_jac_fwd) = self.eps_log_jacobian(&k_free, bbar, w) else {
            return JumpAttempt::Blocked;
        };

        let mut new_params = state.params.clone();
        new_params.remove(BlockId::K1);
        new_params.set(BlockId::K2, k_reembedded);
        new_params.set(BlockId::Bbar, vec![bbar]);

        let sigma = opts.epsilon_scale;
        let pieces = JumpPieces {
            log_lik_new: self.ll(to, &new_params),
            log_prior_new: self.log_param_prior(to, &new_params, &opts.param_prior),
            log_model_new: opts.model_prior.log_weight(self.dimension(to)),
            log_kernel_fwd: 0.0,
            log_kernel_rev: 0.5f64.ln(),
            log_q_fwd: 0.0,
            log_q_rev: w.iter().map(|x| ln_normal_density(*x, sigma)).sum(),
            log_jacobian: -log_jac_fwd,
        };
        JumpAttempt::Proposal { to, params: new_params, pieces }
    }
}

/// Solve the last two increments from `sum eps = 0` and
/// `sum (k+eps)/(k-eps) = T bbar` by a two-dimensional Newton iteration.
fn solve_eps_tail(k: &[f64], bbar: f64, w: &[f64]) -> Option<(f64, f64)> {
    let t_n = k.len();
    let s: f64 = w.iter().sum();
    let mut head = 0.0;
    for i in 0..t_n - 2 {
        let denom = k[i] - w[i];
        if denom.abs() < 1e-12 {
            return None;
        }
        head += (k[i] + w[i]) / denom;
    }
    let (ka, kb) = (k[t_n - 2], k[t_n - 1]);
    let mut u = -s / 2.0;
    let mut v = -s / 2.0;
    for _ in 0..100 {
        let da = ka - u;
        let db = kb - v;
        if da.abs() < 1e-12 || db.abs() < 1e-12 {
            return None;
        }
        let f1 = s + u + v;
        let f2 = head + (ka + u) / da + (kb + v) / db - t_n as f64 * bbar;
        if f1.abs() < 1e-12 && f2.abs() < 1e-10 {
            return Some((u, v));
        }
        let a = 2.0 * ka / (da * da);
        let b = 2.0 * kb / (db * db);
        let det = b - a;
        if det.abs() < 1e-14 {
            return None;
        }
        u -= (b * f1 - f2) / det;
        v -= (f2 - a * f1) / det;
        if !u.is_finite() || !v.is_finite() {
            return None;
        }
    }
    None
}

fn ln_normal_density(x: f64, sigma: f64) -> f64 {
    -0.5 * (x / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

enum JumpAttempt {
    Proposal { to: ApConfig, params: Params, pieces: JumpPieces },
    LaplaceFailed,
    /// Structurally impossible (singular bridge, no reverse path).
    Blocked,
}

/// Re-run a raw vector through its embedding so sum and pin constraints hold
/// exactly after floating-point arithmetic on the raw entries.
fn reembed(layout: &BlockLayout, raw: &[f64]) -> Vec<f64> {
    layout.embed(&layout.extract(raw))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares slope of `v` on the centered age index.
fn slope_on_age(v: &[f64]) -> f64 {
    let n = v.len();
    let num: f64 = v.iter().enumerate().map(|(x, &vx)| vx * age_dev(x, n)).sum();
    let den: f64 = (0..n).map(|x| age_dev(x, n).powi(2)).sum();
    num / den
}

fn block_update_name(block: BlockId) -> &'static str {
    match block {
        BlockId::Ax => "update_a_x",
        BlockId::LevelAb => "update_ab",
        BlockId::K1 => "update_k1",
        BlockId::K2 => "update_k2",
        BlockId::Bbar => "update_bbar",
        BlockId::Bx => "update_b_x",
        BlockId::Gamma => "update_gamma",
        _ => "update_other",
    }
}

impl Framework for ApFramework<'_> {
    type Config = ApConfig;

    fn name(&self) -> &'static str {
        "ap"
    }

    fn catalog(&self) -> Vec<ApConfig> {
        ApConfig::catalog()
    }

    fn dimension(&self, config: ApConfig) -> usize {
        let (x_n, t_n) = self.dims();
        model_dimension_ap(config, x_n, t_n)
    }

    fn default_init_config(&self) -> ApConfig {
        ApConfig::new(2, 1, 1, 1).expect("valid")
    }

    /// Crude starting values: per-age levels from pooled rates, the leading
    /// period effect from centered per-year rates, everything else at the
    /// constraint-respecting zero. A chain started with a zeroed period
    /// effect on strongly trending data sits so far from every conditional
    /// mode that independence proposals cannot walk it in, and early jumps
    /// then lock it into side modes of the bigger models.
    fn initial_params(&self, config: ApConfig) -> Params {
        let (x_n, t_n) = self.dims();
        let crude: Vec<f64> = (0..x_n).map(|x| self.data.crude_level_by_age(x)).collect();
        let mut params = Params::new();
        if config.delta1 == 1 {
            params.set(BlockId::Ax, crude);
        } else {
            params.set(BlockId::LevelAb, vec![mean(&crude), slope_on_age(&crude)]);
        }
        let mut k_crude: Vec<f64> = (0..t_n)
            .map(|t| {
                let d: f64 = (0..x_n).map(|x| self.data.deaths[self.data.idx(x, t)]).sum();
                let e: f64 = (0..x_n).map(|x| self.data.exposures[self.data.idx(x, t)]).sum();
                ((d + 0.5) / (e + 1.0)).ln()
            })
            .collect();
        let k_mean = k_crude.iter().sum::<f64>() / t_n as f64;
        for v in &mut k_crude {
            *v -= k_mean;
        }
        // The leading period block carries the crude path; extra blocks start
        // at zero.
        let lead_period = if config.delta2 == 2 { BlockId::K2 } else { BlockId::K1 };
        let lead_layout = self.layout(config, lead_period);
        params.set(lead_period, reembed(&lead_layout, &k_crude));
        for block in config.active_blocks() {
            if params.contains(block) {
                continue;
            }
            let layout = self.layout(config, block);
            let zeros = vec![0.0; layout.free_dim()];
            params.set(block, layout.embed(&zeros));
        }
        params
    }

    fn log_lik(&self, config: ApConfig, params: &Params) -> Result<f64> {
        let (x_n, t_n) = self.dims();
        let eta = predict_eta_ap(config, params, x_n, t_n)?;
        log_likelihood(&self.data.deaths, &self.data.exposures, &eta)
    }

    fn log_param_prior(&self, config: ApConfig, params: &Params, prior: &ParamPrior) -> f64 {
        config
            .active_blocks()
            .into_iter()
            .map(|b| prior.log_density(&self.block_free(config, params, b)))
            .sum()
    }

    fn max_constraint_residual(&self, config: ApConfig, params: &Params) -> f64 {
        let (x_n, t_n) = self.dims();
        max_constraint_residual_ap(config, params, x_n, t_n)
    }

    fn eta(&self, config: ApConfig, params: &Params) -> Result<Vec<f64>> {
        let (x_n, t_n) = self.dims();
        predict_eta_ap(config, params, x_n, t_n)
    }

    fn move_plans(&self, from: ApConfig) -> Vec<MovePlan<ApConfig>> {
        let (x_n, t_n) = self.dims();
        let free = |cfg: ApConfig, b: BlockId| layout_ap(cfg, b, x_n, t_n).free_dim();
        let mut plans = Vec::new();

        // delta1 swap.
        let to1 = ApConfig { delta1: 3 - from.delta1, ..from };
        let (old_level, new_level) =
            if from.delta1 == 1 { (BlockId::Ax, BlockId::LevelAb) } else { (BlockId::LevelAb, BlockId::Ax) };
        plans.push(MovePlan {
            name: "swap_level",
            from,
            to: to1,
            kind: MoveKind::Swap,
            delta_index: 1,
            fwd_draw_dim: free(to1, new_level),
            rev_draw_dim: free(from, old_level),
            kernel_prob: 1.0,
        });

        // delta2 moves.
        match from.delta2 {
            1 => {
                let to = ApConfig { delta2: 2, delta3: 1, ..from };
                plans.push(MovePlan {
                    name: "add_age_modulation",
                    from,
                    to,
                    kind: MoveKind::Add,
                    delta_index: 2,
                    fwd_draw_dim: 1,
                    rev_draw_dim: 0,
                    kernel_prob: 1.0,
                });
            }
            2 => {
                if from.delta3 == 1 {
                    let to = ApConfig { delta2: 1, delta3: 1, ..from };
                    plans.push(MovePlan {
                        name: "drop_age_modulation",
                        from,
                        to,
                        kind: MoveKind::Remove,
                        delta_index: 2,
                        fwd_draw_dim: 0,
                        rev_draw_dim: 1,
                        kernel_prob: 0.5,
                    });
                }
                let to = ApConfig { delta2: 3, ..from };
                plans.push(MovePlan {
                    name: "split_period",
                    from,
                    to,
                    kind: MoveKind::Swap,
                    delta_index: 2,
                    fwd_draw_dim: free(to, BlockId::K1) + free(to, BlockId::K2),
                    rev_draw_dim: free(from, BlockId::K2) + 1,
                    kernel_prob: 0.5,
                });
            }
            _ => {
                let to = ApConfig { delta2: 2, ..from };
                plans.push(MovePlan {
                    name: "merge_period",
                    from,
                    to,
                    kind: MoveKind::Swap,
                    delta_index: 2,
                    fwd_draw_dim: free(to, BlockId::K2) + 1,
                    rev_draw_dim: free(from, BlockId::K1) + free(from, BlockId::K2),
                    kernel_prob: 1.0,
                });
            }
        }

        // delta3 moves.
        if from.delta2 == 2 {
            let to = ApConfig { delta3: 3 - from.delta3, ..from };
            let (name, fwd, rev) = if from.delta3 == 1 {
                ("slope_to_profile", free(to, BlockId::Bx), 1)
            } else {
                ("profile_to_slope", 1, free(from, BlockId::Bx))
            };
            plans.push(MovePlan {
                name,
                from,
                to,
                kind: MoveKind::Swap,
                delta_index: 3,
                fwd_draw_dim: fwd,
                rev_draw_dim: rev,
                kernel_prob: 1.0,
            });
        } else if from.delta2 == 3 {
            let to = ApConfig { delta3: 3 - from.delta3, ..from };
            if from.delta3 == 1 {
                plans.push(MovePlan {
                    name: "add_age_profile",
                    from,
                    to,
                    kind: MoveKind::Add,
                    delta_index: 3,
                    fwd_draw_dim: free(to, BlockId::Bx),
                    rev_draw_dim: 0,
                    kernel_prob: 1.0,
                });
            } else {
                plans.push(MovePlan {
                    name: "drop_age_profile",
                    from,
                    to,
                    kind: MoveKind::Remove,
                    delta_index: 3,
                    fwd_draw_dim: 0,
                    rev_draw_dim: free(from, BlockId::Bx),
                    kernel_prob: 1.0,
                });
            }
        }

        // delta4 moves.
        let to4 = ApConfig { delta4: 3 - from.delta4, ..from };
        if from.delta4 == 1 {
            plans.push(MovePlan {
                name: "add_cohort",
                from,
                to: to4,
                kind: MoveKind::Add,
                delta_index: 4,
                fwd_draw_dim: free(to4, BlockId::Gamma),
                rev_draw_dim: 0,
                kernel_prob: 1.0,
            });
        } else {
            plans.push(MovePlan {
                name: "drop_cohort",
                from,
                to: to4,
                kind: MoveKind::Remove,
                delta_index: 4,
                fwd_draw_dim: 0,
                rev_draw_dim: free(from, BlockId::Gamma),
                kernel_prob: 1.0,
            });
        }
        plans
    }

    fn sweep(
        &self,
        state: &mut ChainState<ApConfig>,
        opts: &SamplerOptions,
        diag: &mut Diagnostics,
        rng: &mut ChaCha8Rng,
    ) {
        // Indicator updates are lazy (attempted with probability one half):
        // a toggle whose acceptance hits one on a flat target would otherwise
        // flip deterministically every sweep and make the chain periodic.
        // The laziness factor multiplies every kernel probability equally and
        // cancels from each acceptance ratio.

        // Level, then its indicator.
        let level = if state.config.delta1 == 1 { BlockId::Ax } else { BlockId::LevelAb };
        self.mh_block(state, level, opts, diag, rng);
        if rng.random::<f64>() < 0.5 {
            let attempt = self.jump_level_swap(state, opts, rng);
            self.apply_jump(state, "swap_level", attempt, opts, diag, rng);
        }

        // Period and modulation blocks, then their indicators.
        if state.config.has_k1() {
            self.mh_block(state, BlockId::K1, opts, diag, rng);
        }
        if state.config.has_k2() {
            self.mh_block(state, BlockId::K2, opts, diag, rng);
        }
        if state.config.has_bbar() {
            self.mh_block(state, BlockId::Bbar, opts, diag, rng);
        }
        if state.config.has_bx() {
            self.mh_block(state, BlockId::Bx, opts, diag, rng);
        }
        if rng.random::<f64>() < 0.5 {
            self.update_delta2(state, opts, diag, rng);
        }
        if state.config.delta2 >= 2 && rng.random::<f64>() < 0.5 {
            self.update_delta3(state, opts, diag, rng);
        }

        // Cohort block, then its indicator.
        if state.config.has_gamma() {
            self.mh_block(state, BlockId::Gamma, opts, diag, rng);
        }
        if rng.random::<f64>() < 0.5 {
            self.update_delta4(state, opts, diag, rng);
        }
    }
}

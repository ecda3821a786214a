//! Engine-level invariants: dimension matching across the jump catalogs,
//! constraint residuals and likelihood caching along running chains, and
//! reproducibility of seeded runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rjmort::ap::ApConfig;
use rjmort::app::AppConfig;
use rjmort::dataset::{ApDataset, AppDataset};
use rjmort::inference::{
    run_chain, run_chains, ApFramework, AppFramework, Framework, SamplerOptions, Schedule,
};
use rjmort::prior::{ModelPrior, ParamPrior};
use rjmort::sim::{config_probabilities, simulate_ap_dataset, SimRecipe, SimStudy};

fn small_ap_dataset(seed: u64) -> ApDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_n, t_n) = (4usize, 5usize);
    let mut deaths = vec![0.0; x_n * t_n];
    let mut exposures = vec![0.0; x_n * t_n];
    for i in 0..x_n * t_n {
        let e = 50.0 + 400.0 * rng.random::<f64>();
        exposures[i] = e;
        deaths[i] = (e * (-2.5 + rng.random::<f64>()).exp()).round();
    }
    ApDataset::new(
        (60..60 + x_n as i32).collect(),
        (2000..2000 + t_n as i32).collect(),
        deaths,
        exposures,
    )
    .unwrap()
}

fn small_app_dataset(seed: u64) -> AppDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_n, t_n, p_n) = (4usize, 4usize, 3usize);
    let mut deaths = vec![0.0; x_n * t_n * p_n];
    let mut exposures = vec![0.0; x_n * t_n * p_n];
    for i in 0..deaths.len() {
        let e = 50.0 + 400.0 * rng.random::<f64>();
        exposures[i] = e;
        deaths[i] = (e * (-2.5 + rng.random::<f64>()).exp()).round();
    }
    AppDataset::new(
        (50..50 + x_n as i32).collect(),
        (2016..2016 + t_n as i32).collect(),
        (0..p_n).map(|p| format!("P{p}")).collect(),
        deaths,
        exposures,
    )
    .unwrap()
}

#[test]
fn dimension_matching_over_both_catalogs() {
    let ap_data = small_ap_dataset(1);
    let ap = ApFramework::new(&ap_data);
    for cfg in ap.catalog() {
        for plan in ap.move_plans(cfg) {
            assert_eq!(
                ap.dimension(plan.from) + plan.fwd_draw_dim,
                ap.dimension(plan.to) + plan.rev_draw_dim,
                "dimension matching fails for {} from {}",
                plan.name,
                plan.from
            );
        }
    }
    let app_data = small_app_dataset(2);
    let app = AppFramework::new(&app_data);
    for cfg in app.catalog() {
        for plan in app.move_plans(cfg) {
            assert_eq!(
                app.dimension(plan.from) + plan.fwd_draw_dim,
                app.dimension(plan.to) + plan.rev_draw_dim,
                "dimension matching fails for {} from {}",
                plan.name,
                plan.from
            );
        }
    }
}

#[test]
fn reverse_plans_exist_and_mirror_dimensions() {
    let ap_data = small_ap_dataset(3);
    let ap = ApFramework::new(&ap_data);
    for cfg in ap.catalog() {
        for plan in ap.move_plans(cfg) {
            let reverse = ap
                .move_plans(plan.to)
                .into_iter()
                .find(|r| r.delta_index == plan.delta_index && r.to == plan.from);
            let reverse = reverse.unwrap_or_else(|| {
                panic!("no reverse for {} from {} to {}", plan.name, plan.from, plan.to)
            });
            assert_eq!(reverse.fwd_draw_dim, plan.rev_draw_dim, "{}", plan.name);
            assert_eq!(reverse.rev_draw_dim, plan.fwd_draw_dim, "{}", plan.name);
        }
    }
}

#[test]
fn chains_keep_constraints_and_likelihood_cache() {
    let data = small_ap_dataset(11);
    let fw = ApFramework::new(&data);
    let opts = SamplerOptions::default();
    let schedule = Schedule::new(0, 60, 1).unwrap();
    for (i, init) in fw.catalog().into_iter().enumerate() {
        let trace = run_chain(&fw, init, schedule, &opts, 0, 1000 + i as u64).unwrap();
        for sample in &trace.samples {
            let residual = fw.max_constraint_residual(sample.config, &sample.params);
            assert!(residual < 1e-10, "constraint residual {residual} under {}", sample.config);
            let recomputed = fw.log_lik(sample.config, &sample.params).unwrap();
            assert!(
                (recomputed - sample.log_lik).abs() < 1e-9,
                "cached {} vs {} under {}",
                sample.log_lik,
                recomputed,
                sample.config
            );
        }
    }
}

#[test]
fn app_chains_keep_constraints_and_likelihood_cache() {
    let data = small_app_dataset(12);
    let fw = AppFramework::new(&data);
    let opts = SamplerOptions::default();
    let schedule = Schedule::new(0, 40, 1).unwrap();
    for (i, init) in fw.catalog().into_iter().enumerate() {
        let trace = run_chain(&fw, init, schedule, &opts, 0, 2000 + i as u64).unwrap();
        for sample in &trace.samples {
            let residual = fw.max_constraint_residual(sample.config, &sample.params);
            assert!(residual < 1e-10, "constraint residual {residual} under {}", sample.config);
            let recomputed = fw.log_lik(sample.config, &sample.params).unwrap();
            assert!(
                (recomputed - sample.log_lik).abs() < 1e-9,
                "cached {} vs {} under {}",
                sample.log_lik,
                recomputed,
                sample.config
            );
        }
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let data = small_ap_dataset(21);
    let fw = ApFramework::new(&data);
    let opts = SamplerOptions::default();
    let schedule = Schedule::new(20, 30, 1).unwrap();
    let a = run_chain(&fw, fw.default_init_config(), schedule, &opts, 0, 777).unwrap();
    let b = run_chain(&fw, fw.default_init_config(), schedule, &opts, 0, 777).unwrap();
    assert_eq!(a.samples.len(), 30);
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        assert_eq!(sa.config, sb.config);
        assert_eq!(sa.log_lik.to_bits(), sb.log_lik.to_bits());
        for ((ba, va), (bb, vb)) in sa.params.iter().zip(sb.params.iter()) {
            assert_eq!(ba, bb);
            assert_eq!(va, vb);
        }
    }
}

#[test]
fn parallel_chains_on_strong_data_agree_on_marginals() {
    // Two chains with different seeds on clearly signalled data: per-delta
    // marginal probabilities agree within 0.1.
    let recipe = SimRecipe::new(SimStudy::AgeModulation { b_bar: 0.5, sigma_b: 0.15 });
    let data = simulate_ap_dataset(&recipe, 31).unwrap();
    let fw = ApFramework::new(&data);
    let opts = SamplerOptions::default();
    let schedule = Schedule::new(400, 400, 1).unwrap();
    let traces = run_chains(&fw, fw.default_init_config(), schedule, &opts, 2, 5150).unwrap();
    let p0 = config_probabilities(&traces[0..1]);
    let p1 = config_probabilities(&traces[1..2]);
    for delta in 1..=4usize {
        for value in 1..=3u8 {
            let m0: f64 = p0
                .iter()
                .filter(|(c, _)| c.as_bytes()[delta - 1] - b'0' == value)
                .map(|(_, p)| p)
                .sum();
            let m1: f64 = p1
                .iter()
                .filter(|(c, _)| c.as_bytes()[delta - 1] - b'0' == value)
                .map(|(_, p)| p)
                .sum();
            assert!(
                (m0 - m1).abs() < 0.1,
                "delta{delta}={value}: chain marginals {m0} vs {m1}"
            );
        }
    }
}

#[test]
fn experimental_increment_move_keeps_invariants() {
    // Linearly age-modulated truth keeps the chain in the slope-modulation
    // region, where the increment construction applies.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (x_n, t_n) = (6usize, 8usize);
    let mut deaths = vec![0.0; x_n * t_n];
    let mut exposures = vec![0.0; x_n * t_n];
    for x in 0..x_n {
        let dev = x as f64 - (x_n as f64 - 1.0) / 2.0;
        for t in 0..t_n {
            let tdev = t as f64 - (t_n as f64 - 1.0) / 2.0;
            let eta = -2.0 + 0.03 * dev - 0.06 * tdev * (1.0 + 0.25 * dev);
            let e = 800.0;
            exposures[x * t_n + t] = e;
            // Coarse Poisson draw via inverse-transform on a normal bridge.
            let mean = e * eta.exp();
            let draw = mean + mean.sqrt() * (rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5) * 2.0;
            deaths[x * t_n + t] = draw.round().max(0.0);
        }
    }
    let data = ApDataset::new(
        (60..60 + x_n as i32).collect(),
        (2000..2000 + t_n as i32).collect(),
        deaths,
        exposures,
    )
    .unwrap();
    let fw = ApFramework::new(&data);
    let opts = SamplerOptions {
        epsilon_period_move: true,
        param_prior: ParamPrior::Normal { tau: 10.0 },
        model_prior: ModelPrior::Uniform,
        ..Default::default()
    };
    let schedule = Schedule::new(0, 150, 1).unwrap();
    let init = ApConfig::new(2, 2, 1, 1).unwrap();
    let trace = run_chain(&fw, init, schedule, &opts, 0, 99).unwrap();
    for sample in &trace.samples {
        assert!(fw.max_constraint_residual(sample.config, &sample.params) < 1e-10);
        let recomputed = fw.log_lik(sample.config, &sample.params).unwrap();
        assert!((recomputed - sample.log_lik).abs() < 1e-9);
    }
    let eps_proposed: u64 = trace
        .diagnostics
        .moves
        .iter()
        .filter(|(name, _)| name.ends_with("_eps"))
        .map(|(_, s)| s.proposed)
        .sum();
    assert!(eps_proposed > 0, "experimental move never proposed");
}

#[test]
fn app_config_parsing_matches_catalog() {
    let data = small_app_dataset(51);
    let fw = AppFramework::new(&data);
    for cfg in fw.catalog() {
        let parsed: AppConfig = cfg.to_string().parse().unwrap();
        assert_eq!(parsed, cfg);
    }
}

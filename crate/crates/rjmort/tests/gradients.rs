//! Free-coordinate gradients of the log-likelihood against central finite
//! differences, for every block of every configuration in both families.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rjmort::ap::{layout_ap, loglik_gradient_block, predict_eta_ap, ApConfig};
use rjmort::app::{layout_app, loglik_gradient_block_app, predict_eta_app, AppConfig};
use rjmort::dataset::{ApDataset, AppDataset};
use rjmort::likelihood::log_likelihood;
use rjmort::params::Params;

fn random_ap_dataset(rng: &mut ChaCha8Rng, x_n: usize, t_n: usize) -> ApDataset {
    let mut deaths = vec![0.0; x_n * t_n];
    let mut exposures = vec![0.0; x_n * t_n];
    for i in 0..x_n * t_n {
        let e = 20.0 + 300.0 * rng.random::<f64>();
        exposures[i] = e;
        deaths[i] = (e * (-2.0 - rng.random::<f64>()).exp()).round();
    }
    ApDataset::new(
        (0..x_n as i32).collect(),
        (0..t_n as i32).collect(),
        deaths,
        exposures,
    )
    .unwrap()
}

fn random_app_dataset(rng: &mut ChaCha8Rng, x_n: usize, t_n: usize, p_n: usize) -> AppDataset {
    let n = x_n * t_n * p_n;
    let mut deaths = vec![0.0; n];
    let mut exposures = vec![0.0; n];
    for i in 0..n {
        let e = 20.0 + 300.0 * rng.random::<f64>();
        exposures[i] = e;
        deaths[i] = (e * (-2.0 - rng.random::<f64>()).exp()).round();
    }
    AppDataset::new(
        (0..x_n as i32).collect(),
        (0..t_n as i32).collect(),
        (0..p_n).map(|p| format!("P{p}")).collect(),
        deaths,
        exposures,
    )
    .unwrap()
}

/// Random valid parameters: free coordinates drawn uniformly, then embedded.
fn random_ap_params(rng: &mut ChaCha8Rng, cfg: ApConfig, x_n: usize, t_n: usize) -> Params {
    let mut params = Params::new();
    for block in cfg.active_blocks() {
        let layout = layout_ap(cfg, block, x_n, t_n);
        let free: Vec<f64> = (0..layout.free_dim()).map(|_| 0.4 * (rng.random::<f64>() - 0.5)).collect();
        params.set(block, layout.embed(&free));
    }
    params
}

fn random_app_params(
    rng: &mut ChaCha8Rng,
    cfg: AppConfig,
    x_n: usize,
    t_n: usize,
    p_n: usize,
) -> Params {
    let mut params = Params::new();
    for block in cfg.active_blocks() {
        let layout = layout_app(cfg, block, x_n, t_n, p_n);
        let free: Vec<f64> = (0..layout.free_dim()).map(|_| 0.4 * (rng.random::<f64>() - 0.5)).collect();
        params.set(block, layout.embed(&free));
    }
    params
}

#[test]
fn ap_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let (x_n, t_n) = (5usize, 6usize);
    let data = random_ap_dataset(&mut rng, x_n, t_n);
    let step = 1e-6;
    for cfg in ApConfig::catalog() {
        for point in 0..3 {
            let params = random_ap_params(&mut rng, cfg, x_n, t_n);
            for block in cfg.active_blocks() {
                let g = loglik_gradient_block(&data, cfg, &params, block).unwrap();
                let layout = layout_ap(cfg, block, x_n, t_n);
                let free = layout.extract(params.get(block).unwrap());
                for i in 0..free.len() {
                    let mut fp = free.clone();
                    fp[i] += step;
                    let mut pp = params.clone();
                    layout.install(&mut pp, &fp);
                    let lp = log_likelihood(
                        &data.deaths,
                        &data.exposures,
                        &predict_eta_ap(cfg, &pp, x_n, t_n).unwrap(),
                    )
                    .unwrap();
                    fp[i] = free[i] - step;
                    layout.install(&mut pp, &fp);
                    let lm = log_likelihood(
                        &data.deaths,
                        &data.exposures,
                        &predict_eta_ap(cfg, &pp, x_n, t_n).unwrap(),
                    )
                    .unwrap();
                    let fd = (lp - lm) / (2.0 * step);
                    let denom = 1.0_f64.max(fd.abs());
                    assert!(
                        (g[i] - fd).abs() / denom < 1e-5,
                        "config {cfg} block {block} coord {i} point {point}: {} vs {fd}",
                        g[i]
                    );
                }
            }
        }
    }
}

#[test]
fn app_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4321);
    let (x_n, t_n, p_n) = (4usize, 5usize, 3usize);
    let data = random_app_dataset(&mut rng, x_n, t_n, p_n);
    let step = 1e-6;
    for cfg in AppConfig::catalog() {
        for point in 0..3 {
            let params = random_app_params(&mut rng, cfg, x_n, t_n, p_n);
            for block in cfg.active_blocks() {
                let g = loglik_gradient_block_app(&data, cfg, &params, block).unwrap();
                let layout = layout_app(cfg, block, x_n, t_n, p_n);
                let free = layout.extract(params.get(block).unwrap());
                for i in 0..free.len() {
                    let mut fp = free.clone();
                    fp[i] += step;
                    let mut pp = params.clone();
                    layout.install(&mut pp, &fp);
                    let lp = log_likelihood(
                        &data.deaths,
                        &data.exposures,
                        &predict_eta_app(cfg, &pp, x_n, t_n, p_n).unwrap(),
                    )
                    .unwrap();
                    fp[i] = free[i] - step;
                    layout.install(&mut pp, &fp);
                    let lm = log_likelihood(
                        &data.deaths,
                        &data.exposures,
                        &predict_eta_app(cfg, &pp, x_n, t_n, p_n).unwrap(),
                    )
                    .unwrap();
                    let fd = (lp - lm) / (2.0 * step);
                    let denom = 1.0_f64.max(fd.abs());
                    assert!(
                        (g[i] - fd).abs() / denom < 1e-5,
                        "config {cfg} block {block} coord {i} point {point}: {} vs {fd}",
                        g[i]
                    );
                }
            }
        }
    }
}

#[test]
fn inactive_block_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_ap_dataset(&mut rng, 4, 4);
    let cfg = ApConfig::new(2, 1, 1, 1).unwrap();
    let params = random_ap_params(&mut rng, cfg, 4, 4);
    assert!(loglik_gradient_block(&data, cfg, &params, rjmort::params::BlockId::Gamma).is_err());
}

//! Laplace approximation of a log-density over free coordinates.
//!
//! The mode is found by Newton ascent with backtracking line search, using
//! the objective's analytic gradient and, where supplied, its analytic
//! Hessian (central finite differences of the gradient otherwise). The
//! approximating Gaussian is `N(mode, (-H)^-1)`, with escalating diagonal
//! jitter applied until the negated Hessian admits a Cholesky factorization.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// A differentiable log-density over `dim` free coordinates.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, z: &[f64]) -> f64;

    fn grad(&self, z: &[f64]) -> Vec<f64>;

    /// Analytic Hessian if the implementor has one; `None` falls back to
    /// finite differences of the gradient.
    fn hess(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let _ = z;
        None
    }

    /// Value, gradient, and Hessian in one pass. Implementors that share
    /// expensive intermediates should override this.
    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>, Option<DMatrix<f64>>) {
        (self.value(z), self.grad(z), self.hess(z))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub max_jitter_escalations: usize,
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, max_jitter_escalations: 20, fd_step: 1e-5 }
    }
}

/// Gaussian approximation at a posterior mode.
#[derive(Debug, Clone)]
pub struct LaplaceResult {
    pub mode: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub log_det_cov: f64,
    pub converged: bool,
    pub jitter_used: f64,
    pub iterations: usize,
}

impl LaplaceResult {
    fn failed(dim: usize, iterations: usize) -> Self {
        Self {
            mode: vec![0.0; dim],
            covariance: DMatrix::identity(dim, dim),
            log_det_cov: 0.0,
            converged: false,
            jitter_used: f64::NAN,
            iterations,
        }
    }
}

fn fd_hessian(obj: &dyn Objective, z: &[f64], step: f64) -> DMatrix<f64> {
    let n = z.len();
    let mut h = DMatrix::zeros(n, n);
    let mut zp = z.to_vec();
    for j in 0..n {
        let hj = step * (1.0 + z[j].abs());
        zp[j] = z[j] + hj;
        let gp = obj.grad(&zp);
        zp[j] = z[j] - hj;
        let gm = obj.grad(&zp);
        zp[j] = z[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * hj);
        }
    }
    // Symmetrize.
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Cholesky of `m + jitter I`, escalating `jitter = 1e-8 * 2^j` until the
/// factorization succeeds. Returns the factor and the jitter used.
fn jittered_cholesky(
    m: &DMatrix<f64>,
    max_escalations: usize,
) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut jitter = 0.0;
    for j in 0..=max_escalations {
        let mut try_m = m.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                try_m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(try_m) {
            return Some((chol, jitter));
        }
        jitter = 1e-8 * (1u64 << j) as f64;
    }
    None
}

/// Levenberg-style factorization for Newton directions: away from the mode a
/// non-concave objective can have an indefinite Hessian, so the damping must
/// scale with the Hessian itself to guarantee an ascent direction.
fn direction_cholesky(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if let Some(chol) = nalgebra::Cholesky::new(m.clone()) {
        return Some(chol);
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(1.0_f64, f64::max);
    let mut jitter = 1e-10 * scale;
    for _ in 0..80 {
        let mut try_m = m.clone();
        for i in 0..m.nrows() {
            try_m[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(try_m) {
            return Some(chol);
        }
        jitter *= 10.0;
    }
    None
}

/// Maximize `objective` from `init` and build the Gaussian approximation at
/// the mode. `converged` is false on non-convergence or a hopelessly
/// indefinite Hessian; callers treat that as a rejected proposal.
pub fn laplace_approximate(objective: &dyn Objective, init: &[f64], opts: &NewtonOptions) -> LaplaceResult {
    let n = objective.dim();
    debug_assert_eq!(init.len(), n);
    if n == 0 {
        return LaplaceResult {
            mode: Vec::new(),
            covariance: DMatrix::zeros(0, 0),
            log_det_cov: 0.0,
            converged: true,
            jitter_used: 0.0,
            iterations: 0,
        };
    }

    let mut z = init.to_vec();
    let (mut value, mut grad, mut hess_opt) = objective.eval(&z);
    if !value.is_finite() {
        return LaplaceResult::failed(n, 0);
    }

    let mut iterations = 0;
    let mut grad_norm = l2(&grad);
    let mut pure_steps = 0;
    while iterations < opts.max_iter {
        if grad.iter().all(|g| g.abs() <= opts.grad_tol) {
            break;
        }
        iterations += 1;

        let hess = match hess_opt.take() {
            Some(h) => h,
            None => fd_hessian(objective, &z, opts.fd_step),
        };
        let neg_h = -hess;
        let Some(chol) = direction_cholesky(&neg_h) else {
            return LaplaceResult::failed(n, iterations);
        };
        let direction = chol.solve(&DVector::from_column_slice(&grad));
        let slope: f64 = grad.iter().zip(direction.iter()).map(|(g, d)| g * d).sum();

        let mut improved = false;
        if slope.abs() <= 1e-11 * (1.0 + value.abs()) {
            // The predicted gain is below the value's floating-point
            // resolution; a value-based line search cannot make progress.
            // Take plain Newton steps, which contract quadratically near a
            // nondegenerate mode without consulting the value.
            pure_steps += 1;
            if pure_steps > 6 {
                break;
            }
            let trial: Vec<f64> = z.iter().zip(direction.iter()).map(|(zi, d)| zi + d).collect();
            if objective.value(&trial).is_finite() {
                z = trial;
                improved = true;
            }
        } else {
            pure_steps = 0;
            // Backtracking line search on the ascent direction.
            let mut alpha = 1.0;
            for _ in 0..60 {
                let trial: Vec<f64> =
                    z.iter().zip(direction.iter()).map(|(zi, d)| zi + alpha * d).collect();
                let trial_value = objective.value(&trial);
                if trial_value.is_finite() && trial_value >= value + 1e-4 * alpha * slope {
                    z = trial;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if !improved {
            break;
        }

        let (v, g, h) = objective.eval(&z);
        value = v;
        grad = g;
        hess_opt = h;
        grad_norm = l2(&grad);
        if !value.is_finite() {
            return LaplaceResult::failed(n, iterations);
        }
    }

    let hess = match hess_opt {
        Some(h) => h,
        None => fd_hessian(objective, &z, opts.fd_step),
    };
    let neg_h = -hess;
    let Some((chol, jitter)) = jittered_cholesky(&neg_h, opts.max_jitter_escalations) else {
        return LaplaceResult::failed(n, iterations);
    };
    // log det cov = -log det (neg_h + jitter I).
    let log_det_prec: f64 = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    let covariance = chol.inverse();

    LaplaceResult {
        mode: z,
        covariance,
        log_det_cov: -log_det_prec,
        converged: grad_norm < 1e-6,
        jitter_used: jitter,
        iterations,
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A multivariate normal used as an independence proposal: sampling and
/// density evaluation around a Laplace mode.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    pub mean: Vec<f64>,
    chol_cov: DMatrix<f64>,
    log_det_cov: f64,
}

impl GaussianProposal {
    pub fn from_laplace(laplace: &LaplaceResult) -> Option<Self> {
        if !laplace.converged {
            return None;
        }
        let n = laplace.mode.len();
        if n == 0 {
            return Some(Self { mean: Vec::new(), chol_cov: DMatrix::zeros(0, 0), log_det_cov: 0.0 });
        }
        let chol = nalgebra::Cholesky::new(laplace.covariance.clone())?;
        Some(Self {
            mean: laplace.mode.clone(),
            chol_cov: chol.l(),
            log_det_cov: laplace.log_det_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = self.mean.clone();
        for i in 0..n {
            for j in 0..=i {
                out[i] += self.chol_cov[(i, j)] * xi[j];
            }
        }
        out
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        // Solve L y = theta - mean by forward substitution.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = theta[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol_cov[(i, j)] * y[j];
            }
            y[i] = s / self.chol_cov[(i, i)];
        }
        let quad: f64 = y.iter().map(|v| v * v).sum();
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det_cov + quad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic {
        center: Vec<f64>,
        precision: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn value(&self, z: &[f64]) -> f64 {
            -0.5 * z
                .iter()
                .zip(&self.center)
                .zip(&self.precision)
                .map(|((zi, c), p)| p * (zi - c) * (zi - c))
                .sum::<f64>()
        }
        fn grad(&self, z: &[f64]) -> Vec<f64> {
            z.iter()
                .zip(&self.center)
                .zip(&self.precision)
                .map(|((zi, c), p)| -p * (zi - c))
                .collect()
        }
    }

    struct OneCellPoisson {
        deaths: f64,
        exposure: f64,
    }

    impl Objective for OneCellPoisson {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, z: &[f64]) -> f64 {
            self.deaths * z[0] - self.exposure * z[0].exp()
        }
        fn grad(&self, z: &[f64]) -> Vec<f64> {
            vec![self.deaths - self.exposure * z[0].exp()]
        }
        fn hess(&self, z: &[f64]) -> Option<DMatrix<f64>> {
            Some(DMatrix::from_element(1, 1, -self.exposure * z[0].exp()))
        }
    }

    #[test]
    fn recovers_quadratic_exactly() {
        // -(x-3)^2/2: mode 3, covariance [[1]].
        let obj = Quadratic { center: vec![3.0], precision: vec![1.0] };
        let r = laplace_approximate(&obj, &[0.0], &NewtonOptions::default());
        assert!(r.converged);
        assert_relative_eq!(r.mode[0], 3.0, epsilon = 1e-10);
        assert_relative_eq!(r.covariance[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(r.log_det_cov, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn one_cell_poisson_mode_and_variance() {
        // d=10, E=100: mode log(0.1), variance 1/10.
        let obj = OneCellPoisson { deaths: 10.0, exposure: 100.0 };
        let r = laplace_approximate(&obj, &[0.0], &NewtonOptions::default());
        assert!(r.converged);
        assert_relative_eq!(r.mode[0], 0.1_f64.ln(), epsilon = 1e-8);
        assert_relative_eq!(r.covariance[(0, 0)], 0.1, epsilon = 1e-8);
        let g = obj.grad(&r.mode);
        assert!(g[0].abs() < 1e-6);
    }

    #[test]
    fn fd_hessian_path_matches_analytic() {
        let with = OneCellPoisson { deaths: 7.0, exposure: 31.0 };
        struct NoHess(OneCellPoisson);
        impl Objective for NoHess {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, z: &[f64]) -> f64 {
                self.0.value(z)
            }
            fn grad(&self, z: &[f64]) -> Vec<f64> {
                self.0.grad(z)
            }
        }
        let without = NoHess(OneCellPoisson { deaths: 7.0, exposure: 31.0 });
        let ra = laplace_approximate(&with, &[-1.0], &NewtonOptions::default());
        let rf = laplace_approximate(&without, &[-1.0], &NewtonOptions::default());
        assert!(ra.converged && rf.converged);
        assert_relative_eq!(ra.mode[0], rf.mode[0], epsilon = 1e-8);
        assert_relative_eq!(ra.covariance[(0, 0)], rf.covariance[(0, 0)], max_relative = 1e-6);
    }

    #[test]
    fn proposal_density_matches_hand_gaussian() {
        let obj = Quadratic { center: vec![1.0, -2.0], precision: vec![4.0, 0.25] };
        let r = laplace_approximate(&obj, &[0.0, 0.0], &NewtonOptions::default());
        let prop = GaussianProposal::from_laplace(&r).unwrap();
        // Independent coordinates: density is the product of two normals.
        let theta = [1.3, -1.1];
        let expected = ln_normal(theta[0], 1.0, 0.5) + ln_normal(theta[1], -2.0, 2.0);
        assert_relative_eq!(prop.log_density(&theta), expected, epsilon = 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<Vec<f64>> = (0..20_000).map(|_| prop.sample(&mut rng)).collect();
        let mean0 = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        let var0 = draws.iter().map(|d| (d[0] - mean0).powi(2)).sum::<f64>() / draws.len() as f64;
        assert_relative_eq!(mean0, 1.0, epsilon = 0.02);
        assert_relative_eq!(var0, 0.25, max_relative = 0.05);
    }

    fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
        let z = (x - mean) / sd;
        -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    #[test]
    fn nonfinite_start_fails_cleanly() {
        struct Bad;
        impl Objective for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _z: &[f64]) -> f64 {
                f64::NAN
            }
            fn grad(&self, _z: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
        }
        let r = laplace_approximate(&Bad, &[0.0], &NewtonOptions::default());
        assert!(!r.converged);
    }
}

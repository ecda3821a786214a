//! Conditional log-posterior objectives over the free coordinates of one or
//! two parameter blocks, with the rest of the state held fixed.
//!
//! Every single-block conditional in both families is affine in the block's
//! raw entries, and each grid cell touches at most two raw coordinates, so
//! one cell table covers them all (including the joint additive/modulated
//! period pair). The only genuinely nonlinear conditionals are the bilinear
//! pairs (base period with its scalar slope, and the product-period pair);
//! those get exact gradients and Hessians of their own.

use nalgebra::DMatrix;

use crate::constraint::BlockLayout;
use crate::laplace::Objective;
use crate::likelihood::log_likelihood_unchecked;
use crate::prior::ParamPrior;

/// A cell's dependence on the target raw coordinates: up to two
/// `(raw index, loading)` pairs; `eta = eta0 + l1 raw[i1] + l2 raw[i2]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellTouch {
    pub i1: u32,
    pub l1: f64,
    pub i2: u32,
    pub l2: f64,
}

impl CellTouch {
    pub fn one(i: usize, l: f64) -> Self {
        Self { i1: i as u32, l1: l, i2: 0, l2: 0.0 }
    }

    pub fn two(i1: usize, l1: f64, i2: usize, l2: f64) -> Self {
        Self { i1: i1 as u32, l1, i2: i2 as u32, l2 }
    }
}

/// Log-posterior of blocks in which eta is affine.
pub(crate) struct AffineObjective<'a> {
    deaths: &'a [f64],
    exposures: &'a [f64],
    /// eta with the target blocks' raw entries zeroed.
    eta0: Vec<f64>,
    touch: Vec<CellTouch>,
    layouts: Vec<BlockLayout>,
    raw_len: usize,
    free_dim: usize,
    /// Per free column: raw entries fed, with concatenated-raw indices.
    jac_cols: Vec<Vec<(usize, f64)>>,
    prior: ParamPrior,
}

impl<'a> AffineObjective<'a> {
    pub fn new(
        deaths: &'a [f64],
        exposures: &'a [f64],
        eta0: Vec<f64>,
        touch: Vec<CellTouch>,
        layouts: Vec<BlockLayout>,
        prior: ParamPrior,
    ) -> Self {
        debug_assert_eq!(deaths.len(), eta0.len());
        debug_assert_eq!(touch.len(), eta0.len());
        let raw_len = layouts.iter().map(|l| l.len).sum();
        let free_dim = layouts.iter().map(|l| l.free_dim()).sum();
        let mut jac_cols = Vec::with_capacity(free_dim);
        let mut offset = 0;
        for layout in &layouts {
            for col in layout.jacobian_columns() {
                jac_cols.push(col.into_iter().map(|(r, s)| (r + offset, s)).collect());
            }
            offset += layout.len;
        }
        Self { deaths, exposures, eta0, touch, layouts, raw_len, free_dim, jac_cols, prior }
    }

    /// Concatenated raw vector from the stacked free coordinates.
    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        let mut raw = Vec::with_capacity(self.raw_len);
        let mut start = 0;
        for layout in &self.layouts {
            let d = layout.free_dim();
            raw.extend(layout.embed(&z[start..start + d]));
            start += d;
        }
        raw
    }

    /// Stacked free coordinates from per-block raw vectors.
    pub fn extract(&self, raws: &[&[f64]]) -> Vec<f64> {
        debug_assert_eq!(raws.len(), self.layouts.len());
        let mut z = Vec::with_capacity(self.free_dim);
        for (layout, raw) in self.layouts.iter().zip(raws) {
            z.extend(layout.extract(raw));
        }
        z
    }

    fn eta(&self, raw: &[f64]) -> Vec<f64> {
        self.eta0
            .iter()
            .zip(&self.touch)
            .map(|(e0, t)| e0 + t.l1 * raw[t.i1 as usize] + t.l2 * raw[t.i2 as usize])
            .collect()
    }
}

impl Objective for AffineObjective<'_> {
    fn dim(&self) -> usize {
        self.free_dim
    }

    fn value(&self, z: &[f64]) -> f64 {
        let raw = self.embed(z);
        let eta = self.eta(&raw);
        log_likelihood_unchecked(self.deaths, self.exposures, &eta) + self.prior.log_density(z)
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let (_, g, _) = self.eval(z);
        g
    }

    fn hess(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let (_, _, h) = self.eval(z);
        h
    }

    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>, Option<DMatrix<f64>>) {
        let raw = self.embed(z);
        let eta = self.eta(&raw);
        let mut value = self.prior.log_density(z);
        let mut g_raw = vec![0.0; self.raw_len];
        let mut h_raw = DMatrix::zeros(self.raw_len, self.raw_len);
        for c in 0..eta.len() {
            let e = self.exposures[c];
            if e == 0.0 {
                continue;
            }
            let d = self.deaths[c];
            let mu = e * eta[c].exp();
            value += d * (e.ln() + eta[c]) - mu - statrs::function::gamma::ln_gamma(d + 1.0);
            let r = d - mu;
            let t = &self.touch[c];
            let (i1, i2) = (t.i1 as usize, t.i2 as usize);
            g_raw[i1] += r * t.l1;
            h_raw[(i1, i1)] -= mu * t.l1 * t.l1;
            if t.l2 != 0.0 {
                g_raw[i2] += r * t.l2;
                h_raw[(i2, i2)] -= mu * t.l2 * t.l2;
                h_raw[(i1, i2)] -= mu * t.l1 * t.l2;
                h_raw[(i2, i1)] -= mu * t.l1 * t.l2;
            }
        }
        if !value.is_finite() {
            return (f64::NEG_INFINITY, vec![0.0; self.free_dim], None);
        }
        let (g, h) = chain_to_free(&g_raw, &h_raw, &self.jac_cols, z, &self.prior);
        (value, g, Some(h))
    }
}

/// Log-posterior of a bilinear pair: `eta = eta0 + raw1[i] (alpha + beta raw2[j])`.
pub(crate) struct BilinearObjective<'a> {
    deaths: &'a [f64],
    exposures: &'a [f64],
    eta0: Vec<f64>,
    /// Per cell: `(i, j, alpha, beta)`.
    cells: Vec<(u32, u32, f64, f64)>,
    layout1: BlockLayout,
    layout2: BlockLayout,
    jac_cols: Vec<Vec<(usize, f64)>>,
    prior: ParamPrior,
}

impl<'a> BilinearObjective<'a> {
    pub fn new(
        deaths: &'a [f64],
        exposures: &'a [f64],
        eta0: Vec<f64>,
        cells: Vec<(u32, u32, f64, f64)>,
        layout1: BlockLayout,
        layout2: BlockLayout,
        prior: ParamPrior,
    ) -> Self {
        let mut jac_cols: Vec<Vec<(usize, f64)>> = layout1.jacobian_columns();
        let off = layout1.len;
        for col in layout2.jacobian_columns() {
            jac_cols.push(col.into_iter().map(|(r, s)| (r + off, s)).collect());
        }
        Self { deaths, exposures, eta0, cells, layout1, layout2, jac_cols, prior }
    }

    pub fn embed(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d1 = self.layout1.free_dim();
        (self.layout1.embed(&z[..d1]), self.layout2.embed(&z[d1..]))
    }

    pub fn pack(&self, raw1: &[f64], raw2: &[f64]) -> Vec<f64> {
        let mut z = self.layout1.extract(raw1);
        z.extend(self.layout2.extract(raw2));
        z
    }

    fn eta(&self, raw1: &[f64], raw2: &[f64]) -> Vec<f64> {
        self.eta0
            .iter()
            .zip(&self.cells)
            .map(|(e0, &(i, j, alpha, beta))| {
                e0 + raw1[i as usize] * (alpha + beta * raw2[j as usize])
            })
            .collect()
    }
}

impl Objective for BilinearObjective<'_> {
    fn dim(&self) -> usize {
        self.layout1.free_dim() + self.layout2.free_dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let (raw1, raw2) = self.embed(z);
        let eta = self.eta(&raw1, &raw2);
        log_likelihood_unchecked(self.deaths, self.exposures, &eta) + self.prior.log_density(z)
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let (_, g, _) = self.eval(z);
        g
    }

    fn hess(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let (_, _, h) = self.eval(z);
        h
    }

    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>, Option<DMatrix<f64>>) {
        let (raw1, raw2) = self.embed(z);
        let eta = self.eta(&raw1, &raw2);
        let (n1, n2) = (self.layout1.len, self.layout2.len);
        let raw_len = n1 + n2;
        let mut value = self.prior.log_density(z);
        let mut g_raw = vec![0.0; raw_len];
        let mut h_raw = DMatrix::zeros(raw_len, raw_len);
        for c in 0..eta.len() {
            let e = self.exposures[c];
            if e == 0.0 {
                continue;
            }
            let d = self.deaths[c];
            let mu = e * eta[c].exp();
            value += d * (e.ln() + eta[c]) - mu - statrs::function::gamma::ln_gamma(d + 1.0);
            let r = d - mu;
            let (i, j, alpha, beta) = self.cells[c];
            let (i, j) = (i as usize, j as usize);
            let u = alpha + beta * raw2[j]; // d eta / d raw1[i]
            let v = beta * raw1[i]; // d eta / d raw2[j]
            g_raw[i] += r * u;
            g_raw[n1 + j] += r * v;
            h_raw[(i, i)] -= mu * u * u;
            h_raw[(n1 + j, n1 + j)] -= mu * v * v;
            let cross = r * beta - mu * u * v;
            h_raw[(i, n1 + j)] += cross;
            h_raw[(n1 + j, i)] += cross;
        }
        if !value.is_finite() {
            return (f64::NEG_INFINITY, vec![0.0; self.dim()], None);
        }
        let (g, h) = chain_to_free(&g_raw, &h_raw, &self.jac_cols, z, &self.prior);
        (value, g, Some(h))
    }
}

/// Chain a raw gradient and Hessian through the sparse embedding Jacobian and
/// add the prior contributions on the free coordinates.
fn chain_to_free(
    g_raw: &[f64],
    h_raw: &DMatrix<f64>,
    jac_cols: &[Vec<(usize, f64)>],
    z: &[f64],
    prior: &ParamPrior,
) -> (Vec<f64>, DMatrix<f64>) {
    let m = jac_cols.len();
    let mut g = vec![0.0; m];
    for (j, col) in jac_cols.iter().enumerate() {
        g[j] = col.iter().map(|&(r, s)| s * g_raw[r]).sum::<f64>() + prior.grad_term(z[j]);
    }
    let mut h = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let mut v = 0.0;
            for &(rj, sj) in &jac_cols[j] {
                for &(rk, sk) in &jac_cols[k] {
                    v += sj * sk * h_raw[(rj, rk)];
                }
            }
            if j == k {
                v += prior.hess_term();
            }
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    (g, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{Constraint, ConstraintSet};
    use crate::params::BlockId;
    use approx::assert_relative_eq;

    fn fd_grad(obj: &dyn Objective, z: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..z.len())
            .map(|i| {
                let mut zp = z.to_vec();
                zp[i] += h;
                let fp = obj.value(&zp);
                zp[i] = z[i] - h;
                let fm = obj.value(&zp);
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        // Three cells loading one sum-to-zero block of length 3.
        let deaths = [4.0, 7.0, 2.0];
        let exposures = [100.0, 90.0, 110.0];
        let set = ConstraintSet::new(vec![Constraint::sum_zero(BlockId::K1)]);
        let layout = BlockLayout::general(BlockId::K1, 3, &set);
        let touch = vec![CellTouch::one(0, 1.0), CellTouch::one(1, 1.0), CellTouch::one(2, 1.0)];
        let obj = AffineObjective::new(
            &deaths,
            &exposures,
            vec![-3.0; 3],
            touch,
            vec![layout],
            ParamPrior::Normal { tau: 10.0 },
        );
        let z = [0.21, -0.34];
        let g = obj.grad(&z);
        let fd = fd_grad(&obj, &z);
        for (a, b) in g.iter().zip(&fd) {
            assert_relative_eq!(a, b, max_relative = 1e-5, epsilon = 1e-6);
        }
    }

    #[test]
    fn bilinear_gradient_and_hessian_match_finite_differences() {
        let deaths = [4.0, 7.0, 2.0, 5.0];
        let exposures = [100.0, 90.0, 110.0, 95.0];
        // Two-by-two grid: raw1 indexed by row, raw2 by column.
        let cells = vec![(0u32, 0u32, 1.0, 0.5), (0, 1, 1.0, 0.5), (1, 0, 1.0, 0.5), (1, 1, 1.0, 0.5)];
        let set1 = ConstraintSet::new(vec![Constraint::sum_zero(BlockId::K2)]);
        let layout1 = BlockLayout::general(BlockId::K2, 2, &set1);
        let layout2 = BlockLayout::unconstrained(BlockId::Bbar, 2);
        let obj = BilinearObjective::new(
            &deaths,
            &exposures,
            vec![-3.0; 4],
            cells,
            layout1,
            layout2,
            ParamPrior::Flat,
        );
        let z = [0.15, 0.3, -0.2];
        let g = obj.grad(&z);
        let fd = fd_grad(&obj, &z);
        for (a, b) in g.iter().zip(&fd) {
            assert_relative_eq!(a, b, max_relative = 1e-5, epsilon = 1e-6);
        }
        // Hessian against finite differences of the analytic gradient.
        let h = obj.hess(&z).unwrap();
        let step = 1e-6;
        for i in 0..3 {
            let mut zp = z.to_vec();
            zp[i] += step;
            let gp = obj.grad(&zp);
            zp[i] = z[i] - step;
            let gm = obj.grad(&zp);
            for j in 0..3 {
                let fd_h = (gp[j] - gm[j]) / (2.0 * step);
                assert_relative_eq!(h[(j, i)], fd_h, max_relative = 1e-4, epsilon = 1e-4);
            }
        }
    }
}

//! Identifiability constraints and the free-coordinate embeddings they induce.
//!
//! Every constrained block is handled through a deterministic, invertible
//! linear map between its raw vector and a shorter free-coordinate vector:
//!
//! * a sum constraint designates the last unpinned entry as dependent,
//!   `raw[dep] = target - sum(everything else)`;
//! * a pin fixes one entry and removes it from the free coordinates;
//! * the doubly-centered table used by the nested product-level
//!   parametrization stores its first `(R-1) x (C-1)` entries and completes
//!   the last row and column so all row and column sums vanish.
//!
//! Optimizers, proposals, and priors all operate on free coordinates.

use crate::error::{CoreError, Result};
use crate::params::{BlockId, Params};

/// One linear identifiability constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// The block entries sum to `target` (`target = 0` is the common sum-to-zero).
    SumTo { block: BlockId, target: f64 },
    /// Entry `index` (0-based) is fixed at `value`.
    Pin { block: BlockId, index: usize, value: f64 },
}

impl Constraint {
    pub fn sum_zero(block: BlockId) -> Self {
        Constraint::SumTo { block, target: 0.0 }
    }

    pub fn block(&self) -> BlockId {
        match *self {
            Constraint::SumTo { block, .. } | Constraint::Pin { block, .. } => block,
        }
    }
}

/// The full constraint list for one model configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Self { constraints }
    }

    pub fn for_block(&self, block: BlockId) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter().filter(move |c| c.block() == block)
    }

    pub fn n_for_block(&self, block: BlockId) -> usize {
        self.for_block(block).count()
    }
}

/// How a block's raw vector is produced from its free coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    /// Optional pins plus an optional sum constraint.
    General { pins: Vec<(usize, f64)>, sum_to: Option<f64> },
    /// `rows x cols` table with all row and column sums zero.
    DoublyCentered { rows: usize, cols: usize },
}

/// Free-coordinate layout of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub block: BlockId,
    pub len: usize,
    pub embedding: Embedding,
    /// Raw indices of the free coordinates (General embedding only).
    free_idx: Vec<usize>,
    /// Raw index determined by the sum constraint, if any.
    dep_idx: Option<usize>,
}

impl BlockLayout {
    /// Build the layout of `block` (raw length `len`) from a constraint set.
    /// Pins are excluded from the free coordinates; a sum constraint makes the
    /// last unpinned entry dependent.
    pub fn general(block: BlockId, len: usize, set: &ConstraintSet) -> Self {
        let mut pins: Vec<(usize, f64)> = Vec::new();
        let mut sum_to = None;
        for c in set.for_block(block) {
            match *c {
                Constraint::SumTo { target, .. } => sum_to = Some(target),
                Constraint::Pin { index, value, .. } => pins.push((index, value)),
            }
        }
        Self::from_parts(block, len, pins, sum_to)
    }

    pub fn unconstrained(block: BlockId, len: usize) -> Self {
        Self::from_parts(block, len, Vec::new(), None)
    }

    pub fn from_parts(block: BlockId, len: usize, pins: Vec<(usize, f64)>, sum_to: Option<f64>) -> Self {
        let pinned: Vec<usize> = pins.iter().map(|&(i, _)| i).collect();
        let dep_idx = sum_to.map(|_| {
            (0..len)
                .rev()
                .find(|i| !pinned.contains(i))
                .expect("sum constraint on a fully pinned block")
        });
        let free_idx = (0..len)
            .filter(|i| !pinned.contains(i) && Some(*i) != dep_idx)
            .collect();
        Self { block, len, embedding: Embedding::General { pins, sum_to }, free_idx, dep_idx }
    }

    pub fn doubly_centered(block: BlockId, rows: usize, cols: usize) -> Self {
        Self {
            block,
            len: rows * cols,
            embedding: Embedding::DoublyCentered { rows, cols },
            free_idx: Vec::new(),
            dep_idx: None,
        }
    }

    pub fn free_dim(&self) -> usize {
        match &self.embedding {
            Embedding::General { pins, sum_to } => {
                self.len - pins.len() - usize::from(sum_to.is_some())
            }
            Embedding::DoublyCentered { rows, cols } => (rows - 1) * (cols - 1),
        }
    }

    /// Raw vector from free coordinates.
    pub fn embed(&self, free: &[f64]) -> Vec<f64> {
        debug_assert_eq!(free.len(), self.free_dim());
        match &self.embedding {
            Embedding::General { pins, sum_to } => {
                let mut raw = vec![0.0; self.len];
                for &(i, v) in pins {
                    raw[i] = v;
                }
                for (j, &i) in self.free_idx.iter().enumerate() {
                    raw[i] = free[j];
                }
                if let (Some(target), Some(dep)) = (sum_to, self.dep_idx) {
                    let others: f64 = raw.iter().enumerate().filter(|&(i, _)| i != dep).map(|(_, v)| v).sum();
                    raw[dep] = target - others;
                }
                raw
            }
            Embedding::DoublyCentered { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let mut raw = vec![0.0; r * c];
                for i in 0..r - 1 {
                    for j in 0..c - 1 {
                        raw[i * c + j] = free[i * (c - 1) + j];
                    }
                }
                for i in 0..r - 1 {
                    let s: f64 = (0..c - 1).map(|j| raw[i * c + j]).sum();
                    raw[i * c + (c - 1)] = -s;
                }
                for j in 0..c {
                    let s: f64 = (0..r - 1).map(|i| raw[i * c + j]).sum();
                    raw[(r - 1) * c + j] = -s;
                }
                raw
            }
        }
    }

    /// Free coordinates from a raw vector (inverse of [`embed`](Self::embed)).
    pub fn extract(&self, raw: &[f64]) -> Vec<f64> {
        debug_assert_eq!(raw.len(), self.len);
        match &self.embedding {
            Embedding::General { .. } => self.free_idx.iter().map(|&i| raw[i]).collect(),
            Embedding::DoublyCentered { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let mut free = Vec::with_capacity((r - 1) * (c - 1));
                for i in 0..r - 1 {
                    for j in 0..c - 1 {
                        free.push(raw[i * c + j]);
                    }
                }
                free
            }
        }
    }

    /// Chain a gradient with respect to the raw entries through the embedding.
    pub fn chain_gradient(&self, raw_grad: &[f64]) -> Vec<f64> {
        debug_assert_eq!(raw_grad.len(), self.len);
        match &self.embedding {
            Embedding::General { .. } => {
                let dep = self.dep_idx.map(|d| raw_grad[d]).unwrap_or(0.0);
                self.free_idx.iter().map(|&i| raw_grad[i] - dep).collect()
            }
            Embedding::DoublyCentered { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let corner = raw_grad[(r - 1) * c + (c - 1)];
                let mut free = Vec::with_capacity((r - 1) * (c - 1));
                for i in 0..r - 1 {
                    for j in 0..c - 1 {
                        free.push(
                            raw_grad[i * c + j] - raw_grad[i * c + (c - 1)]
                                - raw_grad[(r - 1) * c + j]
                                + corner,
                        );
                    }
                }
                free
            }
        }
    }

    /// Largest absolute residual of the block's constraints on `raw`.
    pub fn max_residual(&self, raw: &[f64]) -> f64 {
        match &self.embedding {
            Embedding::General { pins, sum_to } => {
                let mut r: f64 = 0.0;
                for &(i, v) in pins {
                    r = r.max((raw[i] - v).abs());
                }
                if let Some(target) = sum_to {
                    let s: f64 = raw.iter().sum();
                    r = r.max((s - target).abs());
                }
                r
            }
            Embedding::DoublyCentered { rows, cols } => {
                let (rn, cn) = (*rows, *cols);
                let mut r: f64 = 0.0;
                for i in 0..rn {
                    let s: f64 = (0..cn).map(|j| raw[i * cn + j]).sum();
                    r = r.max(s.abs());
                }
                for j in 0..cn {
                    let s: f64 = (0..rn).map(|i| raw[i * cn + j]).sum();
                    r = r.max(s.abs());
                }
                r
            }
        }
    }

    /// Sparse columns of the raw-from-free Jacobian: for each free coordinate,
    /// the raw indices it feeds and with what coefficient. Every column has at
    /// most four entries, which keeps Hessian chaining cheap.
    pub fn jacobian_columns(&self) -> Vec<Vec<(usize, f64)>> {
        match &self.embedding {
            Embedding::General { sum_to, .. } => self
                .free_idx
                .iter()
                .map(|&i| {
                    let mut col = vec![(i, 1.0)];
                    if sum_to.is_some() {
                        col.push((self.dep_idx.expect("dep index with sum constraint"), -1.0));
                    }
                    col
                })
                .collect(),
            Embedding::DoublyCentered { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let mut out = Vec::with_capacity((r - 1) * (c - 1));
                for i in 0..r - 1 {
                    for j in 0..c - 1 {
                        out.push(vec![
                            (i * c + j, 1.0),
                            (i * c + (c - 1), -1.0),
                            ((r - 1) * c + j, -1.0),
                            ((r - 1) * c + (c - 1), 1.0),
                        ]);
                    }
                }
                out
            }
        }
    }

    /// Set the block in `params` from free coordinates.
    pub fn install(&self, params: &mut Params, free: &[f64]) {
        params.set(self.block, self.embed(free));
    }

    /// Free coordinates of the block currently stored in `params`.
    pub fn free_of(&self, params: &Params) -> Result<Vec<f64>> {
        Ok(self.extract(params.get(self.block)?))
    }
}

/// Orthogonal projection of `raw` onto the affine subspace the layout's
/// constraints describe. Used when simulating effects that must respect
/// the constraints of the generating model.
pub fn project_to_constraints(raw: &[f64], layout: &BlockLayout) -> Result<Vec<f64>> {
    match &layout.embedding {
        Embedding::General { pins, sum_to } => {
            let n = raw.len() as f64;
            let mut z = raw.to_vec();
            // Constraint normals: all-ones for the sum, e_i for each pin.
            // Pins first (they fix coordinates), then re-center the rest.
            for &(i, v) in pins {
                z[i] = v;
            }
            if let Some(target) = sum_to {
                let pinned_sum: f64 = pins.iter().map(|&(_, v)| v).sum();
                let m = n - pins.len() as f64;
                let excess = (z.iter().sum::<f64>() - target) / m;
                for (i, zi) in z.iter_mut().enumerate() {
                    if !pins.iter().any(|&(pi, _)| pi == i) {
                        *zi -= excess;
                    }
                }
                let _ = pinned_sum;
            }
            Ok(z)
        }
        Embedding::DoublyCentered { .. } => Err(CoreError::Data(
            "projection onto a doubly-centered table is not supported".into(),
        )),
    }
}

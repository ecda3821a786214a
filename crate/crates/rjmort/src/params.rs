//! Parameter blocks and their storage.
//!
//! A model state is a set of named blocks, each a raw (fully embedded) real
//! vector. Identifiability constraints are enforced through the embeddings in
//! [`crate::constraint`]; the raw storage always satisfies them.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, Result};

/// Identifier for a parameter block. Raw lengths are fixed by the dataset
/// dimensions; which blocks are active depends on the model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockId {
    /// Per-age level `a_x` (length X).
    Ax,
    /// Linear level `(a, b)` (length 2).
    LevelAb,
    /// Additive period effect `k1_t` (length T).
    K1,
    /// Age-modulated period effect `k2_t` (length T).
    K2,
    /// Scalar slope of the age modulation.
    Bbar,
    /// Per-age modulation profile `b_x` (length X).
    Bx,
    /// Cohort effect (length C = X + T - 1).
    Gamma,
    /// Product level offsets `c1_p` (length P).
    C1,
    /// Per-age-and-product level table `a_xp` (length X*P).
    Axp,
    /// Product scaling of the age-trend `c2_p` (length P).
    C2,
    /// Base period effect `k_t` (length T).
    Kt,
    /// Product-specific period effect `k2_t` (length T).
    K2t,
    /// Product loadings of the extra period effect `c3_p` (length P).
    C3,
}

impl BlockId {
    pub fn name(self) -> &'static str {
        match self {
            BlockId::Ax => "a_x",
            BlockId::LevelAb => "ab",
            BlockId::K1 => "k1",
            BlockId::K2 => "k2",
            BlockId::Bbar => "bbar",
            BlockId::Bx => "b_x",
            BlockId::Gamma => "gamma",
            BlockId::C1 => "c1",
            BlockId::Axp => "a_xp",
            BlockId::C2 => "c2",
            BlockId::Kt => "k",
            BlockId::K2t => "k2t",
            BlockId::C3 => "c3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "a_x" => BlockId::Ax,
            "ab" => BlockId::LevelAb,
            "k1" => BlockId::K1,
            "k2" => BlockId::K2,
            "bbar" => BlockId::Bbar,
            "b_x" => BlockId::Bx,
            "gamma" => BlockId::Gamma,
            "c1" => BlockId::C1,
            "a_xp" => BlockId::Axp,
            "c2" => BlockId::C2,
            "k" => BlockId::Kt,
            "k2t" => BlockId::K2t,
            "c3" => BlockId::C3,
            _ => return None,
        })
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The active parameter blocks of one model state, stored as raw vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    blocks: BTreeMap<BlockId, Vec<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, id: BlockId, raw: Vec<f64>) {
        self.blocks.insert(id, raw);
    }

    pub fn remove(&mut self, id: BlockId) -> Option<Vec<f64>> {
        self.blocks.remove(&id)
    }

    pub fn get(&self, id: BlockId) -> Result<&[f64]> {
        self.blocks.get(&id).map(|v| v.as_slice()).ok_or(CoreError::InactiveBlock(id))
    }

    pub fn get_mut(&mut self, id: BlockId) -> Result<&mut Vec<f64>> {
        self.blocks.get_mut(&id).ok_or(CoreError::InactiveBlock(id))
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, &[f64])> {
        self.blocks.iter().map(|(id, v)| (*id, v.as_slice()))
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        self.blocks.keys().copied().collect()
    }
}

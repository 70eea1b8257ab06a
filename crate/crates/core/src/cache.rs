//! Per-(block, head) key/value cache. Rows only ever append; after scale
//! `k` every lane holds exactly `cum_tokens(k)` rows.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
struct Lane {
    k: Vec<f32>,
    v: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct KVCache {
    lanes: Vec<Lane>,
    depth: usize,
    heads: usize,
    head_dim: usize,
}

impl KVCache {
    pub fn new(depth: usize, heads: usize, head_dim: usize) -> Self {
        Self {
            lanes: vec![Lane::default(); depth * heads],
            depth,
            heads,
            head_dim,
        }
    }

    fn lane(&self, block: usize, head: usize) -> &Lane {
        &self.lanes[block * self.heads + head]
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Cached rows, validated to be identical across every lane.
    pub fn rows(&self) -> Result<usize> {
        let r0 = self.lanes[0].k.len() / self.head_dim;
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.k.len() != r0 * self.head_dim || lane.v.len() != r0 * self.head_dim {
                return Err(Error::State(format!(
                    "cache lane {i} out of step: {} key floats vs {} expected",
                    lane.k.len(),
                    r0 * self.head_dim
                )));
            }
        }
        Ok(r0)
    }

    pub(crate) fn append(&mut self, block: usize, head: usize, k_rows: &[f32], v_rows: &[f32]) {
        debug_assert!(block < self.depth && head < self.heads);
        debug_assert_eq!(k_rows.len() % self.head_dim, 0);
        debug_assert_eq!(k_rows.len(), v_rows.len());
        let lane = &mut self.lanes[block * self.heads + head];
        lane.k.extend_from_slice(k_rows);
        lane.v.extend_from_slice(v_rows);
    }

    pub(crate) fn keys(&self, block: usize, head: usize) -> &[f32] {
        &self.lane(block, head).k
    }

    pub(crate) fn values(&self, block: usize, head: usize) -> &[f32] {
        &self.lane(block, head).v
    }
}

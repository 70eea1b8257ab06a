//! Scale schedules: the ordered grid side lengths that define how many
//! tokens each autoregressive step emits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered side lengths `s_1..s_K` of the square token grids, one per scale.
/// Scale `k` (1-based) contributes `s_k * s_k` tokens in a single parallel
/// step, attending to every token of scales `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleSchedule {
    sides: Vec<u32>,
}

impl ScaleSchedule {
    /// Sides must be non-empty, each >= 1, and non-decreasing.
    pub fn new(sides: Vec<u32>) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::Config("schedule must have at least one scale".into()));
        }
        if sides.contains(&0) {
            return Err(Error::Config("schedule sides must be >= 1".into()));
        }
        if sides.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "schedule sides must be non-decreasing, got {sides:?}"
            )));
        }
        Ok(Self { sides })
    }

    /// Six-scale schedule used by the fast desk configuration.
    pub fn desk() -> Self {
        Self { sides: vec![1, 2, 3, 4, 5, 6] }
    }

    /// Ten-scale schedule of the full-size 256x256 generator this engine
    /// mirrors; its final grid is 16x16 and its full context is 680 tokens.
    pub fn ten_scale() -> Self {
        Self { sides: vec![1, 2, 3, 4, 5, 6, 8, 10, 13, 16] }
    }

    /// Number of scales `K`.
    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    pub fn sides(&self) -> &[u32] {
        &self.sides
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.sides.len() {
            return Err(Error::Range(format!(
                "scale index {k} outside 1..={}",
                self.sides.len()
            )));
        }
        Ok(())
    }

    /// Grid side `s_k`, `k` 1-based.
    pub fn side(&self, k: usize) -> Result<u32> {
        self.check_k(k)?;
        Ok(self.sides[k - 1])
    }

    /// Tokens emitted at scale `k`: `s_k^2`.
    pub fn tokens_at(&self, k: usize) -> Result<usize> {
        self.check_k(k)?;
        let s = self.sides[k - 1] as usize;
        Ok(s * s)
    }

    /// Context length after scale `k`: `sum_{i<=k} s_i^2`.
    pub fn cum_tokens(&self, k: usize) -> Result<usize> {
        self.check_k(k)?;
        Ok(self
            .sides[..k]
            .iter()
            .map(|&s| (s as usize) * (s as usize))
            .sum())
    }

    /// Context length before scale `k` starts (0 for `k == 1`).
    pub fn cum_before(&self, k: usize) -> Result<usize> {
        self.check_k(k)?;
        if k == 1 {
            Ok(0)
        } else {
            self.cum_tokens(k - 1)
        }
    }

    /// Total tokens across all scales: `cum_tokens(K)`.
    pub fn total_tokens(&self) -> usize {
        self.sides
            .iter()
            .map(|&s| (s as usize) * (s as usize))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cum_tokens_small_cases() {
        let s = ScaleSchedule::new(vec![1, 2]).unwrap();
        assert_eq!(s.cum_tokens(2).unwrap(), 5);
        let s = ScaleSchedule::new(vec![1]).unwrap();
        assert_eq!(s.cum_tokens(1).unwrap(), 1);
    }

    #[test]
    fn ten_scale_context_is_680() {
        let s = ScaleSchedule::ten_scale();
        assert_eq!(s.len(), 10);
        assert_eq!(s.cum_tokens(10).unwrap(), 680);
        assert_eq!(s.total_tokens(), 680);
    }

    #[test]
    fn desk_schedule_tokens() {
        let s = ScaleSchedule::desk();
        assert_eq!(s.total_tokens(), 91);
        assert_eq!(s.cum_before(1).unwrap(), 0);
        assert_eq!(s.cum_before(4).unwrap(), 14);
    }

    #[test]
    fn out_of_range_k_is_rejected() {
        let s = ScaleSchedule::desk();
        assert!(matches!(s.cum_tokens(0), Err(Error::Range(_))));
        assert!(matches!(s.cum_tokens(7), Err(Error::Range(_))));
        assert!(matches!(s.side(99), Err(Error::Range(_))));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(ScaleSchedule::new(vec![]).is_err());
        assert!(ScaleSchedule::new(vec![0, 1]).is_err());
        assert!(ScaleSchedule::new(vec![2, 1]).is_err());
    }

    #[test]
    fn equal_sides_are_allowed() {
        let s = ScaleSchedule::new(vec![2, 2, 4]).unwrap();
        assert_eq!(s.cum_tokens(3).unwrap(), 24);
    }
}

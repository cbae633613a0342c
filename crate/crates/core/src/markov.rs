//! First-order chain over prototype indices with separate failure and
//! success counts, and the smoothed failure likelihood of each transition.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Outcome;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 2.0;

/// Which transitions of a failed trajectory count as failure transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailCountsScope {
    /// Every transition of a failed trajectory.
    #[default]
    All,
    /// Only transitions landing at or after the breach step; earlier ones
    /// count as success transitions.
    PostBreach,
}

/// Previous cluster, or the start of the dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prev {
    Start,
    Cluster(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub fail_counts: Array2<i64>,
    pub succ_counts: Array2<i64>,
    pub fail_start: Array1<i64>,
    pub succ_start: Array1<i64>,
    pub epsilon: f64,
    pub beta: f64,
}

impl TransitionModel {
    pub fn new(k: usize, epsilon: f64, beta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("cluster count must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon < beta) {
            return Err(Error::InvalidConfig(format!(
                "smoothing priors need 0 < epsilon < beta (got {epsilon}, {beta})"
            )));
        }
        Ok(TransitionModel {
            fail_counts: Array2::zeros((k, k)),
            succ_counts: Array2::zeros((k, k)),
            fail_start: Array1::zeros(k),
            succ_start: Array1::zeros(k),
            epsilon,
            beta,
        })
    }

    pub fn k(&self) -> usize {
        self.fail_start.len()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.k() {
            return Err(Error::IndexOutOfRange {
                index: i,
                size: self.k(),
            });
        }
        Ok(())
    }

    /// Count a cluster sequence; every transition is labelled with `outcome`.
    pub fn accumulate(&mut self, sequence: &[usize], outcome: Outcome) -> Result<()> {
        self.accumulate_scoped(sequence, outcome, None, FailCountsScope::All)
    }

    /// Count a cluster sequence under the given scope. With
    /// [`FailCountsScope::PostBreach`] the start and the transition into
    /// step `t` count as failure only when `t ≥ breach`.
    pub fn accumulate_scoped(
        &mut self,
        sequence: &[usize],
        outcome: Outcome,
        breach: Option<usize>,
        scope: FailCountsScope,
    ) -> Result<()> {
        let first = *sequence.first().ok_or(Error::EmptyList)?;
        for &z in sequence {
            self.check(z)?;
        }
        let is_fail = |t: usize| match (outcome, scope) {
            (Outcome::Success, _) => false,
            (Outcome::Failure, FailCountsScope::All) => true,
            (Outcome::Failure, FailCountsScope::PostBreach) => breach.is_some_and(|b| t >= b),
        };
        if is_fail(0) {
            self.fail_start[first] += 1;
        } else {
            self.succ_start[first] += 1;
        }
        for t in 1..sequence.len() {
            let (i, j) = (sequence[t - 1], sequence[t]);
            if is_fail(t) {
                self.fail_counts[[i, j]] += 1;
            } else {
                self.succ_counts[[i, j]] += 1;
            }
        }
        Ok(())
    }

    /// Add another model's counts (same K and priors).
    pub fn merge(&mut self, other: &TransitionModel) -> Result<()> {
        if other.k() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                actual: other.k(),
            });
        }
        self.fail_counts += &other.fail_counts;
        self.succ_counts += &other.succ_counts;
        self.fail_start += &other.fail_start;
        self.succ_start += &other.succ_start;
        Ok(())
    }

    fn smooth(&self, fail: i64, succ: i64) -> f64 {
        (fail as f64 + self.epsilon) / ((fail + succ) as f64 + self.beta)
    }

    /// `λᵢⱼ = (N^fail + ε) / (N^fail + N^succ + β)`.
    pub fn likelihood(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i)?;
        self.check(j)?;
        Ok(self.smooth(self.fail_counts[[i, j]], self.succ_counts[[i, j]]))
    }

    pub fn start_likelihood(&self, j: usize) -> Result<f64> {
        self.check(j)?;
        Ok(self.smooth(self.fail_start[j], self.succ_start[j]))
    }

    /// λ from `prev` into `j`.
    pub fn likelihood_from(&self, prev: Prev, j: usize) -> Result<f64> {
        match prev {
            Prev::Start => self.start_likelihood(j),
            Prev::Cluster(i) => self.likelihood(i, j),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn model(k: usize) -> TransitionModel {
        TransitionModel::new(k, DEFAULT_EPSILON, DEFAULT_BETA).unwrap()
    }

    #[test]
    fn accumulate_examples() {
        let mut m = model(3);
        m.accumulate(&[2], Outcome::Failure).unwrap();
        assert_eq!(m.fail_start[2], 1);
        assert_eq!(m.fail_counts.sum() + m.succ_counts.sum(), 0);

        let mut m = model(3);
        m.accumulate(&[0, 1, 1], Outcome::Success).unwrap();
        assert_eq!(m.succ_start[0], 1);
        assert_eq!(m.succ_counts[[0, 1]], 1);
        assert_eq!(m.succ_counts[[1, 1]], 1);
        assert_eq!(m.succ_counts.sum(), 2);

        assert!(matches!(m.accumulate(&[0, 3], Outcome::Success), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn order_does_not_matter() {
        let (a, b) = (vec![0, 1, 2, 2], vec![2, 0, 1]);
        let mut m1 = model(3);
        m1.accumulate(&a, Outcome::Failure).unwrap();
        m1.accumulate(&b, Outcome::Success).unwrap();
        let mut m2 = model(3);
        m2.accumulate(&b, Outcome::Success).unwrap();
        m2.accumulate(&a, Outcome::Failure).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn likelihood_examples() {
        let mut m = model(2);
        assert_eq!(m.likelihood(0, 1).unwrap(), 0.5);
        m.fail_counts[[0, 0]] = 3;
        m.succ_counts[[0, 0]] = 1;
        assert_abs_diff_eq!(m.likelihood(0, 0).unwrap(), 4.0 / 6.0, epsilon = 1e-12);
        m.succ_counts[[1, 1]] = 100;
        assert_abs_diff_eq!(m.likelihood(1, 1).unwrap(), 1.0 / 102.0, epsilon = 1e-12);
        assert!(matches!(m.likelihood(2, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn start_likelihood_examples() {
        let mut m = model(3);
        assert_eq!(m.start_likelihood(0).unwrap(), 0.5);
        m.fail_start[1] = 2;
        m.succ_start[1] = 2;
        assert_eq!(m.start_likelihood(1).unwrap(), 0.5);
        m.fail_start[2] = 5;
        assert_abs_diff_eq!(m.start_likelihood(2).unwrap(), 6.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn post_breach_scope() {
        let mut m = model(3);
        m.accumulate_scoped(&[0, 1, 2, 1], Outcome::Failure, Some(2), FailCountsScope::PostBreach)
            .unwrap();
        assert_eq!(m.succ_start[0], 1);
        assert_eq!(m.succ_counts[[0, 1]], 1);
        assert_eq!(m.fail_counts[[1, 2]], 1);
        assert_eq!(m.fail_counts[[2, 1]], 1);
    }

    #[test]
    fn invalid_priors() {
        assert!(TransitionModel::new(2, 2.0, 2.0).is_err());
        assert!(TransitionModel::new(2, 0.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn accumulation_is_linear(
            seqs in prop::collection::vec((prop::collection::vec(0usize..4, 1..8), any::<bool>()), 1..10)
        ) {
            let mut whole = model(4);
            let mut merged = model(4);
            for (s, fail) in &seqs {
                let outcome = if *fail { Outcome::Failure } else { Outcome::Success };
                whole.accumulate(s, outcome).unwrap();
                let mut part = model(4);
                part.accumulate(s, outcome).unwrap();
                merged.merge(&part).unwrap();
            }
            prop_assert_eq!(whole, merged);
        }

        #[test]
        fn likelihood_is_monotone(fail in 0i64..500, succ in 0i64..500) {
            let mut m = model(1);
            m.fail_counts[[0, 0]] = fail;
            m.succ_counts[[0, 0]] = succ;
            let base = m.likelihood(0, 0).unwrap();
            m.fail_counts[[0, 0]] = fail + 1;
            prop_assert!(m.likelihood(0, 0).unwrap() > base);
            m.fail_counts[[0, 0]] = fail;
            m.succ_counts[[0, 0]] = succ + 1;
            prop_assert!(m.likelihood(0, 0).unwrap() < base);
        }
    }
}

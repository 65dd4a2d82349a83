//! Budget accounting under vertical distributed attribute DP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-client rank and marginal budgets plus the iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    /// `(eps1, eps2)` per client.
    pub per_client: Vec<(f64, f64)>,
    pub iterations: usize,
}

impl PrivacyLedger {
    pub fn new(eps1: &[f64], eps2: &[f64], iterations: usize) -> Result<Self> {
        if eps1.len() != eps2.len() {
            return Err(Error::LengthMismatch {
                expected: eps1.len(),
                got: eps2.len(),
            });
        }
        if iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if let Some(e) = eps1.iter().chain(eps2).find(|e| !(**e >= 0.0)) {
            return Err(Error::InvalidArgument(format!("budget {e} must be non-negative")));
        }
        Ok(PrivacyLedger {
            per_client: eps1.iter().copied().zip(eps2.iter().copied()).collect(),
            iterations,
        })
    }

    /// Composed budget of client `k`: `T * eps1 + eps2`.
    pub fn vdadp(&self, k: usize) -> f64 {
        let (e1, e2) = self.per_client[k];
        self.iterations as f64 * e1 + e2
    }

    /// Sum of the per-client budgets.
    pub fn total_dp(&self) -> f64 {
        (0..self.per_client.len()).map(|k| self.vdadp(k)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_iteration_composition() {
        let l = PrivacyLedger::new(&[0.5, 1.0], &[0.5, 2.0], 1).unwrap();
        assert_eq!(l.vdadp(0), 1.0);
        assert_eq!(l.vdadp(1), 3.0);
        assert_eq!(l.total_dp(), 4.0);
    }

    #[test]
    fn iterated_composition() {
        let l = PrivacyLedger::new(&[0.05], &[0.5], 10).unwrap();
        assert!((l.vdadp(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_and_zero_iterations() {
        assert!(PrivacyLedger::new(&[-1.0], &[0.0], 1).is_err());
        assert!(PrivacyLedger::new(&[1.0], &[f64::NAN], 1).is_err());
        assert!(PrivacyLedger::new(&[1.0], &[1.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn budgets_are_monotone_in_iterations(
            e1 in 0.0f64..10.0, e2 in 0.0f64..10.0, t in 1usize..50
        ) {
            let a = PrivacyLedger::new(&[e1], &[e2], t).unwrap();
            let b = PrivacyLedger::new(&[e1], &[e2], t + 1).unwrap();
            prop_assert!(a.vdadp(0) >= 0.0);
            prop_assert!(b.vdadp(0) >= a.vdadp(0));
            prop_assert_eq!(a.total_dp(), a.vdadp(0));
        }
    }
}

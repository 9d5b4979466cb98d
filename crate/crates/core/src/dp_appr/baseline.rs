use super::{top_k_indices, ApprMechanism};
use crate::accountant::PrivacyBudget;
use crate::appr::ApprVector;
use crate::error::Result;
use crate::rng::StreamRng;

/// Features-only baseline: each row is the one-hot vector of its own node, so
/// no structure is read and nothing is spent on it.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeaturesOnly;

impl ApprMechanism for FeaturesOnly {
    fn name(&self) -> &str {
        "features"
    }

    fn k(&self) -> usize {
        1
    }

    fn budget(&self, _m: usize) -> Result<Option<PrivacyBudget>> {
        Ok(Some(PrivacyBudget::zero()))
    }

    fn uses_appr(&self) -> bool {
        false
    }

    fn privatize_row(&self, appr: &ApprVector, _n_cols: usize, _rng: &mut StreamRng) -> Result<ApprVector> {
        Ok(ApprVector::one_hot(appr.source))
    }
}

/// Exact top-K truncation of the APPR vector, without any privacy.
#[derive(Debug, Clone, Copy)]
pub struct NonPrivateTopK {
    pub k: usize,
}

impl ApprMechanism for NonPrivateTopK {
    fn name(&self) -> &str {
        "nodp"
    }

    fn k(&self) -> usize {
        self.k
    }

    fn budget(&self, _m: usize) -> Result<Option<PrivacyBudget>> {
        Ok(None)
    }

    fn privatize_row(&self, appr: &ApprVector, _n_cols: usize, _rng: &mut StreamRng) -> Result<ApprVector> {
        let values: Vec<f64> = appr.entries.iter().map(|e| e.1).collect();
        let entries = top_k_indices(&values, self.k)
            .into_iter()
            .map(|i| appr.entries[i])
            .collect();
        Ok(ApprVector::from_entries(appr.source, entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseRng;

    #[test]
    fn nodp_keeps_largest_support_entries() {
        let appr = ApprVector::from_entries(3, vec![(1, 0.1), (3, 0.5), (7, 0.2)]);
        let out = NonPrivateTopK { k: 2 }
            .privatize_row(&appr, 10, &mut NoiseRng::new(0).row(0))
            .unwrap();
        assert_eq!(out.entries, vec![(3, 0.5), (7, 0.2)]);
    }

    #[test]
    fn features_row_is_own_one_hot() {
        let appr = ApprVector::from_entries(4, vec![(1, 0.1)]);
        let out = FeaturesOnly.privatize_row(&appr, 10, &mut NoiseRng::new(0).row(0)).unwrap();
        assert_eq!(out.entries, vec![(4, 1.0)]);
    }
}

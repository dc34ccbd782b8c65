use thiserror::Error;

/// Per-group metric values for one protected-feature grouping.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupMetrics {
    /// One value per group on a single validation split.
    Holdout(Vec<f64>),
    /// Per-fold lists of per-group values.
    KFold(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisparityError {
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("k-fold metrics contain no folds")]
    NoFolds,
    #[error("non-finite group metric")]
    NonFinite,
}

/// Max-minus-min spread of a metric across groups. In k-fold mode the
/// per-fold spreads are averaged.
pub fn group_disparity(groups: &GroupMetrics) -> Result<f64, DisparityError> {
    match groups {
        GroupMetrics::Holdout(values) => spread(values),
        GroupMetrics::KFold(folds) => {
            if folds.is_empty() {
                return Err(DisparityError::NoFolds);
            }
            let mut total = 0.0;
            for fold in folds {
                total += spread(fold)?;
            }
            Ok(total / folds.len() as f64)
        }
    }
}

fn spread(values: &[f64]) -> Result<f64, DisparityError> {
    if values.len() < 2 {
        return Err(DisparityError::TooFewGroups(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DisparityError::NonFinite);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn holdout_spread() {
        let d = group_disparity(&GroupMetrics::Holdout(vec![0.8, 0.9, 0.85])).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        assert_eq!(
            group_disparity(&GroupMetrics::Holdout(vec![0.7; 4])).unwrap(),
            0.0
        );
    }

    #[test]
    fn kfold_mean_of_spreads() {
        let folds = vec![vec![0.5, 0.6], vec![0.1, 0.3, 0.2], vec![0.9, 0.6]];
        let d = group_disparity(&GroupMetrics::KFold(folds)).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn too_few_groups() {
        assert_eq!(
            group_disparity(&GroupMetrics::Holdout(vec![0.5])),
            Err(DisparityError::TooFewGroups(1))
        );
        assert_eq!(
            group_disparity(&GroupMetrics::KFold(vec![vec![0.1, 0.2], vec![]])),
            Err(DisparityError::TooFewGroups(0))
        );
        assert_eq!(
            group_disparity(&GroupMetrics::KFold(vec![])),
            Err(DisparityError::NoFolds)
        );
        assert_eq!(
            group_disparity(&GroupMetrics::Holdout(vec![0.5, f64::NAN])),
            Err(DisparityError::NonFinite)
        );
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_non_negative(
            mut v in prop::collection::vec(-10f64..10.0, 2..12),
            rot in 0usize..12,
        ) {
            let a = group_disparity(&GroupMetrics::Holdout(v.clone())).unwrap();
            let k = rot % v.len();
            v.rotate_left(k);
            v.reverse();
            let b = group_disparity(&GroupMetrics::Holdout(v)).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, b);
        }
    }
}

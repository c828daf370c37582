use proptest::prelude::*;
use streamguard::calibration::{roc_curve, select_threshold, ThresholdPolicy};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // integer-valued halves make ties frequent
    prop::collection::vec((0i32..30).prop_map(|v| f64::from(v) / 2.0), 1..80)
}

fn policy() -> impl Strategy<Value = ThresholdPolicy> {
    prop_oneof![
        Just(ThresholdPolicy::Youden),
        (0.0f64..=1.0).prop_map(ThresholdPolicy::MaxTprAtFpr),
        (0.0f64..=1.0).prop_map(ThresholdPolicy::MinFprAtTpr),
    ]
}

fn mann_whitney(clean: &[f64], adv: &[f64]) -> f64 {
    let mut u = 0.0;
    for a in adv {
        for c in clean {
            if a > c {
                u += 1.0;
            } else if a == c {
                u += 0.5;
            }
        }
    }
    u / (clean.len() * adv.len()) as f64
}

proptest! {
    #[test]
    fn auroc_equals_rank_sum(clean in scores(), adv in scores()) {
        let curve = roc_curve(&clean, &adv).unwrap();
        prop_assert!((curve.auroc - mann_whitney(&clean, &adv)).abs() <= 1e-9);
    }

    #[test]
    fn curve_is_monotone(clean in scores(), adv in scores()) {
        let curve = roc_curve(&clean, &adv).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.tpr, first.fpr), (0.0, 0.0));
        prop_assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
        for pair in curve.points.windows(2) {
            prop_assert!(pair[0].threshold > pair[1].threshold);
            prop_assert!(pair[0].tpr <= pair[1].tpr && pair[0].fpr <= pair[1].fpr);
        }
    }

    #[test]
    fn monotone_transform_invariance(clean in scores(), adv in scores(), policy in policy()) {
        let f = |s: &f64| (0.3 * s).exp() - 4.0;
        let a = roc_curve(&clean, &adv).unwrap();
        let b = roc_curve(&clean.iter().map(f).collect::<Vec<_>>(), &adv.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a.auroc, b.auroc);
        let (sa, sb) = (select_threshold(&a, policy), select_threshold(&b, policy));
        prop_assert_eq!((sa.point.tpr, sa.point.fpr), (sb.point.tpr, sb.point.fpr));
        prop_assert_eq!(sa.feasible, sb.feasible);
        if sa.feasible {
            prop_assert_eq!(f(&sa.point.threshold), sb.point.threshold);
        }
    }

    #[test]
    fn selections_honor_constraints(clean in scores(), adv in scores(), bound in 0.0f64..=1.0) {
        let curve = roc_curve(&clean, &adv).unwrap();
        let capped = select_threshold(&curve, ThresholdPolicy::MaxTprAtFpr(bound)).point;
        prop_assert!(capped.fpr <= bound);
        prop_assert!(curve.points.iter().filter(|p| p.fpr <= bound).all(|p| p.tpr <= capped.tpr));
        let floored = select_threshold(&curve, ThresholdPolicy::MinFprAtTpr(bound)).point;
        prop_assert!(floored.tpr >= bound);
        prop_assert!(curve.points.iter().filter(|p| p.tpr >= bound).all(|p| p.fpr >= floored.fpr));
    }
}

/// Clean and adversarial scores whose curve contains (0.50, 0.08) at
/// threshold 0.55 and (0.80, 0.19) at threshold 0.05.
fn constructed() -> (Vec<f64>, Vec<f64>) {
    let mut clean = vec![0.95; 8];
    clean.extend([0.55; 11]);
    clean.extend([0.05; 81]);
    let mut adv = vec![0.9; 50];
    adv.extend([0.5; 30]);
    adv.extend([0.0; 20]);
    (clean, adv)
}

#[test]
fn operating_points_on_constructed_curve() {
    let (clean, adv) = constructed();
    let curve = roc_curve(&clean, &adv).unwrap();
    let p = select_threshold(&curve, ThresholdPolicy::MinFprAtTpr(0.8));
    assert!(p.feasible);
    assert_eq!(
        (
            p.point.threshold,
            p.point.true_positives,
            p.point.false_positives
        ),
        (0.05, 80, 19)
    );
    let p = select_threshold(&curve, ThresholdPolicy::MaxTprAtFpr(0.1));
    assert_eq!(
        (
            p.point.threshold,
            p.point.true_positives,
            p.point.false_positives
        ),
        (0.55, 50, 8)
    );
    let p = select_threshold(&curve, ThresholdPolicy::Youden);
    assert_eq!(p.point.threshold, 0.05);
}

#[test]
fn csv_lists_every_point() {
    let (clean, adv) = constructed();
    let curve = roc_curve(&clean, &adv).unwrap();
    let csv = curve.to_csv();
    assert!(csv.starts_with("threshold,tpr,fpr\n"));
    assert_eq!(
        csv.lines().filter(|l| !l.starts_with('#')).count(),
        curve.points.len() + 1
    );
    assert!(csv
        .trim_end()
        .ends_with(&format!("# auroc={}", curve.auroc)));
}

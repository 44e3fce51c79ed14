use proptest::prelude::*;

use plda2x::scoring::{eer, roc_points};

/// The hull meets the diagonal at the lowest crossing of any chord between
/// two operating points (or any operating point on the diagonal).
fn all_pairs_eer(tar: &[f64], non: &[f64]) -> f64 {
    let pts = roc_points(tar, non);
    let mut best = f64::INFINITY;
    for (i, p) in pts.iter().enumerate() {
        if p.0 == p.1 {
            best = best.min(p.0);
        }
        for q in &pts[i + 1..] {
            let (fp, fq) = (p.1 - p.0, q.1 - q.0);
            if fp * fq < 0.0 {
                let a = fp / (fp - fq);
                best = best.min(p.0 + a * (q.0 - p.0));
            }
        }
    }
    best
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // a coarse grid forces ties
    prop::collection::vec((-8i32..8).prop_map(|v| v as f64 / 2.0), 1..25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn eer_matches_all_pairs_oracle(tar in scores(), non in scores()) {
        let got = eer(&tar, &non).unwrap();
        let want = all_pairs_eer(&tar, &non);
        prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        prop_assert!((0.0..=0.5).contains(&got));
    }

    #[test]
    fn eer_invariant_under_monotone_maps(tar in scores(), non in scores()) {
        let f = |v: &f64| 3.0 * v + 1.0;
        let a = eer(&tar, &non).unwrap();
        let b = eer(&tar.iter().map(f).collect::<Vec<_>>(), &non.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn reference_values() {
    assert_eq!(eer(&[2.0, 0.0], &[1.0, -1.0]).unwrap(), 0.25);
    assert_eq!(eer(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
    assert_eq!(eer(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!(eer(&[], &[1.0]).is_err());
}

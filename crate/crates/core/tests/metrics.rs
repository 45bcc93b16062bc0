//! Metrics against brute-force scalar oracles.

mod common;

use common::{oracle_auc, oracle_ced, oracle_face_size, oracle_nme, oracle_per_landmark, random_pair, rng};
use proptest::prelude::*;
use rand::Rng;
use stackface::metrics::{
    auc, ced, common_subset, evaluate, face_size, nme, per_landmark_nme, threshold_grid, SchemeMap,
};
use stackface::LandmarkSet;

const TOL: f64 = 1e-12;

#[test]
fn hand_computed_fixture_is_reproduced_exactly() {
    let gt = LandmarkSet::all_visible(vec![[0.0, 0.0], [100.0, 100.0]], "f");
    let pred = LandmarkSet::all_visible(vec![[3.0, 4.0], [100.0, 100.0]], "f");
    assert_eq!(face_size(&gt), Some(100.0));
    assert_eq!(nme(&pred, &gt, None).unwrap(), Some(0.025));
}

#[test]
fn hundred_random_instances_match_the_oracles() {
    let mut r = rng(2024);
    let grid = threshold_grid(0.10, 0.001);
    for instance in 0..100 {
        let n = r.gen_range(1..12);
        let m = r.gen_range(2..20);
        let pairs: Vec<_> = (0..n).map(|_| random_pair(&mut r, m)).collect();
        let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();

        let mut nmes = Vec::new();
        for (p, g) in preds.iter().zip(&gts) {
            let got = nme(p, g, None).unwrap();
            let want = oracle_nme(p, g);
            match (got, want) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < TOL, "instance {instance}: {a} vs {b}");
                    nmes.push(a);
                }
                (None, None) => {}
                other => panic!("instance {instance}: definedness differs {other:?}"),
            }
            match (face_size(g), oracle_face_size(g)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < TOL),
                (a, b) => assert_eq!(a, b),
            }
        }
        if nmes.is_empty() {
            continue;
        }

        let curve = ced(&nmes, &grid).unwrap();
        let want = oracle_ced(&nmes, &grid);
        for ((t, f), (g, w)) in curve.iter().zip(grid.iter().zip(&want)) {
            assert_eq!(t, g);
            assert!((f - w).abs() < TOL);
        }

        let ts: Vec<f64> = curve.iter().map(|c| c.0).collect();
        let fs: Vec<f64> = curve.iter().map(|c| c.1).collect();
        for cutoff in [0.05, 0.0735, 0.10, 0.13] {
            let a = auc(&curve, cutoff).unwrap();
            assert!((a - oracle_auc(&ts, &fs, cutoff)).abs() < TOL, "cutoff {cutoff}");
        }

        let pl = per_landmark_nme(&preds, &gts, None).unwrap();
        for (i, want) in oracle_per_landmark(&preds, &gts).into_iter().enumerate() {
            match want {
                Some(w) => assert!((pl.values[&i] - w).abs() < TOL),
                None => assert!(pl.omitted.contains(&i) && !pl.values.contains_key(&i)),
            }
        }

        let report = evaluate(&preds, &gts, None, &grid, 0.10).unwrap();
        let mean = nmes.iter().sum::<f64>() / nmes.len() as f64;
        assert!((report.mean_nme - mean).abs() < TOL);
        assert_eq!(report.per_sample_nme.len(), nmes.len());
    }
}

#[test]
fn ced_reaches_one_once_the_grid_covers_the_worst_sample() {
    let mut r = rng(5);
    let nmes: Vec<f64> = (0..50).map(|_| r.gen_range(0.0..0.2)).collect();
    let worst = nmes.iter().cloned().fold(0.0, f64::max);
    let grid = threshold_grid(0.2, 0.001);
    let curve = ced(&nmes, &grid).unwrap();
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    assert!(worst <= 0.2);
    assert_eq!(curve.last().unwrap().1, 1.0);
}

#[test]
fn perfect_predictions_give_zero_error_and_unit_area() {
    let mut r = rng(6);
    let (_, gt) = random_pair(&mut r, 10);
    let set = [gt];
    let report = evaluate(&set, &set, None, &threshold_grid(0.1, 0.001), 0.1).unwrap();
    assert_eq!(report.mean_nme, 0.0);
    assert_eq!(report.auc, 1.0);
}

#[test]
fn visibility_is_taken_from_the_ground_truth() {
    let gt = LandmarkSet::new(vec![[0.0, 0.0], [10.0, 10.0], [5.0, 5.0]], vec![true, true, false], "v").unwrap();
    let mut pred = LandmarkSet::new(vec![[0.0, 0.0], [10.0, 10.0], [90.0, 90.0]], vec![false, false, true], "v").unwrap();
    assert_eq!(nme(&pred, &gt, None).unwrap(), Some(0.0));
    pred.points[0] = [1.0, 0.0];
    assert_eq!(nme(&pred, &gt, None).unwrap(), Some(0.05));
    // a single visible landmark leaves the face size undefined
    let lone = LandmarkSet::new(vec![[0.0, 0.0], [1.0, 1.0]], vec![true, false], "v").unwrap();
    assert_eq!(nme(&lone, &lone, None).unwrap(), None);
}

#[test]
fn subsets_and_scheme_maps_restrict_the_error() {
    let gt = LandmarkSet::all_visible(vec![[0.0, 0.0], [40.0, 10.0], [20.0, 5.0]], "a");
    let pred = LandmarkSet::all_visible(vec![[2.0, 0.0], [40.0, 10.0], [20.0, 9.0]], "a");
    assert_eq!(nme(&pred, &gt, Some(&[0, 1])).unwrap(), Some(1.0 / 20.0));
    assert!(nme(&pred, &gt, Some(&[3])).is_err());

    let other = LandmarkSet::all_visible(vec![[20.0, 9.0], [9.0, 9.0], [2.0, 0.0]], "b");
    let map = SchemeMap { name_a: "a".into(), name_b: "b".into(), pairs: vec![(0, 2), (2, 0)] };
    let (ga, pb) = common_subset(&map, &gt, &other).unwrap();
    assert_eq!(ga.points, vec![[0.0, 0.0], [20.0, 5.0]]);
    assert_eq!(pb.points, vec![[2.0, 0.0], [20.0, 9.0]]);
    assert_eq!(ga.scheme, pb.scheme);
    let bad = SchemeMap { pairs: vec![(0, 2), (1, 2)], ..map };
    assert!(common_subset(&bad, &gt, &other).is_err());
}

#[test]
fn auc_rejects_curves_that_do_not_start_at_zero() {
    assert!(auc(&[(0.01, 0.5), (0.02, 1.0)], 0.02).is_err());
    assert!(auc(&[(0.0, 0.5)], 0.0).is_err());
    assert_eq!(auc(&[(0.0, 0.5)], 0.1).unwrap(), 0.5);
}

proptest! {
    #[test]
    fn errors_are_nonnegative_and_vanish_on_ground_truth(seed in 0u64..1000, m in 2usize..30) {
        let (pred, gt) = random_pair(&mut rng(seed), m);
        if let Some(e) = nme(&pred, &gt, None).unwrap() {
            prop_assert!(e >= 0.0);
            prop_assert_eq!(nme(&gt, &gt, None).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn nme_is_invariant_to_translation_and_scale(seed in 0u64..1000, s in 0.2..5.0f64, dx in -50.0..50.0f64) {
        let (pred, gt) = random_pair(&mut rng(seed), 8);
        let warp = |l: &LandmarkSet| LandmarkSet {
            points: l.points.iter().map(|p| [s * p[0] + dx, s * p[1] - dx]).collect(),
            ..l.clone()
        };
        if let (Some(a), Some(b)) = (nme(&pred, &gt, None).unwrap(), nme(&warp(&pred), &warp(&gt), None).unwrap()) {
            prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn ced_is_monotone_and_bounded(nmes in prop::collection::vec(0.0..0.3f64, 1..40)) {
        let curve = ced(&nmes, &threshold_grid(0.3, 0.001)).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
        prop_assert_eq!(curve.last().unwrap().1, 1.0);
        let a = auc(&curve, 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

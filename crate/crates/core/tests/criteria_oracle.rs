//! Independent sort-based oracle for scoring and per-layer mask selection
//! on small layers, compared against the library for all eleven criteria.

use ltlab::criteria::{build_mask_with_counts, score_all, Criterion, WeightSnapshot};
use ltlab::{LayerMask, Mask, RngStream, Tensor};
use proptest::prelude::*;

fn oracle_median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

fn oracle_alpha(wi: &[f64], wf: &[f64], prev: &[bool]) -> f64 {
    let pick = |w: &[f64]| -> Vec<f64> { w.iter().zip(prev).filter(|(_, &p)| p).map(|(x, _)| x.abs()).collect() };
    match (oracle_median(pick(wi)), oracle_median(pick(wf))) {
        (Some(a), Some(b)) if b != 0.0 => a / b,
        _ => 1.0,
    }
}

fn oracle_score(name: &str, wi: f64, wf: f64, alpha: f64) -> f64 {
    let sign = if wi > 0.0 {
        1.0
    } else if wi < 0.0 {
        -1.0
    } else {
        0.0
    };
    match name {
        "large_final" => wf.abs(),
        "small_final" => -wf.abs(),
        "large_init" => wi.abs(),
        "small_init" => -wi.abs(),
        "large_init_large_final" => f64::min(alpha * wf.abs(), wi.abs()),
        "small_init_small_final" => -f64::max(alpha * wf.abs(), wi.abs()),
        "magnitude_increase" => wf.abs() - wi.abs(),
        "movement" => (wf - wi).abs(),
        "random" => 0.0,
        "large_final_same_sign" => f64::max(0.0, sign * wf),
        "large_final_diff_sign" => f64::max(0.0, -sign * wf),
        other => panic!("oracle has no rule for {other}"),
    }
}

/// A keep set is correct when it lies inside `prev`, has exactly `keep`
/// members, and no dropped eligible weight outscores a kept one.
fn oracle_accepts(scores: &[f64], prev: &[bool], keep: usize, got: &[bool]) -> Result<(), String> {
    if got.iter().zip(prev).any(|(&g, &p)| g && !p) {
        return Err("kept a previously pruned weight".into());
    }
    if got.iter().filter(|&&g| g).count() != keep {
        return Err(format!("kept {} instead of {keep}", got.iter().filter(|&&g| g).count()));
    }
    let mut eligible: Vec<f64> = scores.iter().zip(prev).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    eligible.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if keep == 0 || keep == eligible.len() {
        return Ok(());
    }
    let threshold = eligible[keep - 1];
    for i in 0..scores.len() {
        if !prev[i] {
            continue;
        }
        if scores[i] > threshold && !got[i] {
            return Err(format!(
                "dropped {i} with score {} above threshold {threshold}",
                scores[i]
            ));
        }
        if scores[i] < threshold && got[i] {
            return Err(format!("kept {i} with score {} below threshold {threshold}", scores[i]));
        }
    }
    Ok(())
}

fn weight() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -1.0f64..1.0,
        1 => Just(0.0),
        1 => prop::sample::select(vec![-0.5, 0.25, 0.5]),
    ]
}

fn layer_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64)> {
    (1usize..=20).prop_flat_map(|n| {
        (
            prop::collection::vec(weight(), n),
            prop::collection::vec(weight(), n),
            prop::collection::vec(prop::bool::weighted(0.8), n),
            0.0f64..=1.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn library_matches_oracle_for_every_criterion(
        (wi, wf, prev, frac) in layer_case(),
        other in layer_case(),
        seed in any::<u64>(),
    ) {
        let shape = [wi.len()];
        let shape2 = [other.0.len()];
        let snapshot = WeightSnapshot::new(
            vec![Tensor::from_vec(&shape, wi.clone()).unwrap(), Tensor::from_vec(&shape2, other.0.clone()).unwrap()],
            vec![Tensor::from_vec(&shape, wf.clone()).unwrap(), Tensor::from_vec(&shape2, other.1.clone()).unwrap()],
        )
        .unwrap();
        let prev_mask = Mask::new(vec![
            LayerMask::new(&shape, prev.clone()).unwrap(),
            LayerMask::new(&shape2, other.2.clone()).unwrap(),
        ]);
        let layers = [(&wi, &wf, &prev, frac), (&other.0, &other.1, &other.2, other.3)];
        let counts: Vec<usize> = layers
            .iter()
            .map(|(_, _, p, f)| (f * p.iter().filter(|&&b| b).count() as f64).floor() as usize)
            .collect();
        for criterion in Criterion::ALL {
            let (scores, _) = score_all(criterion, &snapshot, &prev_mask);
            let mut rng = RngStream::new("ties", seed);
            let mask = build_mask_with_counts(&scores, &counts, &prev_mask, &mut rng).unwrap();
            for (l, (lwi, lwf, lprev, _)) in layers.iter().enumerate() {
                let alpha = oracle_alpha(lwi, lwf, lprev);
                let expected: Vec<f64> = lwi
                    .iter()
                    .zip(lwf.iter())
                    .map(|(&a, &b)| oracle_score(criterion.name(), a, b, alpha))
                    .collect();
                for (i, (&got, &want)) in scores[l].iter().zip(&expected).enumerate() {
                    prop_assert!((got - want).abs() <= 1e-12, "{criterion} layer {l} weight {i}: {got} vs {want}");
                }
                if let Err(msg) = oracle_accepts(&expected, lprev, counts[l], mask.layer(l).bits()) {
                    return Err(TestCaseError::fail(format!("{criterion} layer {l}: {msg}")));
                }
            }
        }
    }

    #[test]
    fn ties_are_broken_by_the_dedicated_stream_only(
        (wi, wf, prev, frac) in layer_case(),
        seed in any::<u64>(),
    ) {
        let shape = [wi.len()];
        let snapshot = WeightSnapshot::new(
            vec![Tensor::from_vec(&shape, wi).unwrap()],
            vec![Tensor::from_vec(&shape, wf).unwrap()],
        )
        .unwrap();
        let prev_mask = Mask::new(vec![LayerMask::new(&shape, prev.clone()).unwrap()]);
        let keep = (frac * prev.iter().filter(|&&b| b).count() as f64).floor() as usize;
        let (scores, _) = score_all(Criterion::Random, &snapshot, &prev_mask);
        let a = build_mask_with_counts(&scores, &[keep], &prev_mask, &mut RngStream::new("ties", seed)).unwrap();
        let b = build_mask_with_counts(&scores, &[keep], &prev_mask, &mut RngStream::new("ties", seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn oracle_reproduces_documented_examples() {
    assert_eq!(oracle_score("large_final", 0.5, -2.0, 1.0), 2.0);
    assert_eq!(oracle_score("magnitude_increase", 1.0, 0.5, 1.0), -0.5);
    assert_eq!(oracle_score("movement", 1.0, -1.0, 1.0), 2.0);
    assert_eq!(oracle_score("large_final_same_sign", -0.1, -3.0, 1.0), 3.0);
    assert_eq!(oracle_score("large_final_same_sign", 0.1, -3.0, 1.0), 0.0);
    assert_eq!(oracle_alpha(&[0.1, -0.1, 0.1], &[0.2, 0.2, -0.2], &[true; 3]), 0.5);
    assert_eq!(oracle_alpha(&[0.3, 0.1], &[0.0, 0.0], &[true; 2]), 1.0);
    let scores = [3.0, 1.0, 2.0, 2.0, 0.0];
    assert!(oracle_accepts(&scores, &[true; 5], 2, &[true, false, true, false, false]).is_ok());
    assert!(oracle_accepts(&scores, &[true; 5], 2, &[true, false, false, true, false]).is_ok());
    assert!(oracle_accepts(&scores, &[true; 5], 2, &[true, true, false, false, false]).is_err());
}

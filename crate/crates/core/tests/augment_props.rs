mod common;

use bioaug_core::augment::{
    apply_action, crop_window, mask_span, permute_segments, segment_bounds, time_flip, time_masking,
    time_permutation, warp_with_speeds, ActionKind, ActionParams, AugmentationAction, Epoch, StrongParams,
};
use proptest::prelude::*;

fn epoch_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-5.0..-0.01f64, 0.01..5.0f64], 2..160)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flip_is_an_involution(v in epoch_strategy()) {
        let x = Epoch::from_samples(v);
        prop_assert_eq!(bits(&time_flip(&time_flip(&x)).samples), bits(&x.samples));
    }

    #[test]
    fn permutation_keeps_the_multiset_and_whole_segments(v in epoch_strategy(), n in 1usize..10, seed: u64) {
        prop_assume!(n <= v.len());
        let x = Epoch::from_samples(v.clone());
        let act = AugmentationAction::sample(ActionKind::TimePermutation, v.len(), &StrongParams { n_segments: n, ..Default::default() }, seed).unwrap();
        let y = act.apply(&x).unwrap();
        let (mut a, mut b) = (bits(&v), bits(&y.samples));
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let ActionParams::Permute { order } = act.params else { panic!("wrong params") };
        let bounds = segment_bounds(v.len(), n);
        let mut at = 0;
        for &o in &order {
            let seg = &v[bounds[o]..bounds[o + 1]];
            prop_assert_eq!(bits(&y.samples[at..at + seg.len()]), bits(seg));
            at += seg.len();
        }
    }

    #[test]
    fn mask_zeroes_exactly_one_span(v in epoch_strategy(), ratio in 0.001f64..=1.0, seed: u64) {
        let x = Epoch::from_samples(v.clone());
        let y = time_masking(&x, ratio, seed).unwrap();
        let expect = (ratio * v.len() as f64).floor() as usize;
        let zeros: Vec<usize> = (0..v.len()).filter(|&i| y.samples[i] == 0.0).collect();
        prop_assert_eq!(zeros.len(), expect);
        if let (Some(&lo), Some(&hi)) = (zeros.first(), zeros.last()) {
            prop_assert_eq!(hi - lo + 1, expect);
        }
        for i in 0..v.len() {
            if y.samples[i] != 0.0 {
                prop_assert_eq!(y.samples[i].to_bits(), v[i].to_bits());
            }
        }
    }

    #[test]
    fn crop_and_warp_fix_constant_signals(c in -10.0f64..10.0, len in 2usize..200, frac in 0.01f64..=1.0, knots in 2usize..9, r in 1.0f64..5.0, seed: u64) {
        let x = Epoch::from_samples(vec![c; len]);
        let p = StrongParams { crop_fraction: frac, warp_knots: knots, warp_max_speed: r, ..Default::default() };
        for kind in [ActionKind::CropResize, ActionKind::TimeWarp] {
            let y = apply_action(&x, kind, &p, seed).unwrap();
            prop_assert_eq!(bits(&y.samples), bits(&x.samples));
        }
    }

    #[test]
    fn every_action_preserves_length_and_is_seed_deterministic(v in epoch_strategy(), seed: u64) {
        prop_assume!(v.len() >= StrongParams::default().n_segments);
        let x = Epoch::new(v.clone(), Some(2), 7);
        for kind in ActionKind::ALL {
            let a = apply_action(&x, kind, &StrongParams::default(), seed).unwrap();
            let b = apply_action(&x, kind, &StrongParams::default(), seed).unwrap();
            prop_assert_eq!(a.len(), v.len());
            prop_assert_eq!(a.label, Some(2));
            prop_assert_eq!(a.subject_id, 7);
            prop_assert_eq!(bits(&a.samples), bits(&b.samples));
        }
    }

    #[test]
    fn warp_map_is_monotone(len in 8usize..200, speeds in prop::collection::vec(0.25f64..4.0, 2..8)) {
        // a ramp stays non-decreasing under any monotone resampling
        let ramp: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let y = warp_with_speeds(&ramp, &speeds).unwrap();
        prop_assert!(y.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(y[0], 0.0);
        prop_assert_eq!(y[len - 1], (len - 1) as f64);
    }
}

#[test]
fn worked_examples() {
    assert_eq!(permute_segments(&[1.0, 2.0, 3.0, 4.0], &[1, 0]).unwrap(), vec![3.0, 4.0, 1.0, 2.0]);
    assert_eq!(mask_span(&[1.0, 2.0, 3.0, 4.0], 1, 2).unwrap(), vec![1.0, 0.0, 0.0, 4.0]);
    assert_eq!(time_flip(&Epoch::from_samples(vec![1.0, 2.0, 3.0])).samples, vec![3.0, 2.0, 1.0]);
    // window [2, 4) of a ramp stretched to 5 samples
    assert_eq!(crop_window(&[0.0, 1.0, 2.0, 3.0, 4.0], 2, 2).unwrap(), vec![2.0, 2.25, 2.5, 2.75, 3.0]);
    let x = Epoch::from_samples(vec![1.0; 10]);
    assert_eq!(time_masking(&x, 1.0, 0).unwrap().samples, vec![0.0; 10]);
    assert_eq!(time_permutation(&x, 1, 3).unwrap().samples, x.samples);
}

#[test]
fn invalid_intensities_are_rejected() {
    let x = Epoch::from_samples(vec![1.0; 8]);
    assert!(time_masking(&x, 0.0, 0).is_err());
    assert!(time_masking(&x, 1.5, 0).is_err());
    assert!(time_permutation(&x, 0, 0).is_err());
    assert!(time_permutation(&x, 9, 0).is_err());
    let p = StrongParams { warp_knots: 1, ..Default::default() };
    assert!(apply_action(&x, ActionKind::TimeWarp, &p, 0).is_err());
    let p = StrongParams { warp_max_speed: 0.5, ..Default::default() };
    assert!(apply_action(&x, ActionKind::TimeWarp, &p, 0).is_err());
    assert!(permute_segments(&[1.0, 2.0], &[0, 0]).is_err());
}

#[test]
fn invariant_sweep_holds() {
    for (name, ok) in common::augmentation_invariants(300, 17) {
        assert!(ok, "{name}");
    }
}

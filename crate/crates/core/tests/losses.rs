use bida_core::losses::{spatial_loss, temporal_loss, total_loss};
use bida_core::sequence::TemporalMasks;
use bida_core::{ScalarField, VectorField};
use proptest::prelude::*;

const H: usize = 3;
const W: usize = 4;

fn frame() -> impl Strategy<Value = ScalarField<f64>> {
    prop::collection::vec(-20.0f64..20.0, H * W).prop_map(|v| ScalarField::new(H, W, v).unwrap())
}

fn frames(len: usize) -> impl Strategy<Value = Vec<ScalarField<f64>>> {
    prop::collection::vec(frame(), len)
}

proptest! {
    #[test]
    fn spatial_is_nonnegative_and_zero_only_at_gt(
        gt in frames(2),
        preds in prop::collection::vec(frames(2), 1..4),
        gamma in 0.05f64..=1.0,
    ) {
        let l = spatial_loss(&preds, &gt, gamma).unwrap();
        prop_assert!(l >= 0.0);
        let exact = preds.iter().all(|p| p == &gt);
        prop_assert_eq!(l == 0.0, exact);
        let perfect = vec![gt.clone(); preds.len()];
        prop_assert_eq!(spatial_loss(&perfect, &gt, gamma).unwrap(), 0.0);
    }

    #[test]
    fn spatial_is_monotone_in_pointwise_error(
        gt in frames(2),
        pred in frames(2),
        grow in prop::collection::vec(0.0f64..3.0, 2 * H * W),
        gamma in 0.05f64..=1.0,
    ) {
        // push every prediction further from gt by a nonnegative amount
        let worse: Vec<ScalarField<f64>> = pred
            .iter()
            .zip(&gt)
            .enumerate()
            .map(|(t, (p, g))| {
                let data = p
                    .data()
                    .iter()
                    .zip(g.data())
                    .enumerate()
                    .map(|(i, (&p, &g))| p + (p - g).signum() * grow[t * H * W + i])
                    .collect();
                ScalarField::new(H, W, data).unwrap()
            })
            .collect();
        let a = spatial_loss(&[pred], &gt, gamma).unwrap();
        let b = spatial_loss(&[worse], &gt, gamma).unwrap();
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn temporal_ignores_a_global_offset_with_zero_flow(d in frames(4), c in -50.0f64..50.0) {
        let zero = vec![VectorField::zeros(H, W); 3];
        let masks = TemporalMasks::ones(4, (H, W));
        let shifted: Vec<_> = d.iter().map(|f| f.map(|v| v + c)).collect();
        let a = temporal_loss(&d, &zero, &zero, &masks).unwrap();
        let b = temporal_loss(&shifted, &zero, &zero, &masks).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn temporal_ignores_a_global_offset_on_constant_fields(
        base in -10.0f64..10.0,
        c in -10.0f64..10.0,
        u in -1.5f64..1.5,
        v in -1.5f64..1.5,
    ) {
        let d = vec![ScalarField::filled(H, W, base); 3];
        let shifted = vec![ScalarField::filled(H, W, base + c); 3];
        let ff = vec![VectorField::constant(H, W, u, v); 2];
        let fb = vec![VectorField::constant(H, W, -u, -v); 2];
        let masks = TemporalMasks::ones(3, (H, W));
        let a = temporal_loss(&d, &ff, &fb, &masks).unwrap();
        let b = temporal_loss(&shifted, &ff, &fb, &masks).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn zero_masks_annihilate_temporal(d in frames(3)) {
        let zero = vec![VectorField::zeros(H, W); 2];
        prop_assert_eq!(temporal_loss(&d, &zero, &zero, &TemporalMasks::zeros(3, (H, W))).unwrap(), 0.0);
    }

    #[test]
    fn total_is_linear_in_lambda(s in 0.0f64..10.0, t in 0.0f64..10.0, l1 in 0.0f64..2.0, l2 in 0.0f64..2.0) {
        let mid = total_loss(s, t, 0.5 * (l1 + l2));
        let avg = 0.5 * (total_loss(s, t, l1) + total_loss(s, t, l2));
        prop_assert!((mid - avg).abs() <= 1e-12 * (1.0 + mid));
        prop_assert_eq!(total_loss(s, t, 0.0), s);
        prop_assert_eq!(total_loss(s, 0.0, l1), s);
    }
}

use bida_core::field::{ChannelField, VectorField};
use bida_core::stereo::{
    clip_epe, matching_weights, random_weights, MatchingParams, StereoConfig, StereoNet,
    StereoOptions, TraceEvent, UpdateState, STAGE_STRIDES,
};
use bida_core::synth::{generate, SceneSpec};
use bida_core::{Tensor, WeightBank};
use sha2::{Digest, Sha256};

fn net(bank: &WeightBank) -> StereoNet {
    StereoNet::from_bank(bank, StereoOptions::default()).unwrap()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gains fitted to the fixture clip with `fit_matching` over `matching_grid`.
const FIXTURE: MatchingParams = MatchingParams {
    gain: 8.0,
    step: 0.5,
    edge: [4.0, 2.0, 4.0],
};

#[test]
fn matching_weights_fit_the_fixture() {
    let b = generate(&SceneSpec::two_layer(4, 64, 128, 4)).unwrap();
    let n = net(&matching_weights(&StereoConfig::default(), FIXTURE).unwrap());
    let e = clip_epe(&n, &b, 20).unwrap();
    // recorded 0.8047
    assert!(e < 0.85, "fixture EPE {e}");
}

#[test]
fn residual_sequence_is_pinned() {
    let b = generate(&SceneSpec::two_layer(2, 32, 64, 4)).unwrap();
    let n = net(&random_weights(&StereoConfig::default(), 17).unwrap());
    let mut hasher = Sha256::new();
    let mut events = 0;
    let mut observer = |e: TraceEvent<'_>| {
        if let TraceEvent::Residual { delta, .. } = e {
            events += 1;
            for d in delta {
                for v in d.data() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
    };
    n.run(
        &b.left,
        &b.right,
        &b.flow_fwd,
        &b.flow_bwd,
        2,
        &mut observer,
    )
    .unwrap();
    assert_eq!(events, 6);
    assert_eq!(
        hex(&hasher.finalize()),
        "8e72d0e257f38144f6ecaeeb4b8be306b433f72202a0c252d7ef53896da0358f"
    );
}

#[test]
fn zero_weights_give_blank_output() {
    let config = StereoConfig::default();
    let b = generate(&SceneSpec::two_layer(3, 32, 32, 3)).unwrap();
    let n = net(&WeightBank::zeros(&config.tensor_specs()));
    for iters in [0, 3] {
        for d in n.infer(&b, iters).unwrap() {
            assert!(d.data().iter().all(|&v| v.to_bits() == 0));
        }
    }
}

#[test]
fn inference_is_deterministic() {
    let b = generate(&SceneSpec::two_layer(5, 32, 64, 3)).unwrap();
    let n = net(&random_weights(&StereoConfig::default(), 2).unwrap());
    assert_eq!(n.infer(&b, 2).unwrap(), n.infer(&b, 2).unwrap());
}

#[test]
fn motion_state_carries_across_stages() {
    let b = generate(&SceneSpec::two_layer(6, 32, 64, 3)).unwrap();
    let n = net(&random_weights(&StereoConfig::default(), 4).unwrap());
    let mut starts: Vec<UpdateState> = Vec::new();
    let mut ends: Vec<UpdateState> = Vec::new();
    let mut observer = |e: TraceEvent<'_>| match e {
        TraceEvent::StageStart { state, .. } => starts.push(state.clone()),
        TraceEvent::StageEnd { state, .. } => ends.push(state.clone()),
        _ => {}
    };
    n.run(
        &b.left,
        &b.right,
        &b.flow_fwd,
        &b.flow_bwd,
        2,
        &mut observer,
    )
    .unwrap();
    assert_eq!((starts.len(), ends.len()), (3, 3));
    for k in 1..3 {
        let f = STAGE_STRIDES[k - 1] / STAGE_STRIDES[k];
        for (t, (m_end, m_start)) in ends[k - 1].motion.iter().zip(&starts[k].motion).enumerate() {
            let (h, w) = m_end.dims();
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(
                        m_start.pixel(f * x, f * y),
                        m_end.pixel(x, y),
                        "stage {k} frame {t}"
                    );
                    let d0 = ends[k - 1].disparity[t].get(x, y) * f as f32;
                    assert_eq!(starts[k].disparity[t].get(f * x, f * y), d0);
                }
            }
        }
        assert!(starts[k]
            .hidden
            .iter()
            .all(|h| h.data().iter().all(|&v| v == 0.0)));
        assert!(starts[k].motion[0].data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn zero_flow_alignment_copies_neighbors() {
    let mut b = generate(&SceneSpec::two_layer(7, 32, 32, 4)).unwrap();
    let (h, w) = b.dims();
    b.flow_fwd = vec![VectorField::zeros(h, w); 3];
    b.flow_bwd = vec![VectorField::zeros(h, w); 3];
    let n = net(&random_weights(&StereoConfig::default(), 5).unwrap());
    let mut current: Option<Vec<ChannelField>> = None;
    let mut checked = 0;
    let mut observer = |e: TraceEvent<'_>| match e {
        TraceEvent::StageStart { state, .. } => current = Some(state.motion.clone()),
        TraceEvent::AlignedMotion {
            iteration: 0,
            frame,
            prev,
            center,
            next,
            ..
        } => {
            let m = current.as_ref().unwrap();
            assert_eq!(center, &m[frame]);
            assert_eq!(prev, &m[frame.saturating_sub(1)]);
            assert_eq!(next, &m[(frame + 1).min(3)]);
            checked += 1;
        }
        _ => {}
    };
    n.run(
        &b.left,
        &b.right,
        &b.flow_fwd,
        &b.flow_bwd,
        1,
        &mut observer,
    )
    .unwrap();
    assert_eq!(checked, 12);
}

#[test]
fn updater_reach_matches_kernels() {
    let config = StereoConfig::default();
    assert_eq!(config.updater_reach(), [1, 0, 9]);
    let mut bank = WeightBank::default();
    for (name, t) in random_weights(&config, 9).unwrap().iter() {
        let data = if name.starts_with("upd.") && !name.ends_with(".b") {
            t.data().iter().map(|v| v.abs() + 1e-3).collect()
        } else {
            t.data().to_vec()
        };
        bank.insert(
            name.to_string(),
            Tensor::new(t.shape().to_vec(), data).unwrap(),
        );
    }
    let n = net(&bank);
    let (frames, h, w) = (5, 8, 32);
    let hidden = vec![ChannelField::zeros(h, w, config.hidden); frames];
    let mut motion = vec![ChannelField::zeros(h, w, config.mot); frames];
    let (t0, y0, x0) = (2, 4, 16);
    motion[t0] =
        ChannelField::from_fn(
            h,
            w,
            config.mot,
            |x, y, _| if (x, y) == (x0, y0) { 1.0 } else { 0.0 },
        )
        .unwrap();
    let out = n.super_kernel_update(&hidden, &motion).unwrap();
    for (t, d) in out.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let inside = t.abs_diff(t0) <= 1 && y == y0 && x.abs_diff(x0) <= 9;
                assert_eq!(d.get(x, y) > 0.0, inside, "t {t} y {y} x {x}");
            }
        }
    }
}

#[test]
fn shared_encoder_is_symmetric_in_views() {
    let b = generate(&SceneSpec::two_layer(8, 32, 32, 2)).unwrap();
    let n = net(&random_weights(&StereoConfig::default(), 6).unwrap());
    let a = n.extract_features(&b.left, &b.right).unwrap();
    let s = n.extract_features(&b.right, &b.left).unwrap();
    for (la, ls) in a.levels.iter().zip(&s.levels) {
        assert_eq!(la.left, ls.right);
        assert_eq!(la.right, ls.left);
    }
}

#[test]
fn rejects_mismatched_flows() {
    let b = generate(&SceneSpec::two_layer(1, 32, 32, 3)).unwrap();
    let n = net(&random_weights(&StereoConfig::default(), 1).unwrap());
    let short: Vec<VectorField> = b.flow_fwd[..1].to_vec();
    assert!(n
        .run(&b.left, &b.right, &short, &b.flow_bwd, 1, &mut ())
        .is_err());
}

use bida_core::field::{ChannelField, ScalarField, VectorField};
use bida_core::nn::{Activation, Conv2d};
use bida_core::stabilizer::{Stabilizer, StabilizerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 7;
const W: usize = 9;

fn config() -> StabilizerConfig {
    StabilizerConfig {
        feature: 4,
        hidden: 3,
        fusion: 4,
        ..StabilizerConfig::default()
    }
}

fn clip(
    len: usize,
    seed: u64,
) -> (
    Vec<ScalarField<f64>>,
    Vec<VectorField<f64>>,
    Vec<VectorField<f64>>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = |scale: f64| {
        ScalarField::from_fn(H, W, |_, _| scale * rng.random_range(-1.0..1.0)).unwrap()
    };
    let d: Vec<_> = (0..len).map(|_| field(1.0).map(|v| 5.0 + v)).collect();
    let mut flow = || {
        let u = field(1.5);
        let v = field(0.5);
        VectorField::from_fn(H, W, |x, y| (u.get(x, y), v.get(x, y))).unwrap()
    };
    let ff: Vec<_> = (1..len).map(|_| flow()).collect();
    let fb: Vec<_> = (1..len).map(|_| flow()).collect();
    (d, ff, fb)
}

fn max_diff(a: &ChannelField<f64>, b: &ChannelField<f64>) -> f64 {
    a.max_abs_diff(b)
}

#[test]
fn sweeps_respect_causality() {
    let len = 6;
    let model = Stabilizer::<f64>::random(config(), 5, false).unwrap();
    let (d, ff, fb) = clip(len, 2);
    let base = model.forward(&d, &ff, &fb).unwrap();
    for k in 0..len {
        let mut probe = d.clone();
        probe[k] = probe[k].map(|v| v + 0.75);
        let out = model.forward(&probe, &ff, &fb).unwrap();
        for t in 0..len {
            let fwd = max_diff(&out.state.forward[t], &base.state.forward[t]);
            let bwd = max_diff(&out.state.backward[t], &base.state.backward[t]);
            // the feature encoder sees both aligned neighbors, so each sweep
            // reaches one frame past its causal boundary
            if k > t + 1 {
                assert_eq!(fwd, 0.0, "forward state {t} moved with frame {k}");
            } else {
                assert!(fwd > 0.0, "forward state {t} ignores frame {k}");
            }
            if k + 1 < t {
                assert_eq!(bwd, 0.0, "backward state {t} moved with frame {k}");
            } else {
                assert!(bwd > 0.0, "backward state {t} ignores frame {k}");
            }
        }
    }
}

/// Makes a layer treat two equally sized input channel blocks identically.
fn symmetrize(conv: &mut Conv2d<f64>, first: usize, second: usize, width: usize) {
    let (cin, cout) = (conv.cin, conv.cout);
    for tap in 0..conv.kh * conv.kw {
        for c in 0..width {
            for o in 0..cout {
                let a = (tap * cin + first + c) * cout + o;
                let b = (tap * cin + second + c) * cout + o;
                conv.weight[b] = conv.weight[a];
            }
        }
    }
}

#[test]
fn reversed_clip_gives_reversed_output() {
    let len = 5;
    let cfg = config();
    let mut model = Stabilizer::<f64>::random(cfg, 8, false).unwrap();
    symmetrize(model.layer_mut("fe.conv1").unwrap(), 0, 2, 1);
    symmetrize(
        model.layer_mut("fusion.conv1").unwrap(),
        0,
        cfg.hidden,
        cfg.hidden,
    );
    let (d, ff, fb) = clip(len, 3);
    let out = model.forward(&d, &ff, &fb).unwrap();

    let rev = |v: &[ScalarField<f64>]| v.iter().rev().cloned().collect::<Vec<_>>();
    let rev_flow = |v: &[VectorField<f64>]| v.iter().rev().cloned().collect::<Vec<_>>();
    let back = model
        .forward(&rev(&d), &rev_flow(&fb), &rev_flow(&ff))
        .unwrap();
    for t in 0..len {
        let s = len - 1 - t;
        assert!(back.corrected[s].max_abs_diff(&out.corrected[t]) < 1e-12);
        assert!(max_diff(&back.state.forward[s], &out.state.backward[t]) < 1e-12);
        assert!(max_diff(&back.state.backward[s], &out.state.forward[t]) < 1e-12);
    }
    // asymmetric weights break the contract
    let plain = Stabilizer::<f64>::random(cfg, 8, false).unwrap();
    let a = plain.forward(&d, &ff, &fb).unwrap();
    let b = plain
        .forward(&rev(&d), &rev_flow(&fb), &rev_flow(&ff))
        .unwrap();
    assert!(b.corrected[0].max_abs_diff(&a.corrected[len - 1]) > 1e-6);
}

#[test]
fn hidden_states_start_from_zero() {
    // a model whose propagation encoder ignores the carried state gives the
    // same first forward and last backward state as the full model
    let len = 4;
    let cfg = config();
    let model = Stabilizer::<f64>::random(cfg, 4, false).unwrap();
    let mut cut = model.clone();
    let conv = cut.layer_mut("prop.conv1").unwrap();
    for tap in 0..conv.kh * conv.kw {
        for c in 0..cfg.hidden {
            for o in 0..conv.cout {
                conv.weight[(tap * conv.cin + c) * conv.cout + o] = 0.0;
            }
        }
    }
    let (d, ff, fb) = clip(len, 6);
    let a = model.forward(&d, &ff, &fb).unwrap();
    let b = cut.forward(&d, &ff, &fb).unwrap();
    assert_eq!(a.state.forward[0], b.state.forward[0]);
    assert_eq!(a.state.backward[len - 1], b.state.backward[len - 1]);
    assert_ne!(a.state.forward[1], b.state.forward[1]);
}

#[test]
fn zero_upstream_gradient_gives_zero_weight_gradients() {
    let model = Stabilizer::<f64>::random(config(), 1, false).unwrap();
    let (d, ff, fb) = clip(3, 1);
    let (_, tape) = model.forward_with_tape(&d, &ff, &fb).unwrap();
    let zero = vec![ScalarField::zeros(H, W); 3];
    assert!(model.backward(&tape, &zero).unwrap().is_zero());
}

#[test]
fn linear_layer_gradient_is_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w, cin, cout) = (3, 4, 3, 2);
    let mut conv = Conv2d::<f64>::zeros(1, 1, cin, cout, 1);
    conv.weight
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    conv.bias
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    let x = ChannelField::from_fn(h, w, cin, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
    let g = ChannelField::from_fn(h, w, cout, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
    let y = conv.forward(&x, Activation::Identity).unwrap();
    let (dx, grad) = conv
        .backward(&x, &y, &g, Activation::Identity, true)
        .unwrap();
    let dx = dx.unwrap();
    for ci in 0..cin {
        for o in 0..cout {
            let mut expect = 0.0;
            for yy in 0..h {
                for xx in 0..w {
                    expect += x.at(xx, yy, ci) * g.at(xx, yy, o);
                }
            }
            assert!((grad.weight[ci * cout + o] - expect).abs() < 1e-12);
        }
    }
    for o in 0..cout {
        let expect: f64 = (0..h * w).map(|p| g.data()[p * cout + o]).sum();
        assert!((grad.bias[o] - expect).abs() < 1e-12);
    }
    for yy in 0..h {
        for xx in 0..w {
            for ci in 0..cin {
                let expect: f64 = (0..cout)
                    .map(|o| conv.weight[ci * cout + o] * g.at(xx, yy, o))
                    .sum();
                assert!((dx.at(xx, yy, ci) - expect).abs() < 1e-12);
            }
        }
    }
}

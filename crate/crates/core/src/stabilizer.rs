//! Temporal stabilizer for per-frame disparity estimates.
//!
//! Each frame's neighbors are aligned onto it by optical flow and encoded
//! together with the frame itself into a disparity feature. Two recurrent
//! sweeps, one forward and one backward in time, carry hidden features that
//! are aligned onto every new center frame before being merged with its
//! disparity feature. A small fusion head turns the pair of hidden features
//! into a residual that is added to the input.
//!
//! The reverse pass is exact for every weight. Flows and input disparities
//! are constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{ChannelField, Real, ScalarField, VectorField, WarpPlan};
use crate::nn::{Activation, Conv2d, Conv2dGrad};
use crate::sequence::{check_flows, neighbors};
use crate::weights::{Tensor, WeightBank};

/// Layer widths and switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StabilizerConfig {
    /// Channels of the disparity feature.
    pub feature: usize,
    /// Channels of each hidden state.
    pub hidden: usize,
    /// Channels of the fusion head's inner layer.
    pub fusion: usize,
    /// Share one propagation encoder between both sweeps.
    pub tied: bool,
    /// Standardize disparities per sequence before encoding and rescale the
    /// residual afterwards.
    pub normalize: bool,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        Self {
            feature: 16,
            hidden: 16,
            fusion: 16,
            tied: true,
            normalize: false,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature == 0 || self.hidden == 0 || self.fusion == 0 {
            return Err(Error::invalid("stabilizer widths must be positive"));
        }
        Ok(())
    }
}

const FE1: usize = 0;
const FE2: usize = 1;
const PF1: usize = 2;
const PF2: usize = 3;
const FU1: usize = 4;
const FU2: usize = 5;
const PB1: usize = 6;
const PB2: usize = 7;

/// Weight-bank key of the normalization switch.
pub const NORMALIZE_KEY: &str = "stabilizer.normalize";

/// Stabilizer parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Stabilizer<T: Real = f32> {
    config: StabilizerConfig,
    /// Indexed by the layer constants above; the split backward encoder
    /// occupies the last two slots only when untied.
    convs: Vec<Conv2d<T>>,
}

/// Hidden features of both sweeps, one entry per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationState<T: Real = f32> {
    pub forward: Vec<ChannelField<T>>,
    pub backward: Vec<ChannelField<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizerOutput<T: Real = f32> {
    pub residual: Vec<ScalarField<T>>,
    pub corrected: Vec<ScalarField<T>>,
    pub state: PropagationState<T>,
}

/// Intermediates recorded by [`Stabilizer::forward_with_tape`].
pub struct StabilizerTape<T: Real> {
    len: usize,
    dims: (usize, usize),
    scale: T,
    released: bool,
    fe_in: Vec<ChannelField<T>>,
    fe_mid: Vec<ChannelField<T>>,
    feat: Vec<ChannelField<T>>,
    fwd_in: Vec<ChannelField<T>>,
    fwd_mid: Vec<ChannelField<T>>,
    bwd_in: Vec<ChannelField<T>>,
    bwd_mid: Vec<ChannelField<T>>,
    fu_in: Vec<ChannelField<T>>,
    fu_mid: Vec<ChannelField<T>>,
    fu_out: Vec<ChannelField<T>>,
    state: PropagationState<T>,
    plan_prev: Vec<WarpPlan<T>>,
    plan_next: Vec<WarpPlan<T>>,
}

impl<T: Real> StabilizerTape<T> {
    /// Drops the stored activations. A later reverse pass fails.
    pub fn release(&mut self) {
        self.released = true;
        for v in [
            &mut self.fe_in,
            &mut self.fe_mid,
            &mut self.feat,
            &mut self.fwd_in,
            &mut self.fwd_mid,
            &mut self.bwd_in,
            &mut self.bwd_mid,
            &mut self.fu_in,
            &mut self.fu_mid,
            &mut self.fu_out,
        ] {
            v.clear();
        }
        self.state.forward.clear();
        self.state.backward.clear();
        self.plan_prev.clear();
        self.plan_next.clear();
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Weight gradients, in the same layer order as the model.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilizerGrads<T: Real = f32> {
    convs: Vec<Conv2dGrad<T>>,
}

impl<T: Real> StabilizerGrads<T> {
    /// All gradient values in [`Stabilizer::params`] order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for g in &self.convs {
            out.extend_from_slice(&g.weight);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|v| *v == T::zero())
    }

    /// Gradient tensors under the model's weight names.
    pub fn to_bank(&self, model: &Stabilizer<T>) -> WeightBank {
        let mut bank = WeightBank::default();
        for ((name, conv), g) in model
            .layer_names()
            .iter()
            .zip(&model.convs)
            .zip(&self.convs)
        {
            let mut c = conv.clone();
            c.weight.clone_from(&g.weight);
            c.bias.clone_from(&g.bias);
            c.store(&mut bank, name);
        }
        bank
    }
}

fn tanh_init<T: Real>(
    rng: &mut ChaCha8Rng,
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    gain: f64,
) -> Conv2d<T> {
    let mut c = Conv2d::zeros(kh, kw, cin, cout, 1);
    let bound = gain * (6.0 / ((kh * kw) as f64 * (cin + cout) as f64)).sqrt();
    for w in &mut c.weight {
        *w = T::of(rng.random_range(-bound..bound));
    }
    c
}

fn scalar<T: Real>(f: ChannelField<T>) -> ScalarField<T> {
    ScalarField::from_channels(f).expect("single-channel field")
}

impl<T: Real> Stabilizer<T> {
    /// All-zero weights: the residual is identically zero.
    pub fn zeros(config: StabilizerConfig) -> Result<Self> {
        config.validate()?;
        let shapes = Self::conv_shapes(&config);
        let convs = shapes
            .iter()
            .map(|&(cin, cout)| Conv2d::zeros(3, 3, cin, cout, 1))
            .collect();
        Ok(Self { config, convs })
    }

    /// Glorot-uniform weights with zero biases. With `zero_head` the final
    /// fusion layer starts at zero so the initial output equals the input.
    pub fn random(config: StabilizerConfig, seed: u64, zero_head: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = Self::conv_shapes(&config)
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                if zero_head && i == FU2 {
                    Conv2d::zeros(3, 3, cin, cout, 1)
                } else {
                    tanh_init(&mut rng, 3, 3, cin, cout, 1.0)
                }
            })
            .collect();
        Ok(Self { config, convs })
    }

    fn conv_shapes(c: &StabilizerConfig) -> Vec<(usize, usize)> {
        let mut s = vec![
            (3, c.feature),
            (c.feature, c.feature),
            (c.hidden + c.feature, c.hidden),
            (c.hidden, c.hidden),
            (2 * c.hidden, c.fusion),
            (c.fusion, 1),
        ];
        if !c.tied {
            s.push((c.hidden + c.feature, c.hidden));
            s.push((c.hidden, c.hidden));
        }
        s
    }

    fn layer_names(&self) -> Vec<&'static str> {
        let mut names = vec![
            "fe.conv1",
            "fe.conv2",
            "prop.conv1",
            "prop.conv2",
            "fusion.conv1",
            "fusion.conv2",
        ];
        if !self.config.tied {
            names[PF1] = "prop_fwd.conv1";
            names[PF2] = "prop_fwd.conv2";
            names.push("prop_bwd.conv1");
            names.push("prop_bwd.conv2");
        }
        names
    }

    pub fn config(&self) -> &StabilizerConfig {
        &self.config
    }

    /// Tensor names and shapes this configuration needs.
    pub fn tensor_specs(config: &StabilizerConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let model = Self::zeros(*config)?;
        let mut specs = Vec::new();
        for (name, conv) in model.layer_names().iter().zip(&model.convs) {
            specs.push((format!("{name}.w"), conv.weight_shape()));
            specs.push((format!("{name}.b"), vec![conv.cout]));
        }
        Ok(specs)
    }

    /// Loads a model, inferring widths, tying and normalization from the bank.
    pub fn from_bank(bank: &WeightBank) -> Result<Self> {
        let fe = bank.get("fe.conv1.w")?.shape().to_vec();
        let fu = bank.get("fusion.conv1.w")?.shape().to_vec();
        if fe.len() != 4 || fu.len() != 4 {
            return Err(Error::invalid("stabilizer weights must be 4-D kernels"));
        }
        let tied = bank.get("prop.conv1.w").is_ok();
        let hidden = fu[2] / 2;
        let normalize = match bank.get(NORMALIZE_KEY) {
            Ok(t) => t.data().first().is_some_and(|&v| v != 0.0),
            Err(_) => false,
        };
        let config = StabilizerConfig {
            feature: fe[3],
            hidden,
            fusion: fu[3],
            tied,
            normalize,
        };
        config.validate()?;
        let shapes = Self::conv_shapes(&config);
        let names = Self::zeros(config)?.layer_names();
        let convs = names
            .iter()
            .zip(&shapes)
            .map(|(name, &(cin, cout))| Conv2d::from_bank(bank, name, 3, 3, cin, cout, 1))
            .collect::<Result<_>>()?;
        Ok(Self { config, convs })
    }

    pub fn to_bank(&self) -> WeightBank {
        let mut bank = WeightBank::default();
        for (name, conv) in self.layer_names().iter().zip(&self.convs) {
            conv.store(&mut bank, name);
        }
        if self.config.normalize {
            bank.insert(
                NORMALIZE_KEY.into(),
                Tensor::new(vec![1], vec![1.0]).expect("scalar"),
            );
        }
        bank
    }

    pub fn cast<U: Real>(&self) -> Stabilizer<U> {
        Stabilizer {
            config: self.config,
            convs: self.convs.iter().map(Conv2d::cast).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for c in &self.convs {
            out.extend_from_slice(&c.weight);
            out.extend_from_slice(&c.bias);
        }
        out
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} parameter values for a model with {}",
                values.len(),
                self.param_count()
            )));
        }
        let mut i = 0;
        for c in &mut self.convs {
            let n = c.weight.len();
            c.weight.copy_from_slice(&values[i..i + n]);
            i += n;
            let n = c.bias.len();
            c.bias.copy_from_slice(&values[i..i + n]);
            i += n;
        }
        Ok(())
    }

    /// Per-layer parameter ranges within [`params`](Self::params), by name.
    pub fn param_groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut i = 0;
        for (name, c) in self.layer_names().iter().zip(&self.convs) {
            out.push((format!("{name}.w"), i..i + c.weight.len()));
            i += c.weight.len();
            out.push((format!("{name}.b"), i..i + c.bias.len()));
            i += c.bias.len();
        }
        out
    }

    fn prop_layers(&self, backward: bool) -> (usize, usize) {
        if backward && !self.config.tied {
            (PB1, PB2)
        } else {
            (PF1, PF2)
        }
    }

    fn check_inputs(
        &self,
        disparities: &[ScalarField<T>],
        flow_fwd: &[VectorField<T>],
        flow_bwd: &[VectorField<T>],
    ) -> Result<(usize, (usize, usize))> {
        let len = disparities.len();
        if len == 0 {
            return Err(Error::invalid("stabilizer needs at least one frame"));
        }
        let dims = disparities[0].dims();
        if let Some(d) = disparities.iter().find(|d| d.dims() != dims) {
            return Err(Error::shape(format!(
                "disparity frames differ in size: {}x{} vs {}x{}",
                d.height(),
                d.width(),
                dims.0,
                dims.1
            )));
        }
        check_flows(len, flow_fwd, flow_bwd, dims)?;
        Ok((len, dims))
    }

    /// Corrected disparities and the residuals that produced them.
    pub fn forward(
        &self,
        disparities: &[ScalarField<T>],
        flow_fwd: &[VectorField<T>],
        flow_bwd: &[VectorField<T>],
    ) -> Result<StabilizerOutput<T>> {
        Ok(self.forward_with_tape(disparities, flow_fwd, flow_bwd)?.0)
    }

    /// Forward pass that also records what the reverse pass needs.
    pub fn forward_with_tape(
        &self,
        disparities: &[ScalarField<T>],
        flow_fwd: &[VectorField<T>],
        flow_bwd: &[VectorField<T>],
    ) -> Result<(StabilizerOutput<T>, StabilizerTape<T>)> {
        let (len, dims) = self.check_inputs(disparities, flow_fwd, flow_bwd)?;
        let (h, w) = dims;
        let c = &self.config;
        let (shift, scale) = if c.normalize {
            sequence_stats(disparities)
        } else {
            (T::zero(), T::one())
        };
        let norm: Vec<ChannelField<T>> = disparities
            .iter()
            .map(|d| d.as_channels().map(|v| (v - shift) / scale))
            .collect();

        let mut plan_prev = Vec::with_capacity(len);
        let mut plan_next = Vec::with_capacity(len);
        let mut fe_in = Vec::with_capacity(len);
        let mut fe_mid = Vec::with_capacity(len);
        let mut feat = Vec::with_capacity(len);
        for t in 0..len {
            let nb = neighbors(flow_fwd, flow_bwd, t, len, dims);
            let pp = WarpPlan::from_flow(nb.flow_prev.get());
            let pn = WarpPlan::from_flow(nb.flow_next.get());
            let x = ChannelField::concat(&[
                &pp.apply(&norm[nb.prev]),
                &norm[t],
                &pn.apply(&norm[nb.next]),
            ])?;
            let m = self.convs[FE1].forward(&x, Activation::Tanh)?;
            let f = self.convs[FE2].forward(&m, Activation::Tanh)?;
            fe_in.push(x);
            fe_mid.push(m);
            feat.push(f);
            plan_prev.push(pp);
            plan_next.push(pn);
        }

        let zero = ChannelField::zeros(h, w, c.hidden);
        let (f1, f2) = self.prop_layers(false);
        let mut fwd_in = Vec::with_capacity(len);
        let mut fwd_mid = Vec::with_capacity(len);
        let mut forward: Vec<ChannelField<T>> = Vec::with_capacity(len);
        for t in 0..len {
            let carried = if t == 0 {
                zero.clone()
            } else {
                plan_prev[t].apply(&forward[t - 1])
            };
            let x = ChannelField::concat(&[&carried, &feat[t]])?;
            let m = self.convs[f1].forward(&x, Activation::Tanh)?;
            forward.push(self.convs[f2].forward(&m, Activation::Tanh)?);
            fwd_in.push(x);
            fwd_mid.push(m);
        }

        let (b1, b2) = self.prop_layers(true);
        let mut bwd_in = vec![zero.clone(); len];
        let mut bwd_mid = vec![zero.clone(); len];
        let mut backward = vec![zero.clone(); len];
        for t in (0..len).rev() {
            let carried = if t + 1 == len {
                zero.clone()
            } else {
                plan_next[t].apply(&backward[t + 1])
            };
            let x = ChannelField::concat(&[&carried, &feat[t]])?;
            let m = self.convs[b1].forward(&x, Activation::Tanh)?;
            backward[t] = self.convs[b2].forward(&m, Activation::Tanh)?;
            bwd_in[t] = x;
            bwd_mid[t] = m;
        }

        let mut fu_in = Vec::with_capacity(len);
        let mut fu_mid = Vec::with_capacity(len);
        let mut fu_out = Vec::with_capacity(len);
        let mut residual = Vec::with_capacity(len);
        let mut corrected = Vec::with_capacity(len);
        for t in 0..len {
            let x = ChannelField::concat(&[&forward[t], &backward[t]])?;
            let m = self.convs[FU1].forward(&x, Activation::Tanh)?;
            let o = self.convs[FU2].forward(&m, Activation::Identity)?;
            let r = scalar(o.map(|v| v * scale));
            corrected.push(disparities[t].zip_map(&r, |a, b| a + b)?);
            residual.push(r);
            fu_in.push(x);
            fu_mid.push(m);
            fu_out.push(o);
        }

        let state = PropagationState { forward, backward };
        let tape = StabilizerTape {
            len,
            dims,
            scale,
            released: false,
            fe_in,
            fe_mid,
            feat,
            fwd_in,
            fwd_mid,
            bwd_in,
            bwd_mid,
            fu_in,
            fu_mid,
            fu_out,
            state: state.clone(),
            plan_prev,
            plan_next,
        };
        Ok((
            StabilizerOutput {
                residual,
                corrected,
                state,
            },
            tape,
        ))
    }

    /// Reverse pass: weight gradients given dL/d(corrected) per frame
    /// (equivalently dL/d(residual), since the input is a constant).
    pub fn backward(
        &self,
        tape: &StabilizerTape<T>,
        grad: &[ScalarField<T>],
    ) -> Result<StabilizerGrads<T>> {
        if tape.released {
            return Err(Error::MissingIntermediates(
                "stabilizer tape was released".into(),
            ));
        }
        if grad.len() != tape.len {
            return Err(Error::shape(format!(
                "{} output gradients for {} frames",
                grad.len(),
                tape.len
            )));
        }
        if let Some(g) = grad.iter().find(|g| g.dims() != tape.dims) {
            return Err(Error::shape(format!(
                "output gradient is {}x{}, frames are {}x{}",
                g.height(),
                g.width(),
                tape.dims.0,
                tape.dims.1
            )));
        }
        let len = tape.len;
        let hid = self.config.hidden;
        let feat = self.config.feature;
        let mut grads: Vec<Conv2dGrad<T>> = self.convs.iter().map(Conv2dGrad::zeros_like).collect();

        let mut g_fwd = Vec::with_capacity(len);
        let mut g_bwd = Vec::with_capacity(len);
        for t in 0..len {
            let g = grad[t].as_channels().map(|v| v * tape.scale);
            let (gm, gw) = self.convs[FU2].backward(
                &tape.fu_mid[t],
                &tape.fu_out[t],
                &g,
                Activation::Identity,
                true,
            )?;
            grads[FU2].add_assign(&gw);
            let (gx, gw) = self.convs[FU1].backward(
                &tape.fu_in[t],
                &tape.fu_mid[t],
                &gm.expect("input grad"),
                Activation::Tanh,
                true,
            )?;
            grads[FU1].add_assign(&gw);
            let mut parts = gx.expect("input grad").split(&[hid, hid])?.into_iter();
            g_fwd.push(parts.next().expect("forward part"));
            g_bwd.push(parts.next().expect("backward part"));
        }

        let mut g_feat: Vec<ChannelField<T>> =
            vec![ChannelField::zeros(tape.dims.0, tape.dims.1, feat); len];

        // forward sweep, reversed in time
        let (f1, f2) = self.prop_layers(false);
        let mut carry: Option<ChannelField<T>> = None;
        for t in (0..len).rev() {
            let mut g = g_fwd[t].clone();
            if let Some(c) = carry.take() {
                add_into(&mut g, &c);
            }
            let (gx, gf) = self.prop_step_backward(
                f1,
                f2,
                &tape.fwd_in[t],
                &tape.fwd_mid[t],
                &tape.state.forward[t],
                &g,
                &mut grads,
            )?;
            add_into(&mut g_feat[t], &gf);
            if t > 0 {
                carry = Some(tape.plan_prev[t].apply_adjoint(&gx));
            }
        }

        let (b1, b2) = self.prop_layers(true);
        let mut carry: Option<ChannelField<T>> = None;
        for t in 0..len {
            let mut g = g_bwd[t].clone();
            if let Some(c) = carry.take() {
                add_into(&mut g, &c);
            }
            let (gx, gf) = self.prop_step_backward(
                b1,
                b2,
                &tape.bwd_in[t],
                &tape.bwd_mid[t],
                &tape.state.backward[t],
                &g,
                &mut grads,
            )?;
            add_into(&mut g_feat[t], &gf);
            if t + 1 < len {
                carry = Some(tape.plan_next[t].apply_adjoint(&gx));
            }
        }

        for t in 0..len {
            let (gm, gw) = self.convs[FE2].backward(
                &tape.fe_mid[t],
                &tape.feat[t],
                &g_feat[t],
                Activation::Tanh,
                true,
            )?;
            grads[FE2].add_assign(&gw);
            let (_, gw) = self.convs[FE1].backward(
                &tape.fe_in[t],
                &tape.fe_mid[t],
                &gm.expect("input grad"),
                Activation::Tanh,
                false,
            )?;
            grads[FE1].add_assign(&gw);
        }
        Ok(StabilizerGrads { convs: grads })
    }

    /// Backpropagates one encoder application; returns the gradients with
    /// respect to the carried hidden state and the disparity feature.
    #[allow(clippy::too_many_arguments)]
    fn prop_step_backward(
        &self,
        l1: usize,
        l2: usize,
        input: &ChannelField<T>,
        mid: &ChannelField<T>,
        out: &ChannelField<T>,
        grad: &ChannelField<T>,
        grads: &mut [Conv2dGrad<T>],
    ) -> Result<(ChannelField<T>, ChannelField<T>)> {
        let (gm, gw) = self.convs[l2].backward(mid, out, grad, Activation::Tanh, true)?;
        grads[l2].add_assign(&gw);
        let (gx, gw) = self.convs[l1].backward(
            input,
            mid,
            &gm.expect("input grad"),
            Activation::Tanh,
            true,
        )?;
        grads[l1].add_assign(&gw);
        let mut parts = gx
            .expect("input grad")
            .split(&[self.config.hidden, self.config.feature])?
            .into_iter();
        Ok((
            parts.next().expect("hidden part"),
            parts.next().expect("feature part"),
        ))
    }

    /// Plain gradient step `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, grads: &StabilizerGrads<T>, lr: T) {
        for (c, g) in self.convs.iter_mut().zip(&grads.convs) {
            for (w, d) in c.weight.iter_mut().zip(&g.weight) {
                *w -= lr * *d;
            }
            for (b, d) in c.bias.iter_mut().zip(&g.bias) {
                *b -= lr * *d;
            }
        }
    }

    /// Mutable access to one named layer, for tests and hand-built weights.
    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Conv2d<T>> {
        let i = self.layer_names().iter().position(|n| *n == name)?;
        self.convs.get_mut(i)
    }
}

fn add_into<T: Real>(acc: &mut ChannelField<T>, other: &ChannelField<T>) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += *b;
    }
}

/// Mean and standard deviation over every pixel of every frame; the
/// deviation is floored so constant sequences stay finite.
fn sequence_stats<T: Real>(disparities: &[ScalarField<T>]) -> (T, T) {
    let n: usize = disparities.iter().map(|d| d.data().len()).sum();
    let mean = disparities
        .iter()
        .flat_map(|d| d.data())
        .map(|v| v.as_f64())
        .sum::<f64>()
        / n as f64;
    let var = disparities
        .iter()
        .flat_map(|d| d.data())
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (T::of(mean), T::of(var.sqrt().max(1e-3)))
}

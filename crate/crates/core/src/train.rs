//! Toy training loop for the stabilizer.
//!
//! Each step draws a random spatio-temporal crop of the clip, runs the
//! stabilizer with a tape, and descends `spatial + λ·temporal` on the
//! corrected disparities. The crop sequence depends only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ChannelField, Real, ScalarField, VectorField};
use crate::losses::{spatial_loss_grad, temporal_loss_grad, total_loss, LossConfig};
use crate::sequence::{check_flows, TemporalMasks};
use crate::stabilizer::{Stabilizer, StabilizerConfig, StabilizerGrads};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Optimizer {
    #[default]
    Sgd,
    AdamW(AdamW),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub model: StabilizerConfig,
    /// Side of the square spatial crop; `None` trains on whole frames.
    pub crop: Option<usize>,
    /// Frames per training window; `None` uses the whole clip.
    pub window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-2,
            loss: LossConfig::stabilizer(),
            seed: 0,
            optimizer: Optimizer::Sgd,
            model: StabilizerConfig::default(),
            crop: Some(32),
            window: Some(5),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.crop == Some(0) || self.window == Some(0) {
            return Err(Error::invalid("crop and window must be positive"));
        }
        Ok(())
    }
}

/// Losses of one step, measured on that step's crop before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub spatial: f64,
    pub temporal: f64,
    pub total: f64,
}

/// Whole-clip losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClipLoss {
    pub spatial: f64,
    pub temporal: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Stabilizer<f32>,
    pub curve: Vec<CurvePoint>,
    pub initial: ClipLoss,
    pub final_loss: ClipLoss,
}

/// A clip view used for training: noisy input, target, flows and masks.
struct Batch {
    input: Vec<ScalarField>,
    gt: Vec<ScalarField>,
    fwd: Vec<VectorField>,
    bwd: Vec<VectorField>,
    masks: TemporalMasks,
}

fn crop<T: Real>(f: &ChannelField<T>, x0: usize, y0: usize, h: usize, w: usize) -> ChannelField<T> {
    let c = f.channels();
    let mut data = Vec::with_capacity(h * w * c);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            data.extend_from_slice(f.pixel(x, y));
        }
    }
    ChannelField::from_vec_unchecked(h, w, c, data)
}

impl Batch {
    fn sub(&self, t0: usize, len: usize, x0: usize, y0: usize, h: usize, w: usize) -> Batch {
        let s = |f: &ScalarField| {
            ScalarField::from_channels(crop(f.as_channels(), x0, y0, h, w)).expect("one channel")
        };
        let v = |f: &VectorField| {
            VectorField::from_channels(crop(f.as_channels(), x0, y0, h, w)).expect("two channels")
        };
        let frames = t0..t0 + len;
        let pairs = t0..t0 + len - 1;
        let mut to_prev: Vec<ScalarField> =
            self.masks.to_prev[frames.clone()].iter().map(s).collect();
        let mut to_next: Vec<ScalarField> =
            self.masks.to_next[frames.clone()].iter().map(s).collect();
        // the window's edge frames have no neighbor inside it
        to_prev[0] = ScalarField::zeros(h, w);
        to_next[len - 1] = ScalarField::zeros(h, w);
        Batch {
            input: self.input[frames.clone()].iter().map(s).collect(),
            gt: self.gt[frames].iter().map(s).collect(),
            fwd: self.fwd[pairs.clone()].iter().map(v).collect(),
            bwd: self.bwd[pairs].iter().map(v).collect(),
            masks: TemporalMasks { to_prev, to_next },
        }
    }

    /// Losses and, with `grad`, the gradient of the total with respect to
    /// the corrected disparities.
    fn loss(
        &self,
        corrected: &[ScalarField],
        cfg: &LossConfig,
        grad: bool,
    ) -> Result<(ClipLoss, Vec<ScalarField>)> {
        let predictions = vec![corrected.to_vec()];
        let (spatial, mut gs) = spatial_loss_grad(&predictions, &self.gt, cfg.gamma)?;
        let (temporal, gt) = temporal_loss_grad(corrected, &self.fwd, &self.bwd, &self.masks)?;
        let total = total_loss(spatial, temporal, cfg.lambda);
        if !total.is_finite() {
            return Err(Error::Numeric(format!("training loss became {total}")));
        }
        let mut g = Vec::new();
        if grad {
            let lambda = cfg.lambda as f32;
            for (a, b) in gs.swap_remove(0).into_iter().zip(&gt) {
                g.push(a.zip_map(b, |x, y| x + lambda * y)?);
            }
        }
        Ok((
            ClipLoss {
                spatial,
                temporal,
                total,
            },
            g,
        ))
    }
}

/// Whole-clip losses of a model's corrected output.
pub fn clip_loss(
    model: &Stabilizer<f32>,
    input: &[ScalarField],
    gt: &[ScalarField],
    flow_fwd: &[VectorField],
    flow_bwd: &[VectorField],
    loss: &LossConfig,
) -> Result<ClipLoss> {
    let batch = full_batch(input, gt, flow_fwd, flow_bwd, loss)?;
    let out = model.forward(&batch.input, &batch.fwd, &batch.bwd)?;
    Ok(batch.loss(&out.corrected, loss, false)?.0)
}

fn full_batch(
    input: &[ScalarField],
    gt: &[ScalarField],
    flow_fwd: &[VectorField],
    flow_bwd: &[VectorField],
    loss: &LossConfig,
) -> Result<Batch> {
    let len = input.len();
    if len == 0 || gt.len() != len {
        return Err(Error::shape(format!(
            "training needs matching non-empty input and target sequences, got {} and {}",
            len,
            gt.len()
        )));
    }
    let dims = input[0].dims();
    check_flows(len, flow_fwd, flow_bwd, dims)?;
    if let Some(f) = input.iter().chain(gt).find(|f| f.dims() != dims) {
        return Err(Error::shape(format!(
            "frame of size {}x{} in a {}x{} clip",
            f.height(),
            f.width(),
            dims.0,
            dims.1
        )));
    }
    Ok(Batch {
        input: input.to_vec(),
        gt: gt.to_vec(),
        fwd: flow_fwd.to_vec(),
        bwd: flow_bwd.to_vec(),
        masks: TemporalMasks::from_flows(flow_fwd, flow_bwd, len, dims, loss.alpha, loss.beta)?,
    })
}

struct AdamState {
    cfg: AdamW,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn step(&mut self, theta: &mut [f32], g: &[f32], lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, &gi), m), v) in theta.iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            let gi = gi as f64;
            *m = c.beta1 * *m + (1.0 - c.beta1) * gi;
            *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps) + c.weight_decay * *p as f64;
            *p -= (lr * update) as f32;
        }
    }
}

/// Trains a stabilizer from a Glorot initialization with a zero output
/// layer, so step 0 is the identity map. `on_step` sees every curve point as
/// it is produced.
pub fn train_stabilizer(
    input: &[ScalarField],
    gt: &[ScalarField],
    flow_fwd: &[VectorField],
    flow_bwd: &[VectorField],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let full = full_batch(input, gt, flow_fwd, flow_bwd, &cfg.loss)?;
    let (h, w) = full.input[0].dims();
    let len = full.input.len();
    let side_h = cfg.crop.map_or(h, |c| c.min(h));
    let side_w = cfg.crop.map_or(w, |c| c.min(w));
    let window = cfg.window.map_or(len, |n| n.min(len));

    let mut model = Stabilizer::<f32>::random(cfg.model, cfg.seed, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
    let mut adam = match cfg.optimizer {
        Optimizer::AdamW(a) => Some(AdamState {
            cfg: a,
            m: vec![0.0; model.param_count()],
            v: vec![0.0; model.param_count()],
            t: 0,
        }),
        Optimizer::Sgd => None,
    };
    let initial = full
        .loss(
            &model.forward(&full.input, &full.fwd, &full.bwd)?.corrected,
            &cfg.loss,
            false,
        )?
        .0;

    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let t0 = rng.random_range(0..=len - window);
        let x0 = rng.random_range(0..=w - side_w);
        let y0 = rng.random_range(0..=h - side_h);
        let whole = (t0, window, x0, y0, side_h, side_w) == (0, len, 0, 0, h, w);
        let cropped;
        let batch = if whole {
            &full
        } else {
            cropped = full.sub(t0, window, x0, y0, side_h, side_w);
            &cropped
        };
        let (out, tape) = model.forward_with_tape(&batch.input, &batch.fwd, &batch.bwd)?;
        let (l, grad) = batch.loss(&out.corrected, &cfg.loss, true)?;
        let grads: StabilizerGrads<f32> = model.backward(&tape, &grad)?;
        match adam.as_mut() {
            None => model.sgd_step(&grads, cfg.lr as f32),
            Some(state) => {
                let mut theta = model.params();
                state.step(&mut theta, &grads.flatten(), cfg.lr);
                model.set_params(&theta)?;
            }
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameters became non-finite at step {step}"
            )));
        }
        let point = CurvePoint {
            step,
            spatial: l.spatial,
            temporal: l.temporal,
            total: l.total,
        };
        on_step(&point);
        curve.push(point);
    }
    let final_loss = full
        .loss(
            &model.forward(&full.input, &full.fwd, &full.bwd)?.corrected,
            &cfg.loss,
            false,
        )?
        .0;
    Ok(TrainOutcome {
        model,
        curve,
        initial,
        final_loss,
    })
}

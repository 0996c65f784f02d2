//! Training objectives: γ-weighted spatial ℓ1 over refinement iterations,
//! flow-aligned temporal ℓ1 with occlusion masks, and their weighted sum.
//!
//! Every per-frame term is a per-pixel mean. Sums run in f64 in a fixed
//! order. The `*_grad` variants return subgradients with sign(0) = 0.

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::field::{Real, ScalarField, VectorField, WarpPlan, DEFAULT_FB_ALPHA, DEFAULT_FB_BETA};
use crate::sequence::{check_flows, TemporalMasks};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossConfig {
    pub fn stabilizer() -> Self {
        Self {
            gamma: 0.9,
            lambda: 0.2,
            alpha: DEFAULT_FB_ALPHA,
            beta: DEFAULT_FB_BETA,
        }
    }

    pub fn stereo() -> Self {
        Self {
            lambda: 0.0,
            ..Self::stabilizer()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("occlusion thresholds must be >= 0"));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::stabilizer()
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_same(a: &ScalarField<impl Real>, b: (usize, usize), what: &str) -> Result<()> {
    if a.dims() != b {
        return Err(Error::shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.0,
            b.1
        )));
    }
    Ok(())
}

/// `Σ_t Σ_n γ^{N−n} · mean |gt − d_n|`, where `predictions[n][t]` is
/// iteration n (0-based, last = final) at frame t.
pub fn spatial_loss<T: Real>(
    predictions: &[Vec<ScalarField<T>>],
    gt: &[ScalarField<T>],
    gamma: f64,
) -> Result<f64> {
    spatial_impl(predictions, gt, gamma, false).map(|(l, _)| l)
}

/// [`spatial_loss`] and its subgradient with respect to every prediction.
pub fn spatial_loss_grad<T: Real>(
    predictions: &[Vec<ScalarField<T>>],
    gt: &[ScalarField<T>],
    gamma: f64,
) -> Result<(f64, Vec<Vec<ScalarField<T>>>)> {
    spatial_impl(predictions, gt, gamma, true)
}

fn spatial_impl<T: Real>(
    predictions: &[Vec<ScalarField<T>>],
    gt: &[ScalarField<T>],
    gamma: f64,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<ScalarField<T>>>)> {
    let n = predictions.len();
    if n == 0 || gt.is_empty() {
        return Err(Error::invalid(
            "spatial loss needs at least one iteration and one frame",
        ));
    }
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for (i, seq) in predictions.iter().enumerate() {
        if seq.len() != gt.len() {
            return Err(Error::shape(format!(
                "iteration {i} has {} frames, ground truth {}",
                seq.len(),
                gt.len()
            )));
        }
        let weight = gamma.powi((n - 1 - i) as i32);
        let mut gseq = Vec::new();
        for (d, g) in seq.iter().zip(gt) {
            check_same(d, g.dims(), "spatial loss")?;
            let px = d.data().len() as f64;
            let sum: f64 = d
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .sum();
            loss += weight * sum / px;
            if want_grad {
                let k = T::of(weight / px);
                gseq.push(d.zip_map(g, |a, b| k * sign(a - b))?);
            }
        }
        grads.push(gseq);
    }
    Ok((loss, if want_grad { grads } else { Vec::new() }))
}

/// Occlusion-masked ℓ1 between each interior frame and its flow-aligned
/// neighbors. Sequences shorter than 3 frames contribute 0.
pub fn temporal_loss<T: Real>(
    disparities: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    flow_bwd: &[VectorField<T>],
    masks: &TemporalMasks<T>,
) -> Result<f64> {
    temporal_impl(disparities, flow_fwd, flow_bwd, masks, false).map(|(l, _)| l)
}

/// [`temporal_loss`] and its subgradient with respect to every frame.
pub fn temporal_loss_grad<T: Real>(
    disparities: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    flow_bwd: &[VectorField<T>],
    masks: &TemporalMasks<T>,
) -> Result<(f64, Vec<ScalarField<T>>)> {
    temporal_impl(disparities, flow_fwd, flow_bwd, masks, true)
}

fn temporal_impl<T: Real>(
    d: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    flow_bwd: &[VectorField<T>],
    masks: &TemporalMasks<T>,
    want_grad: bool,
) -> Result<(f64, Vec<ScalarField<T>>)> {
    let len = d.len();
    if len == 0 {
        return Err(Error::invalid("temporal loss needs at least one frame"));
    }
    let dims = d[0].dims();
    for f in d {
        check_same(f, dims, "temporal loss")?;
    }
    check_flows(len, flow_fwd, flow_bwd, dims)?;
    if masks.to_prev.len() != len || masks.to_next.len() != len {
        return Err(Error::shape(format!(
            "masks cover {} frames, sequence has {len}",
            masks.to_prev.len()
        )));
    }
    for m in masks.to_prev.iter().chain(&masks.to_next) {
        check_same(m, dims, "occlusion mask")?;
    }
    let mut grads: Vec<Vec<T>> = if want_grad {
        vec![vec![T::zero(); dims.0 * dims.1]; len]
    } else {
        Vec::new()
    };
    if len < 3 {
        return Ok((0.0, grads.into_iter().map(|g| field(dims, g)).collect()));
    }
    let px = (dims.0 * dims.1) as f64;
    let k = T::of(1.0 / px);
    let mut loss = 0.0;
    for t in 1..len - 1 {
        let terms = [
            (t - 1, &flow_bwd[t - 1], &masks.to_prev[t]),
            (t + 1, &flow_fwd[t], &masks.to_next[t]),
        ];
        for (src, flow, mask) in terms {
            let plan = WarpPlan::from_flow(flow);
            let aligned = plan.apply(d[src].as_channels());
            let mut sum = 0.0;
            let mut g_aligned = Vec::new();
            for ((a, c), m) in aligned.data().iter().zip(d[t].data()).zip(mask.data()) {
                let diff = *a - *c;
                sum += m.as_f64() * diff.as_f64().abs();
                if want_grad {
                    g_aligned.push(k * *m * sign(diff));
                }
            }
            loss += sum / px;
            if want_grad {
                for (g, ga) in grads[t].iter_mut().zip(&g_aligned) {
                    *g -= *ga;
                }
                let back = plan.apply_adjoint(&field(dims, g_aligned).into_channels());
                for (g, b) in grads[src].iter_mut().zip(back.data()) {
                    *g += *b;
                }
            }
        }
    }
    Ok((loss, grads.into_iter().map(|g| field(dims, g)).collect()))
}

fn field<T: Real>(dims: (usize, usize), data: Vec<T>) -> ScalarField<T> {
    ScalarField::new(dims.0, dims.1, data).expect("finite gradient")
}

/// `spatial + λ · temporal`.
pub fn total_loss(spatial: f64, temporal: f64, lambda: f64) -> f64 {
    spatial + lambda * temporal
}

//! Spatial accuracy and temporal consistency metrics.
//!
//! Temporal metrics compare frame t with frame t+1 aligned onto it by the
//! forward flow `flow_fwd[t]`. Reductions run in f64 in a fixed order.

mod flow;
mod report;
mod ssim;

pub use flow::{BlockMatchFlow, FlowProvider, FlowRequest, FlowRole, PrecomputedFlow};
pub use report::{
    evaluate, Aggregate, EvalOptions, FrameRow, MaskInfo, MetricReport, TransitionRow,
    REPORT_SCHEMA,
};
pub use ssim::ssim;

use crate::error::{Error, Result};
use crate::field::{
    warp_by_flow, warp_scalar_by_flow, ChannelField, Real, ScalarField, VectorField,
};

/// Depth converted from disparity with this floor on the disparity.
pub const DEPTH_EPS: f64 = 1e-3;

/// Photometric gate sharpness.
pub const OPW_SHARPNESS: f64 = 50.0;

/// Relative depth change below which a pixel counts as consistent.
pub const RTC_THRESHOLD: f64 = 1.01;

fn check_pair<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn mask_weight<T: Real>(mask: Option<&ScalarField<T>>, i: usize) -> f64 {
    mask.map_or(1.0, |m| m.data()[i].as_f64())
}

/// Sum of |d − gt| and count of pixels above each threshold, over pixels
/// with a nonzero mask.
fn error_stats<T: Real>(
    d: &ScalarField<T>,
    gt: &ScalarField<T>,
    mask: Option<&ScalarField<T>>,
    thresholds: &[f64],
) -> (f64, Vec<usize>, usize) {
    let mut sum = 0.0;
    let mut over = vec![0; thresholds.len()];
    let mut n = 0;
    for (i, (a, b)) in d.data().iter().zip(gt.data()).enumerate() {
        if mask_weight(mask, i) == 0.0 {
            continue;
        }
        let e = (a.as_f64() - b.as_f64()).abs();
        sum += e;
        n += 1;
        for (o, &th) in over.iter_mut().zip(thresholds) {
            if e > th {
                *o += 1;
            }
        }
    }
    (sum, over, n)
}

fn check_mask<T: Real>(mask: Option<&ScalarField<T>>, dims: (usize, usize)) -> Result<()> {
    if let Some(m) = mask {
        if m.dims() != dims {
            return Err(Error::shape("mask size differs from the disparity"));
        }
    }
    Ok(())
}

/// Mean absolute disparity error over valid pixels.
pub fn epe<T: Real>(
    d: &ScalarField<T>,
    gt: &ScalarField<T>,
    valid: Option<&ScalarField<T>>,
) -> Result<f64> {
    check_pair(d, gt, "epe")?;
    check_mask(valid, d.dims())?;
    let (sum, _, n) = error_stats(d, gt, valid, &[]);
    if n == 0 {
        return Err(Error::EmptyValidSet("epe".into()));
    }
    Ok(sum / n as f64)
}

/// Percentage of valid pixels whose error exceeds `n` (strictly).
pub fn bad_rate<T: Real>(
    d: &ScalarField<T>,
    gt: &ScalarField<T>,
    valid: Option<&ScalarField<T>>,
    n: f64,
) -> Result<f64> {
    check_pair(d, gt, "bad rate")?;
    check_mask(valid, d.dims())?;
    let (_, over, count) = error_stats(d, gt, valid, &[n]);
    if count == 0 {
        return Err(Error::EmptyValidSet("bad rate".into()));
    }
    Ok(100.0 * over[0] as f64 / count as f64)
}

/// Per-transition temporal error `|(d^t − d^{t+1}) − (gt^t − gt^{t+1})|`.
fn temporal_errors<T: Real>(d: &[ScalarField<T>], gt: &[ScalarField<T>], t: usize) -> Vec<f64> {
    d[t].data()
        .iter()
        .zip(d[t + 1].data())
        .zip(gt[t].data().iter().zip(gt[t + 1].data()))
        .map(|((a0, a1), (g0, g1))| {
            ((a0.as_f64() - a1.as_f64()) - (g0.as_f64() - g1.as_f64())).abs()
        })
        .collect()
}

fn check_sequences<T: Real>(d: &[ScalarField<T>], gt: &[ScalarField<T>], what: &str) -> Result<()> {
    if d.len() != gt.len() {
        return Err(Error::shape(format!(
            "{what}: {} predicted frames, {} ground truth",
            d.len(),
            gt.len()
        )));
    }
    if d.len() < 2 {
        return Err(Error::invalid(format!("{what} needs at least 2 frames")));
    }
    for (a, b) in d.iter().zip(gt) {
        check_pair(a, b, what)?;
        check_pair(a, &d[0], what)?;
    }
    Ok(())
}

fn check_masks<T: Real>(
    valid: Option<&[ScalarField<T>]>,
    n: usize,
    dims: (usize, usize),
) -> Result<()> {
    if let Some(v) = valid {
        if v.len() != n {
            return Err(Error::shape(format!(
                "{} masks for {n} transitions",
                v.len()
            )));
        }
        for m in v {
            check_mask(Some(m), dims)?;
        }
    }
    Ok(())
}

/// Temporal end-point error pooled over transitions and valid pixels.
/// `valid` holds one mask per transition.
pub fn tepe<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    valid: Option<&[ScalarField<T>]>,
) -> Result<f64> {
    temporal_stats(d, gt, valid, &[]).map(|(v, _)| v)
}

/// Percentage of valid (transition, pixel) pairs whose temporal error exceeds `n`.
pub fn temporal_bad_rate<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    valid: Option<&[ScalarField<T>]>,
    n: f64,
) -> Result<f64> {
    temporal_stats(d, gt, valid, &[n]).map(|(_, r)| r[0])
}

fn temporal_stats<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    valid: Option<&[ScalarField<T>]>,
    thresholds: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_sequences(d, gt, "tepe")?;
    check_masks(valid, d.len() - 1, d[0].dims())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut over = vec![0usize; thresholds.len()];
    for t in 0..d.len() - 1 {
        let mask = valid.map(|v| &v[t]);
        for (i, e) in temporal_errors(d, gt, t).into_iter().enumerate() {
            if mask_weight(mask, i) == 0.0 {
                continue;
            }
            sum += e;
            n += 1;
            for (o, &th) in over.iter_mut().zip(thresholds) {
                if e > th {
                    *o += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyValidSet("tepe".into()));
    }
    Ok((
        sum / n as f64,
        over.iter().map(|&o| 100.0 * o as f64 / n as f64).collect(),
    ))
}

/// Sum and count of one transition's gated warping error.
pub(crate) struct OpwTerm {
    pub sum: f64,
    pub count: usize,
}

/// Photometric gate `clamp(exp(−50·mean_c |Î^{t+1} − I^t|), 0, 1)` per pixel.
pub fn photometric_gate<T: Real>(
    image: &ChannelField<T>,
    next_image: &ChannelField<T>,
    flow: &VectorField<T>,
) -> Result<Vec<f64>> {
    let aligned = warp_by_flow(next_image, flow)?;
    if aligned.dims() != image.dims() || aligned.channels() != image.channels() {
        return Err(Error::shape("photometric gate: images differ in shape"));
    }
    let c = image.channels();
    Ok(image
        .data()
        .chunks_exact(c)
        .zip(aligned.data().chunks_exact(c))
        .map(|(a, b)| {
            let diff = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
                .sum::<f64>()
                / c as f64;
            (-OPW_SHARPNESS * diff).exp().clamp(0.0, 1.0)
        })
        .collect())
}

pub(crate) fn opw_term<T: Real>(
    depth: &ScalarField<T>,
    next_depth: &ScalarField<T>,
    gate: &[f64],
    flow: &VectorField<T>,
    valid: Option<&ScalarField<T>>,
    max_depth: Option<f64>,
) -> Result<OpwTerm> {
    let aligned = warp_scalar_by_flow(next_depth, flow)?;
    let mut sum = 0.0;
    let mut count = 0;
    for (i, (a, d)) in aligned.data().iter().zip(depth.data()).enumerate() {
        if mask_weight(valid, i) == 0.0 {
            continue;
        }
        let d = d.as_f64();
        if max_depth.is_some_and(|m| d >= m) {
            continue;
        }
        sum += gate[i] * (a.as_f64() - d).abs();
        count += 1;
    }
    Ok(OpwTerm { sum, count })
}

/// Flow-based warping error of a depth sequence, in depth units: the mean
/// over transitions and valid pixels of `O·|D̂^{t+1} − D^t|`. With
/// `max_depth = Some(n)` only pixels with `D^t < n` count.
pub fn opw<T: Real>(
    depth: &[ScalarField<T>],
    images: &[ChannelField<T>],
    flow_fwd: &[VectorField<T>],
    valid: Option<&[ScalarField<T>]>,
    max_depth: Option<f64>,
) -> Result<f64> {
    let len = depth.len();
    if len < 2 {
        return Err(Error::invalid("opw needs at least 2 frames"));
    }
    if images.len() != len || flow_fwd.len() != len - 1 {
        return Err(Error::shape(format!(
            "opw: {len} depth frames, {} images, {} flows",
            images.len(),
            flow_fwd.len()
        )));
    }
    check_masks(valid, len - 1, depth[0].dims())?;
    let mut sum = 0.0;
    let mut count = 0;
    for t in 0..len - 1 {
        let gate = photometric_gate(&images[t], &images[t + 1], &flow_fwd[t])?;
        let term = opw_term(
            &depth[t],
            &depth[t + 1],
            &gate,
            &flow_fwd[t],
            valid.map(|v| &v[t]),
            max_depth,
        )?;
        sum += term.sum;
        count += term.count;
    }
    if count == 0 {
        return Err(Error::EmptyValidSet("opw".into()));
    }
    Ok(sum / count as f64)
}

/// Fraction of valid pixels whose aligned depth ratio stays strictly below
/// 1.01, or `None` when no pixel is valid. The ratio is compared in the
/// field's own precision.
pub(crate) fn rtc_term<T: Real>(
    depth: &ScalarField<T>,
    next_depth: &ScalarField<T>,
    flow: &VectorField<T>,
    valid: Option<&ScalarField<T>>,
) -> Result<Option<f64>> {
    let aligned = warp_scalar_by_flow(next_depth, flow)?;
    let limit = T::of(RTC_THRESHOLD);
    let mut hit = 0usize;
    let mut n = 0usize;
    for (i, (&a, &d)) in aligned.data().iter().zip(depth.data()).enumerate() {
        if mask_weight(valid, i) == 0.0 {
            continue;
        }
        n += 1;
        if (a / d).max(d / a) < limit {
            hit += 1;
        }
    }
    Ok((n > 0).then(|| hit as f64 / n as f64))
}

/// Mean over transitions of the consistent-pixel fraction. Transitions
/// without valid pixels are skipped; if none remain the set is empty.
pub fn rtc<T: Real>(
    depth: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    valid: Option<&[ScalarField<T>]>,
) -> Result<f64> {
    let len = depth.len();
    if len < 2 || flow_fwd.len() != len - 1 {
        return Err(Error::shape(format!(
            "rtc: {len} frames with {} flows",
            flow_fwd.len()
        )));
    }
    check_masks(valid, len - 1, depth[0].dims())?;
    let terms: Vec<f64> = (0..len - 1)
        .map(|t| rtc_term(&depth[t], &depth[t + 1], &flow_fwd[t], valid.map(|v| &v[t])))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyValidSet("rtc".into()));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// `|D̂^{t+1} − D^t|` in f64.
pub(crate) fn temporal_change<T: Real>(
    depth: &ScalarField<T>,
    next_depth: &ScalarField<T>,
    flow: &VectorField<T>,
) -> Result<ScalarField<f64>> {
    let aligned = warp_scalar_by_flow(next_depth, flow)?;
    ScalarField::new(
        depth.height(),
        depth.width(),
        aligned
            .data()
            .iter()
            .zip(depth.data())
            .map(|(a, d)| (a.as_f64() - d.as_f64()).abs())
            .collect(),
    )
}

fn check_temporal_inputs<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    what: &str,
) -> Result<()> {
    check_sequences(d, gt, what)?;
    if flow_fwd.len() != d.len() - 1 {
        return Err(Error::shape(format!(
            "{what}: {} frames with {} flows",
            d.len(),
            flow_fwd.len()
        )));
    }
    Ok(())
}

/// SSIM between predicted and true temporal changes, averaged over
/// transitions. Works on any per-pixel quantity (depth or disparity).
pub fn tcc<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
) -> Result<f64> {
    check_temporal_inputs(d, gt, flow_fwd, "tcc")?;
    let mut total = 0.0;
    for t in 0..d.len() - 1 {
        let a = temporal_change(&d[t], &d[t + 1], &flow_fwd[t])?;
        let b = temporal_change(&gt[t], &gt[t + 1], &flow_fwd[t])?;
        total += ssim(&a, &b)?;
    }
    Ok(total / (d.len() - 1) as f64)
}

pub(crate) fn tcm_term<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    t: usize,
    provider: &dyn FlowProvider,
) -> Result<f64> {
    let pair = |seq: &[ScalarField<T>]| -> Result<(ScalarField<f64>, ScalarField<f64>)> {
        Ok((
            seq[t].cast(),
            warp_scalar_by_flow(&seq[t + 1], &flow_fwd[t])?.cast(),
        ))
    };
    let (p0, p1) = pair(d)?;
    let (g0, g1) = pair(gt)?;
    let fp = provider.flow(&FlowRequest {
        transition: t,
        role: FlowRole::Prediction,
        from: &p0,
        to: &p1,
    })?;
    let fg = provider.flow(&FlowRequest {
        transition: t,
        role: FlowRole::GroundTruth,
        from: &g0,
        to: &g1,
    })?;
    let comp = |f: &VectorField<f64>, c: usize| f.as_channels().channel(c);
    Ok(0.5 * (ssim(&comp(&fp, 0), &comp(&fg, 0))? + ssim(&comp(&fp, 1), &comp(&fg, 1))?))
}

/// SSIM between flows estimated on (D^t, D̂^{t+1}) for the prediction and
/// for the ground truth, per flow component, averaged over transitions.
pub fn tcm<T: Real>(
    d: &[ScalarField<T>],
    gt: &[ScalarField<T>],
    flow_fwd: &[VectorField<T>],
    provider: &dyn FlowProvider,
) -> Result<f64> {
    check_temporal_inputs(d, gt, flow_fwd, "tcm")?;
    let mut total = 0.0;
    for t in 0..d.len() - 1 {
        total += tcm_term(d, gt, flow_fwd, t, provider)?;
    }
    Ok(total / (d.len() - 1) as f64)
}

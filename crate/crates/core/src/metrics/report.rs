//! Full evaluation of one predicted disparity sequence.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    error_stats, opw_term, photometric_gate, rtc_term, ssim, tcm_term, temporal_change,
    temporal_errors, BlockMatchFlow, FlowProvider, DEPTH_EPS,
};
use crate::error::{Error, Result};
use crate::field::{
    disparity_to_depth, fb_occlusion_mask, Calibration, ScalarField, DEFAULT_FB_ALPHA,
    DEFAULT_FB_BETA,
};
use crate::sequence::SequenceBundle;

pub const REPORT_SCHEMA: u32 = 1;

pub struct EvalOptions<'a> {
    /// Thresholds in pixels for δₙ and δᵗₙ.
    pub bad_thresholds: Vec<f64>,
    /// Depth limits in meters for OPWₙ.
    pub opw_ranges: Vec<f64>,
    pub fb_alpha: f64,
    pub fb_beta: f64,
    pub depth_eps: f64,
    pub flow_provider: &'a dyn FlowProvider,
}

static BUILTIN_FLOW: BlockMatchFlow = BlockMatchFlow {
    levels: 3,
    radius: 2,
    half_window: 2,
};

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            bad_thresholds: vec![1.0, 3.0],
            opw_ranges: vec![100.0, 30.0],
            fb_alpha: DEFAULT_FB_ALPHA,
            fb_beta: DEFAULT_FB_BETA,
            depth_eps: DEPTH_EPS,
            flow_provider: &BUILTIN_FLOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskInfo {
    /// Pixels entering EPE and δₙ.
    pub spatial: String,
    /// Pixels entering TEPE and δᵗₙ.
    pub temporal_error: String,
    /// Pixels entering OPW and RTC.
    pub warping: String,
    pub fb_alpha: f64,
    pub fb_beta: f64,
    pub depth_eps: f64,
}

/// Scalars over the whole clip. Temporal entries are `None` for
/// single-frame clips; OPWₙ entries are `None` when no pixel is in range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub epe: f64,
    /// δₙ in percent, keyed by `"{n}px"`.
    pub bad: BTreeMap<String, f64>,
    pub tepe: Option<f64>,
    pub temporal_bad: BTreeMap<String, f64>,
    pub opw: Option<f64>,
    /// OPWₙ keyed by `"{n}m"`.
    pub opw_range: BTreeMap<String, Option<f64>>,
    pub rtc: Option<f64>,
    pub tcc: Option<f64>,
    pub tcm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: usize,
    pub epe: f64,
    pub bad: BTreeMap<String, f64>,
}

/// Metrics of the transition from `frame` to `frame + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub frame: usize,
    pub tepe: f64,
    pub temporal_bad: BTreeMap<String, f64>,
    pub opw: Option<f64>,
    pub opw_range: BTreeMap<String, Option<f64>>,
    pub rtc: Option<f64>,
    pub tcc: f64,
    pub tcm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: u32,
    pub clip_id: String,
    pub prediction: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub calibration: Calibration,
    pub masks: MaskInfo,
    pub aggregate: Aggregate,
    pub per_frame: Vec<FrameRow>,
    pub per_transition: Vec<TransitionRow>,
}

fn px_key(n: f64) -> String {
    format!("{n}px")
}

fn m_key(n: f64) -> String {
    format!("{n}m")
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

struct TransitionRaw {
    row: TransitionRow,
    tepe_sum: f64,
    tepe_over: Vec<usize>,
    pixels: usize,
    opw: (f64, usize),
    opw_range: Vec<(f64, usize)>,
}

/// Evaluates prediction `key` of `bundle` against its ground truth.
///
/// Spatial and temporal disparity errors use every pixel. OPW and RTC use
/// pixels that pass the forward-backward flow consistency check.
pub fn evaluate(
    bundle: &SequenceBundle,
    key: &str,
    options: &EvalOptions<'_>,
) -> Result<MetricReport> {
    bundle.validate()?;
    let pred = bundle.prediction(key)?;
    let gt = &bundle.disp_gt;
    let len = bundle.len();
    let (h, w) = bundle.dims();
    if options
        .bad_thresholds
        .iter()
        .chain(&options.opw_ranges)
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::invalid("metric thresholds must be positive"));
    }

    let per_frame: Vec<FrameRow> = (0..len)
        .map(|t| {
            let (sum, over, n) =
                error_stats::<f32>(&pred[t], &gt[t], None, &options.bad_thresholds);
            FrameRow {
                frame: t,
                epe: sum / n as f64,
                bad: options
                    .bad_thresholds
                    .iter()
                    .zip(&over)
                    .map(|(&th, &o)| (px_key(th), 100.0 * o as f64 / n as f64))
                    .collect(),
            }
        })
        .collect();
    let epe = per_frame.iter().map(|r| r.epe).sum::<f64>() / len as f64;
    let bad = options
        .bad_thresholds
        .iter()
        .map(|&th| {
            let k = px_key(th);
            (
                k.clone(),
                per_frame.iter().map(|r| r.bad[&k]).sum::<f64>() / len as f64,
            )
        })
        .collect();

    let to_depth = |d: &ScalarField| disparity_to_depth(d, &bundle.calibration, options.depth_eps);
    let depth = pred.iter().map(to_depth).collect::<Result<Vec<_>>>()?;
    let depth_gt = gt.iter().map(to_depth).collect::<Result<Vec<_>>>()?;

    let raws: Vec<TransitionRaw> = (0..len.saturating_sub(1))
        .into_par_iter()
        .map(|t| -> Result<TransitionRaw> {
            let flow = &bundle.flow_fwd[t];
            let valid =
                fb_occlusion_mask(flow, &bundle.flow_bwd[t], options.fb_alpha, options.fb_beta)?;
            let errors = temporal_errors(pred, gt, t);
            let mut over = vec![0usize; options.bad_thresholds.len()];
            for e in &errors {
                for (o, th) in over.iter_mut().zip(&options.bad_thresholds) {
                    if e > th {
                        *o += 1;
                    }
                }
            }
            let tepe_sum: f64 = errors.iter().sum();
            let pixels = errors.len();

            let gate = photometric_gate(&bundle.left[t], &bundle.left[t + 1], flow)?;
            let opw = opw_term(&depth[t], &depth[t + 1], &gate, flow, Some(&valid), None)?;
            let opw_range = options
                .opw_ranges
                .iter()
                .map(|&n| {
                    opw_term(&depth[t], &depth[t + 1], &gate, flow, Some(&valid), Some(n))
                        .map(|o| (o.sum, o.count))
                })
                .collect::<Result<Vec<_>>>()?;
            let rtc = rtc_term(&depth[t], &depth[t + 1], flow, Some(&valid))?;
            let tcc = ssim(
                &temporal_change(&depth[t], &depth[t + 1], flow)?,
                &temporal_change(&depth_gt[t], &depth_gt[t + 1], flow)?,
            )?;
            let tcm = tcm_term(
                &depth,
                &depth_gt,
                &bundle.flow_fwd,
                t,
                options.flow_provider,
            )?;
            let ratio = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
            Ok(TransitionRaw {
                row: TransitionRow {
                    frame: t,
                    tepe: tepe_sum / pixels as f64,
                    temporal_bad: options
                        .bad_thresholds
                        .iter()
                        .zip(&over)
                        .map(|(&th, &o)| (px_key(th), 100.0 * o as f64 / pixels as f64))
                        .collect(),
                    opw: ratio(opw.sum, opw.count),
                    opw_range: options
                        .opw_ranges
                        .iter()
                        .zip(&opw_range)
                        .map(|(&n, &(s, c))| (m_key(n), ratio(s, c)))
                        .collect(),
                    rtc,
                    tcc,
                    tcm,
                },
                tepe_sum,
                tepe_over: over,
                pixels,
                opw: (opw.sum, opw.count),
                opw_range,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let temporal = !raws.is_empty();
    let pooled = |f: &dyn Fn(&TransitionRaw) -> (f64, usize)| -> Option<f64> {
        let (s, n) = raws
            .iter()
            .map(f)
            .fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
        (n > 0).then(|| s / n as f64)
    };
    let aggregate = Aggregate {
        epe,
        bad,
        tepe: pooled(&|r| (r.tepe_sum, r.pixels)),
        temporal_bad: if temporal {
            options
                .bad_thresholds
                .iter()
                .enumerate()
                .map(|(i, &th)| {
                    let over: usize = raws.iter().map(|r| r.tepe_over[i]).sum();
                    let n: usize = raws.iter().map(|r| r.pixels).sum();
                    (px_key(th), 100.0 * over as f64 / n as f64)
                })
                .collect()
        } else {
            BTreeMap::new()
        },
        opw: pooled(&|r| r.opw),
        opw_range: options
            .opw_ranges
            .iter()
            .enumerate()
            .map(|(i, &n)| (m_key(n), pooled(&|r| r.opw_range[i])))
            .collect(),
        rtc: mean(raws.iter().filter_map(|r| r.row.rtc)),
        tcc: mean(raws.iter().map(|r| r.row.tcc)),
        tcm: mean(raws.iter().map(|r| r.row.tcm)),
    };

    Ok(MetricReport {
        schema: REPORT_SCHEMA,
        clip_id: bundle.clip_id.clone(),
        prediction: key.to_string(),
        frames: len,
        height: h,
        width: w,
        calibration: bundle.calibration,
        masks: MaskInfo {
            spatial: "all pixels".into(),
            temporal_error: "all pixels".into(),
            warping: "forward-backward flow consistency".into(),
            fb_alpha: options.fb_alpha,
            fb_beta: options.fb_beta,
            depth_eps: options.depth_eps,
        },
        aggregate,
        per_frame,
        per_transition: raws.into_iter().map(|r| r.row).collect(),
    })
}

//! Stereo video clips and the neighbor bookkeeping shared by every temporal
//! module.
//!
//! Flow convention: `flow_fwd[t]` lives on frame `t` and points into frame
//! `t + 1`; `flow_bwd[t]` lives on frame `t + 1` and points back into frame
//! `t`. Backward warping frame `t + 1` by `flow_fwd[t]` therefore aligns it
//! to frame `t`, and warping frame `t` by `flow_bwd[t]` aligns it to `t + 1`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{fb_occlusion_mask, Calibration, ChannelField, Real, ScalarField, VectorField};

/// One stereo clip with flows, disparities and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBundle {
    pub clip_id: String,
    pub left: Vec<ChannelField>,
    pub right: Vec<ChannelField>,
    pub flow_fwd: Vec<VectorField>,
    pub flow_bwd: Vec<VectorField>,
    pub disp_gt: Vec<ScalarField>,
    /// Named predicted disparity sequences (e.g. a noisy estimate).
    pub predictions: BTreeMap<String, Vec<ScalarField>>,
    /// Per-frame temporal validity (1 = pixel of frame t visible in t+1), T−1 entries.
    pub valid_fwd: Option<Vec<ScalarField>>,
    /// Per-frame temporal validity on frame t+1 towards t, T−1 entries.
    pub valid_bwd: Option<Vec<ScalarField>>,
    /// Left-view pixels visible in the right view, T entries.
    pub valid_stereo: Option<Vec<ScalarField>>,
    pub calibration: Calibration,
    pub frame_rate: f64,
}

impl SequenceBundle {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.left.first().map(|f| f.dims()).unwrap_or((0, 0))
    }

    pub fn prediction(&self, key: &str) -> Result<&[ScalarField]> {
        self.predictions
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no prediction named `{key}`")))
    }

    /// Checks frame counts and raster sizes of every member.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        let dims = self.dims();
        let check = |what: &str, n: usize, expected: usize| -> Result<()> {
            if n != expected {
                return Err(Error::shape(format!(
                    "{what}: {n} frames, expected {expected}"
                )));
            }
            Ok(())
        };
        check("right", self.right.len(), t)?;
        check("flow_fwd", self.flow_fwd.len(), t - 1)?;
        check("flow_bwd", self.flow_bwd.len(), t - 1)?;
        check("disp_gt", self.disp_gt.len(), t)?;
        for (k, v) in &self.predictions {
            check(k, v.len(), t)?;
        }
        let mut all: Vec<(&str, (usize, usize))> = Vec::new();
        all.extend(self.left.iter().map(|f| ("left", f.dims())));
        all.extend(self.right.iter().map(|f| ("right", f.dims())));
        all.extend(
            self.flow_fwd
                .iter()
                .chain(&self.flow_bwd)
                .map(|f| ("flow", f.dims())),
        );
        all.extend(self.disp_gt.iter().map(|f| ("disp_gt", f.dims())));
        all.extend(
            self.predictions
                .values()
                .flatten()
                .map(|f| ("prediction", f.dims())),
        );
        for (what, d) in all {
            if d != dims {
                return Err(Error::shape(format!(
                    "{what} is {}x{}, clip is {}x{}",
                    d.0, d.1, dims.0, dims.1
                )));
            }
        }
        self.calibration.validate()
    }
}

/// Neighbor frame indices and the flows that align them onto a center frame.
///
/// At the sequence ends the missing neighbor is the center frame itself with
/// zero flow.
pub struct Neighbors<'a, T: Real> {
    pub prev: usize,
    pub next: usize,
    /// Flow on the center grid pointing into the previous frame.
    pub flow_prev: FlowRef<'a, T>,
    /// Flow on the center grid pointing into the next frame.
    pub flow_next: FlowRef<'a, T>,
}

pub enum FlowRef<'a, T: Real> {
    Borrowed(&'a VectorField<T>),
    Zero(VectorField<T>),
}

impl<T: Real> FlowRef<'_, T> {
    pub fn get(&self) -> &VectorField<T> {
        match self {
            FlowRef::Borrowed(f) => f,
            FlowRef::Zero(f) => f,
        }
    }
}

pub fn neighbors<'a, T: Real>(
    flow_fwd: &'a [VectorField<T>],
    flow_bwd: &'a [VectorField<T>],
    t: usize,
    len: usize,
    dims: (usize, usize),
) -> Neighbors<'a, T> {
    let zero = || FlowRef::Zero(VectorField::zeros(dims.0, dims.1));
    let (prev, flow_prev) = if t == 0 {
        (0, zero())
    } else {
        (t - 1, FlowRef::Borrowed(&flow_bwd[t - 1]))
    };
    let (next, flow_next) = if t + 1 >= len {
        (t, zero())
    } else {
        (t + 1, FlowRef::Borrowed(&flow_fwd[t]))
    };
    Neighbors {
        prev,
        next,
        flow_prev,
        flow_next,
    }
}

pub(crate) fn check_flows<T: Real>(
    len: usize,
    flow_fwd: &[VectorField<T>],
    flow_bwd: &[VectorField<T>],
    dims: (usize, usize),
) -> Result<()> {
    let expected = len.saturating_sub(1);
    if flow_fwd.len() != expected || flow_bwd.len() != expected {
        return Err(Error::shape(format!(
            "{len} frames need {expected} flows per direction, got {} forward and {} backward",
            flow_fwd.len(),
            flow_bwd.len()
        )));
    }
    for f in flow_fwd.iter().chain(flow_bwd) {
        if f.dims() != dims {
            return Err(Error::shape(format!(
                "flow is {}x{}, frames are {}x{}",
                f.height(),
                f.width(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(())
}

/// Flow-consistency masks for aligning each frame's neighbors onto it.
#[derive(Clone, Debug)]
pub struct TemporalMasks<T: Real = f32> {
    /// `to_prev[t]`: pixels of frame t whose correspondence in t−1 is consistent.
    pub to_prev: Vec<ScalarField<T>>,
    /// `to_next[t]`: pixels of frame t whose correspondence in t+1 is consistent.
    pub to_next: Vec<ScalarField<T>>,
}

impl<T: Real> TemporalMasks<T> {
    /// Masks from forward-backward consistency. Edge frames get all-zero
    /// masks on the missing side.
    pub fn from_flows(
        flow_fwd: &[VectorField<T>],
        flow_bwd: &[VectorField<T>],
        len: usize,
        dims: (usize, usize),
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        check_flows(len, flow_fwd, flow_bwd, dims)?;
        let mut to_prev = Vec::with_capacity(len);
        let mut to_next = Vec::with_capacity(len);
        for t in 0..len {
            to_prev.push(if t == 0 {
                ScalarField::zeros(dims.0, dims.1)
            } else {
                fb_occlusion_mask(&flow_bwd[t - 1], &flow_fwd[t - 1], alpha, beta)?
            });
            to_next.push(if t + 1 == len {
                ScalarField::zeros(dims.0, dims.1)
            } else {
                fb_occlusion_mask(&flow_fwd[t], &flow_bwd[t], alpha, beta)?
            });
        }
        Ok(Self { to_prev, to_next })
    }

    pub fn ones(len: usize, dims: (usize, usize)) -> Self {
        Self {
            to_prev: vec![ScalarField::filled(dims.0, dims.1, T::one()); len],
            to_next: vec![ScalarField::filled(dims.0, dims.1, T::one()); len],
        }
    }

    pub fn zeros(len: usize, dims: (usize, usize)) -> Self {
        Self {
            to_prev: vec![ScalarField::zeros(dims.0, dims.1); len],
            to_next: vec![ScalarField::zeros(dims.0, dims.1); len],
        }
    }

    pub fn cast<U: Real>(&self) -> TemporalMasks<U> {
        TemporalMasks {
            to_prev: self.to_prev.iter().map(|m| m.cast()).collect(),
            to_next: self.to_next.iter().map(|m| m.cast()).collect(),
        }
    }
}

/// Reverses a clip's flows: the reversed clip's forward flows are the
/// original backward flows in reverse order, and vice versa.
pub fn reverse_flows<T: Real>(
    flow_fwd: &[VectorField<T>],
    flow_bwd: &[VectorField<T>],
) -> (Vec<VectorField<T>>, Vec<VectorField<T>>) {
    (
        flow_bwd.iter().rev().cloned().collect(),
        flow_fwd.iter().rev().cloned().collect(),
    )
}

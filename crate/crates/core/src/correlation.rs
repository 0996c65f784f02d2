//! Triple-frame local correlation.
//!
//! Right-view features of the previous and next frames are first aligned to
//! the center frame with optical flow, then every right feature map is
//! shifted onto the left view by the current disparity estimate. The cost
//! volume holds one local-correlation block per right frame, in the order
//! (previous, center, next).

use crate::error::{Error, Result};
use crate::field::{warp_by_disparity, warp_by_flow, ChannelField, Real, ScalarField, VectorField};

/// Ordered list of integer (dx, dy) offsets. The order fixes the cost-volume
/// channel layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchRange {
    offsets: Vec<(i32, i32)>,
}

impl SearchRange {
    pub fn new(offsets: Vec<(i32, i32)>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::invalid("search range must be non-empty"));
        }
        for (i, o) in offsets.iter().enumerate() {
            if offsets[..i].contains(o) {
                return Err(Error::invalid(format!("duplicate offset {o:?}")));
            }
        }
        Ok(Self { offsets })
    }

    /// (−r, 0) … (r, 0).
    pub fn horizontal(radius: i32) -> Self {
        Self {
            offsets: (-radius..=radius).map(|dx| (dx, 0)).collect(),
        }
    }

    /// All offsets with |dx|, |dy| ≤ r, dy-major.
    pub fn square(radius: i32) -> Self {
        let mut offsets = Vec::new();
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                offsets.push((dx, dy));
            }
        }
        Self { offsets }
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Even iterations search (±4, 0), odd iterations (±1, ±1).
pub fn standard_ranges(iteration: usize) -> SearchRange {
    if iteration.is_multiple_of(2) {
        SearchRange::horizontal(4)
    } else {
        SearchRange::square(1)
    }
}

/// Scaling applied to the channel-wise dot product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrelationNorm {
    /// Divide by the channel count.
    #[default]
    Mean,
    /// Divide by the square root of the channel count.
    Sqrt,
    /// Plain dot product.
    Sum,
}

impl CorrelationNorm {
    pub fn factor(self, channels: usize) -> f64 {
        match self {
            CorrelationNorm::Mean => 1.0 / channels as f64,
            CorrelationNorm::Sqrt => 1.0 / (channels as f64).sqrt(),
            CorrelationNorm::Sum => 1.0,
        }
    }
}

/// Per-frame cost volume: `3·|offsets|` channels, blocks ordered
/// (previous, center, next).
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume<T: Real = f32> {
    field: ChannelField<T>,
    offsets: usize,
}

impl<T: Real> CostVolume<T> {
    pub fn new(field: ChannelField<T>, offsets: usize) -> Result<Self> {
        if offsets == 0 || field.channels() != 3 * offsets {
            return Err(Error::shape(format!(
                "cost volume with {} channels cannot hold 3 blocks of {offsets}",
                field.channels()
            )));
        }
        Ok(Self { field, offsets })
    }

    pub fn field(&self) -> &ChannelField<T> {
        &self.field
    }

    pub fn into_field(self) -> ChannelField<T> {
        self.field
    }

    pub fn offsets(&self) -> usize {
        self.offsets
    }

    /// Block 0 = previous frame, 1 = center, 2 = next.
    pub fn block(&self, b: usize) -> ChannelField<T> {
        assert!(b < 3);
        let c = self.field.channels();
        let n = self.offsets;
        let data = self
            .field
            .data()
            .chunks_exact(c)
            .flat_map(|px| px[b * n..(b + 1) * n].iter().copied())
            .collect();
        ChannelField::from_vec_unchecked(self.field.height(), self.field.width(), n, data)
    }
}

/// Aligns the previous and next frames' features onto the center frame.
pub fn align_neighbors<T: Real>(
    prev: &ChannelField<T>,
    next: &ChannelField<T>,
    flow_prev: &VectorField<T>,
    flow_next: &VectorField<T>,
) -> Result<(ChannelField<T>, ChannelField<T>)> {
    if prev.dims() != next.dims() || prev.channels() != next.channels() {
        return Err(Error::shape(
            "align_neighbors: neighbor features differ in shape",
        ));
    }
    Ok((
        warp_by_flow(prev, flow_prev)?,
        warp_by_flow(next, flow_next)?,
    ))
}

/// Local correlation between left features and disparity-aligned right
/// features, one output channel per offset.
pub fn correlate<T: Real>(
    left: &ChannelField<T>,
    right: &ChannelField<T>,
    disparity: &ScalarField<T>,
    range: &SearchRange,
    norm: CorrelationNorm,
) -> Result<ChannelField<T>> {
    if left.dims() != right.dims() || left.channels() != right.channels() {
        return Err(Error::shape(format!(
            "correlate: left {}x{}x{} vs right {}x{}x{}",
            left.height(),
            left.width(),
            left.channels(),
            right.height(),
            right.width(),
            right.channels()
        )));
    }
    let shifted = warp_by_disparity(right, disparity)?;
    Ok(correlate_aligned(left, &shifted, range, norm))
}

/// Correlation against right features that are already shifted onto the
/// left view. Offsets landing outside the raster clamp to the edge.
pub(crate) fn correlate_aligned<T: Real>(
    left: &ChannelField<T>,
    shifted: &ChannelField<T>,
    range: &SearchRange,
    norm: CorrelationNorm,
) -> ChannelField<T> {
    let (h, w) = left.dims();
    let c = left.channels();
    let n = range.len();
    let scale = T::of(norm.factor(c));
    let (hi, wi) = (h as i64 - 1, w as i64 - 1);
    let mut out = vec![T::zero(); h * w * n];
    for y in 0..h {
        for x in 0..w {
            let l = left.pixel(x, y);
            let o = &mut out[(y * w + x) * n..(y * w + x + 1) * n];
            for (k, &(dx, dy)) in range.offsets().iter().enumerate() {
                let sx = (x as i64 + dx as i64).clamp(0, wi) as usize;
                let sy = (y as i64 + dy as i64).clamp(0, hi) as usize;
                let r = shifted.pixel(sx, sy);
                let mut acc = T::zero();
                for (a, b) in l.iter().zip(r) {
                    acc += *a * *b;
                }
                o[k] = acc * scale;
            }
        }
    }
    ChannelField::from_vec_unchecked(h, w, n, out)
}

/// Builds the (previous, center, next) cost volume for one center frame.
///
/// `flow_prev` and `flow_next` live on the center frame and point into the
/// previous and next frames. `disparity` must be at the feature resolution.
#[allow(clippy::too_many_arguments)]
pub fn triple_cost_volume<T: Real>(
    left: &ChannelField<T>,
    right_prev: &ChannelField<T>,
    right_center: &ChannelField<T>,
    right_next: &ChannelField<T>,
    flow_prev: &VectorField<T>,
    flow_next: &VectorField<T>,
    disparity: &ScalarField<T>,
    range: &SearchRange,
    norm: CorrelationNorm,
) -> Result<CostVolume<T>> {
    let (aligned_prev, aligned_next) =
        align_neighbors(right_prev, right_next, flow_prev, flow_next)?;
    let blocks = [
        correlate(left, &aligned_prev, disparity, range, norm)?,
        correlate(left, right_center, disparity, range, norm)?,
        correlate(left, &aligned_next, disparity, range, norm)?,
    ];
    let field = ChannelField::concat(&[&blocks[0], &blocks[1], &blocks[2]])?;
    CostVolume::new(field, range.len())
}

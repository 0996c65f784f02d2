//! Dense 2-D rasters and the bilinear alignment kernels built on them.
//!
//! Every raster is stored row-major with channels innermost. Sampling outside
//! the raster clamps to the nearest edge pixel. Displacements are expressed
//! in pixels of the raster they are attached to.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point scalar usable as a field element.
pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// H×W raster with `channels` values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelField<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ChannelField<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "field dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} field needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field element {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Caller guarantees the length and finiteness invariants.
    pub(crate) fn from_vec_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<T>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        assert!(height > 0 && width > 0 && channels > 0, "empty field");
        Self::from_vec_unchecked(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds a field from `f(x, y, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// (height, width)
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub(crate) fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn cast<U: Real>(&self) -> ChannelField<U> {
        ChannelField::from_vec_unchecked(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    /// Extracts one channel.
    pub fn channel(&self, c: usize) -> ScalarField<T> {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        ScalarField(ChannelField::from_vec_unchecked(
            self.height,
            self.width,
            1,
            data,
        ))
    }

    /// Concatenates fields of equal size along the channel axis.
    pub fn concat(parts: &[&ChannelField<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero fields"))?;
        let (h, w) = first.dims();
        for p in parts {
            if p.dims() != (h, w) {
                return Err(Error::shape(format!(
                    "concat: {}x{} vs {}x{}",
                    h,
                    w,
                    p.height(),
                    p.width()
                )));
            }
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Ok(Self::from_vec_unchecked(h, w, channels, data))
    }

    /// Splits channels into consecutive groups of the given widths.
    pub fn split(&self, widths: &[usize]) -> Result<Vec<Self>> {
        if widths.iter().sum::<usize>() != self.channels {
            return Err(Error::shape(format!(
                "split widths {widths:?} do not sum to {} channels",
                self.channels
            )));
        }
        let n = self.height * self.width;
        let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(n * w)).collect();
        for px in self.data.chunks_exact(self.channels) {
            let mut start = 0;
            for (buf, w) in out.iter_mut().zip(widths) {
                buf.extend_from_slice(&px[start..start + w]);
                start += w;
            }
        }
        Ok(out
            .into_iter()
            .zip(widths)
            .map(|(d, &c)| Self::from_vec_unchecked(self.height, self.width, c, d))
            .collect())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec_unchecked(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub(crate) fn same_dims(&self, other_dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != other_dims {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other_dims.0, other_dims.1
            )));
        }
        Ok(())
    }
}

/// Single-channel raster: disparity, depth, masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T = f32>(ChannelField<T>);

impl<T: Real> ScalarField<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        ChannelField::new(height, width, 1, data).map(Self)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(ChannelField::zeros(height, width, 1))
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self(ChannelField::filled(height, width, 1, value))
    }

    /// Builds a field from `f(x, y)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        ChannelField::from_fn(height, width, 1, |x, y, _| f(x, y)).map(Self)
    }

    pub fn from_channels(field: ChannelField<T>) -> Result<Self> {
        if field.channels() != 1 {
            return Err(Error::shape(format!(
                "expected 1 channel, got {}",
                field.channels()
            )));
        }
        Ok(Self(field))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.0.data[y * self.0.width + x]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn as_channels(&self) -> &ChannelField<T> {
        &self.0
    }

    pub fn into_channels(self) -> ChannelField<T> {
        self.0
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self(self.0.map(f))
    }

    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField(self.0.cast())
    }

    /// Pointwise combination of two equally sized fields.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.0.same_dims(other.dims(), "zip_map")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.height(), self.width(), data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.0.max_abs_diff(&other.0)
    }
}

/// Two-channel raster of (u, v) pixel displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T = f32>(ChannelField<T>);

impl<T: Real> VectorField<T> {
    /// `data` holds interleaved (u, v) pairs, row-major.
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        ChannelField::new(height, width, 2, data).map(Self)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(ChannelField::zeros(height, width, 2))
    }

    pub fn constant(height: usize, width: usize, u: T, v: T) -> Self {
        let data = (0..height * width).flat_map(|_| [u, v]).collect();
        Self(ChannelField::from_vec_unchecked(height, width, 2, data))
    }

    /// Builds a field from `f(x, y) -> (u, v)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (T, T),
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                data.push(u);
                data.push(v);
            }
        }
        Self::new(height, width, data)
    }

    pub fn from_channels(field: ChannelField<T>) -> Result<Self> {
        if field.channels() != 2 {
            return Err(Error::shape(format!(
                "expected 2 channels, got {}",
                field.channels()
            )));
        }
        Ok(Self(field))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        let i = (y * self.0.width + x) * 2;
        (self.0.data[i], self.0.data[i + 1])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn as_channels(&self) -> &ChannelField<T> {
        &self.0
    }

    pub fn into_channels(self) -> ChannelField<T> {
        self.0
    }

    pub fn cast<U: Real>(&self) -> VectorField<U> {
        VectorField(self.0.cast())
    }

    pub fn is_zero(&self) -> bool {
        self.data().iter().all(|v| *v == T::zero())
    }
}

/// Stereo rig parameters needed to turn disparity into metric depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub focal_px: f64,
    pub baseline_m: f64,
}

impl Calibration {
    pub fn new(focal_px: f64, baseline_m: f64) -> Result<Self> {
        let cal = Self {
            focal_px,
            baseline_m,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::invalid(format!(
                "focal_px must be > 0, got {}",
                self.focal_px
            )));
        }
        if !(self.baseline_m > 0.0 && self.baseline_m.is_finite()) {
            return Err(Error::invalid(format!(
                "baseline_m must be > 0, got {}",
                self.baseline_m
            )));
        }
        Ok(())
    }
}

/// Up to four pixel taps with their bilinear weights. Zero-weight taps are
/// dropped, so an integer coordinate yields a single tap of weight one.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps<T> {
    pub idx: [usize; 4],
    pub w: [T; 4],
    pub n: usize,
}

impl<T: Real> Taps<T> {
    /// Pixel indices are `y * width + x`.
    #[inline]
    pub fn at(height: usize, width: usize, x: T, y: T) -> Self {
        let xmax = T::of((width - 1) as f64);
        let ymax = T::of((height - 1) as f64);
        let x = x.max(T::zero()).min(xmax);
        let y = y.max(T::zero()).min(ymax);
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = x - x0f;
        let fy = y - y0f;
        let x0 = x0f.to_usize().unwrap_or(0);
        let y0 = y0f.to_usize().unwrap_or(0);
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let one = T::one();
        let mut taps = Taps {
            idx: [0; 4],
            w: [T::zero(); 4],
            n: 0,
        };
        let mut push = |i: usize, w: T| {
            taps.idx[taps.n] = i;
            taps.w[taps.n] = w;
            taps.n += 1;
        };
        match (fx == T::zero(), fy == T::zero()) {
            (true, true) => push(y0 * width + x0, one),
            (false, true) => {
                push(y0 * width + x0, one - fx);
                push(y0 * width + x1, fx);
            }
            (true, false) => {
                push(y0 * width + x0, one - fy);
                push(y1 * width + x0, fy);
            }
            (false, false) => {
                push(y0 * width + x0, (one - fx) * (one - fy));
                push(y0 * width + x1, fx * (one - fy));
                push(y1 * width + x0, (one - fx) * fy);
                push(y1 * width + x1, fx * fy);
            }
        }
        taps
    }

    /// Writes the interpolated pixel of `data` (with `c` channels) into `out`.
    #[inline]
    pub fn gather(&self, data: &[T], c: usize, out: &mut [T]) {
        let first = self.idx[0] * c;
        if self.n == 1 {
            out.copy_from_slice(&data[first..first + c]);
            return;
        }
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for t in 0..self.n {
                acc += self.w[t] * data[self.idx[t] * c + k];
            }
            *o = acc;
        }
    }

    /// Adjoint of [`gather`](Self::gather): accumulates `grad` into `acc`.
    #[inline]
    pub fn scatter(&self, grad: &[T], c: usize, acc: &mut [T]) {
        for t in 0..self.n {
            let base = self.idx[t] * c;
            let w = self.w[t];
            for (k, g) in grad.iter().enumerate() {
                acc[base + k] += w * *g;
            }
        }
    }
}

/// Bilinear interpolation of all channels at (x, y), clamping to the edge.
pub fn bilinear_sample<T: Real>(field: &ChannelField<T>, x: T, y: T) -> Vec<T> {
    let mut out = vec![T::zero(); field.channels()];
    Taps::at(field.height(), field.width(), x, y).gather(field.data(), field.channels(), &mut out);
    out
}

/// Per-pixel sampling plan shared by a warp and its adjoint.
pub(crate) struct WarpPlan<T> {
    height: usize,
    width: usize,
    taps: Vec<Taps<T>>,
}

impl<T: Real> WarpPlan<T> {
    pub fn from_flow(flow: &VectorField<T>) -> Self {
        let (h, w) = flow.dims();
        let mut taps = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = flow.get(x, y);
                taps.push(Taps::at(h, w, T::of(x as f64) + u, T::of(y as f64) + v));
            }
        }
        Self {
            height: h,
            width: w,
            taps,
        }
    }

    pub fn from_disparity(disparity: &ScalarField<T>) -> Self {
        let (h, w) = disparity.dims();
        let mut taps = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let d = disparity.get(x, y);
                taps.push(Taps::at(h, w, T::of(x as f64) - d, T::of(y as f64)));
            }
        }
        Self {
            height: h,
            width: w,
            taps,
        }
    }

    pub fn apply(&self, field: &ChannelField<T>) -> ChannelField<T> {
        let c = field.channels();
        let mut out = vec![T::zero(); self.height * self.width * c];
        for (taps, o) in self.taps.iter().zip(out.chunks_exact_mut(c)) {
            taps.gather(field.data(), c, o);
        }
        ChannelField::from_vec_unchecked(self.height, self.width, c, out)
    }

    /// Transpose of [`apply`](Self::apply): maps an output gradient back onto the source raster.
    pub fn apply_adjoint(&self, grad: &ChannelField<T>) -> ChannelField<T> {
        let c = grad.channels();
        let mut acc = vec![T::zero(); self.height * self.width * c];
        for (taps, g) in self.taps.iter().zip(grad.data().chunks_exact(c)) {
            taps.scatter(g, c, &mut acc);
        }
        ChannelField::from_vec_unchecked(self.height, self.width, c, acc)
    }
}

/// Backward warp: `out(x, y) = field(x + u(x, y), y + v(x, y))`.
pub fn warp_by_flow<T: Real>(
    field: &ChannelField<T>,
    flow: &VectorField<T>,
) -> Result<ChannelField<T>> {
    field.same_dims(flow.dims(), "warp_by_flow")?;
    Ok(WarpPlan::from_flow(flow).apply(field))
}

/// Single-channel convenience wrapper around [`warp_by_flow`].
pub fn warp_scalar_by_flow<T: Real>(
    field: &ScalarField<T>,
    flow: &VectorField<T>,
) -> Result<ScalarField<T>> {
    warp_by_flow(field.as_channels(), flow).map(ScalarField)
}

/// Right-to-left stereo warp: `out(x, y) = field(x - d(x, y), y)`.
pub fn warp_by_disparity<T: Real>(
    field: &ChannelField<T>,
    disparity: &ScalarField<T>,
) -> Result<ChannelField<T>> {
    field.same_dims(disparity.dims(), "warp_by_disparity")?;
    Ok(WarpPlan::from_disparity(disparity).apply(field))
}

/// Bilinear resize to `height`×`width` using pixel-center alignment.
/// Values are not rescaled.
pub fn resize<T: Real>(
    field: &ChannelField<T>,
    height: usize,
    width: usize,
) -> Result<ChannelField<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target must be non-empty"));
    }
    let (h, w) = field.dims();
    if (h, w) == (height, width) {
        return Ok(field.clone());
    }
    let c = field.channels();
    let sx = w as f64 / width as f64;
    let sy = h as f64 / height as f64;
    let mut out = vec![T::zero(); height * width * c];
    for y in 0..height {
        let src_y = T::of((y as f64 + 0.5) * sy - 0.5);
        for x in 0..width {
            let src_x = T::of((x as f64 + 0.5) * sx - 0.5);
            let i = (y * width + x) * c;
            Taps::at(h, w, src_x, src_y).gather(field.data(), c, &mut out[i..i + c]);
        }
    }
    Ok(ChannelField::from_vec_unchecked(height, width, c, out))
}

fn scaled_dims(h: usize, w: usize, scale: f64) -> Result<(usize, usize)> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let nh = (h as f64 * scale).round() as usize;
    let nw = (w as f64 * scale).round() as usize;
    if nh == 0 || nw == 0 {
        return Err(Error::invalid(format!(
            "scale {scale} maps {h}x{w} to an empty raster"
        )));
    }
    Ok((nh, nw))
}

/// Resamples a flow field to `round(scale·H)×round(scale·W)` and rescales
/// the displacements so they stay valid in the new pixel grid.
pub fn resample_flow<T: Real>(flow: &VectorField<T>, scale: f64) -> Result<VectorField<T>> {
    let (h, w) = flow.dims();
    let (nh, nw) = scaled_dims(h, w, scale)?;
    let mut out = resize(flow.as_channels(), nh, nw)?;
    let su = T::of(nw as f64 / w as f64);
    let sv = T::of(nh as f64 / h as f64);
    if su != T::one() || sv != T::one() {
        for px in out.data_mut().chunks_exact_mut(2) {
            px[0] *= su;
            px[1] *= sv;
        }
    }
    Ok(VectorField(out))
}

/// Disparity counterpart of [`resample_flow`]: horizontal displacement,
/// scaled by the width ratio.
pub fn resample_disparity<T: Real>(
    disparity: &ScalarField<T>,
    scale: f64,
) -> Result<ScalarField<T>> {
    let (h, w) = disparity.dims();
    let (nh, nw) = scaled_dims(h, w, scale)?;
    let mut out = resize(disparity.as_channels(), nh, nw)?;
    let s = T::of(nw as f64 / w as f64);
    if s != T::one() {
        out.data_mut().iter_mut().for_each(|v| *v *= s);
    }
    Ok(ScalarField(out))
}

pub const DEFAULT_FB_ALPHA: f64 = 0.01;
pub const DEFAULT_FB_BETA: f64 = 0.5;

/// Forward-backward flow consistency mask (1 = consistent, 0 = occluded).
///
/// `forward` lives on frame A and points into frame B; `backward` lives on
/// frame B and points back into A. A pixel is kept when the round trip
/// `|f(p) + b(p + f(p))|²` is below `alpha·(|f|² + |b|²) + beta`.
pub fn fb_occlusion_mask<T: Real>(
    forward: &VectorField<T>,
    backward: &VectorField<T>,
    alpha: f64,
    beta: f64,
) -> Result<ScalarField<T>> {
    forward
        .as_channels()
        .same_dims(backward.dims(), "fb_occlusion_mask")?;
    let (h, w) = forward.dims();
    let mut out = Vec::with_capacity(h * w);
    let mut back = [T::zero(); 2];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = forward.get(x, y);
            Taps::at(h, w, T::of(x as f64) + u, T::of(y as f64) + v).gather(
                backward.data(),
                2,
                &mut back,
            );
            let (u, v) = (u.as_f64(), v.as_f64());
            let (bu, bv) = (back[0].as_f64(), back[1].as_f64());
            let residual = (u + bu).powi(2) + (v + bv).powi(2);
            let bound = alpha * (u * u + v * v + bu * bu + bv * bv) + beta;
            out.push(if residual < bound {
                T::one()
            } else {
                T::zero()
            });
        }
    }
    ScalarField::new(h, w, out)
}

/// `D = focal·baseline / max(d, eps)`.
pub fn disparity_to_depth<T: Real>(
    disparity: &ScalarField<T>,
    cal: &Calibration,
    eps: f64,
) -> Result<ScalarField<T>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    cal.validate()?;
    let fb = T::of(cal.focal_px * cal.baseline_m);
    let eps = T::of(eps);
    Ok(disparity.map(|d| fb / d.max(eps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2x2() -> ChannelField {
        ChannelField::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn bilinear_examples() {
        let f = grid2x2();
        assert_eq!(bilinear_sample(&f, 0.5, 0.5), vec![1.5]);
        assert_eq!(bilinear_sample(&f, 1.0, 0.0), vec![1.0]);
        assert_eq!(bilinear_sample(&f, -3.0, 0.0), vec![0.0]);
        assert_eq!(bilinear_sample(&f, 7.0, 9.0), vec![3.0]);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(ChannelField::<f32>::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ChannelField::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ChannelField::<f32>::new(0, 1, 1, vec![]).is_err());
        assert!(ScalarField::from_channels(ChannelField::<f32>::zeros(2, 2, 3)).is_err());
    }

    #[test]
    fn ramp_translation_with_clamp() {
        let ramp = ScalarField::from_fn(1, 8, |x, _| x as f32).unwrap();
        let flow = VectorField::constant(1, 8, 1.0, 0.0);
        let out = warp_scalar_by_flow(&ramp, &flow).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 7.0]);
    }

    #[test]
    fn disparity_warp_shifts_left() {
        let ramp = ScalarField::from_fn(1, 6, |x, _| x as f32).unwrap();
        let out = warp_by_disparity(ramp.as_channels(), &ScalarField::filled(1, 6, 1.0)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let same = warp_by_disparity(ramp.as_channels(), &ScalarField::zeros(1, 6)).unwrap();
        assert_eq!(same.data(), ramp.data());
    }

    #[test]
    fn warp_dimension_mismatch() {
        let f = ChannelField::<f32>::zeros(3, 4, 2);
        assert!(warp_by_flow(&f, &VectorField::zeros(4, 3)).is_err());
        assert!(warp_by_disparity(&f, &ScalarField::zeros(3, 5)).is_err());
    }

    #[test]
    fn flow_resampling_scales_values() {
        let flow = VectorField::constant(8, 16, 4.0f32, 2.0);
        let small = resample_flow(&flow, 0.25).unwrap();
        assert_eq!(small.dims(), (2, 4));
        assert!(small.data().chunks(2).all(|p| p == [1.0, 0.5]));
        assert_eq!(resample_flow(&flow, 1.0).unwrap(), flow);
        assert!(resample_flow(&flow, 0.01).is_err());
    }

    #[test]
    fn disparity_resampling_scales_values() {
        let d = ScalarField::filled(8, 8, 8.0f32);
        let small = resample_disparity(&d, 0.25).unwrap();
        assert!(small.data().iter().all(|&v| v == 2.0));
        assert_eq!(resample_disparity(&d, 1.0).unwrap(), d);
    }

    #[test]
    fn linear_flow_round_trip() {
        let (h, w) = (16, 24);
        let flow = VectorField::from_fn(h, w, |x, y| (x as f64, 0.5 * y as f64)).unwrap();
        let back = resample_flow(&resample_flow(&flow, 0.5).unwrap(), 2.0).unwrap();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let (a, b) = (flow.get(x, y), back.get(x, y));
                assert!(
                    (a.0 - b.0).abs() < 1e-5 && (a.1 - b.1).abs() < 1e-5,
                    "{x},{y}"
                );
            }
        }
    }

    #[test]
    fn smooth_disparity_round_trip() {
        let (h, w) = (12, 20);
        let d = ScalarField::from_fn(h, w, |x, y| 3.0 + 0.25 * x as f64 - 0.1 * y as f64).unwrap();
        let back = resample_disparity(&resample_disparity(&d, 0.5).unwrap(), 2.0).unwrap();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert!((d.get(x, y) - back.get(x, y)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn fb_mask_examples() {
        let f = VectorField::constant(4, 5, 1.0f32, 0.0);
        let b = VectorField::constant(4, 5, -1.0f32, 0.0);
        let m = fb_occlusion_mask(&f, &b, DEFAULT_FB_ALPHA, DEFAULT_FB_BETA).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        let m = fb_occlusion_mask(&f, &f, DEFAULT_FB_ALPHA, DEFAULT_FB_BETA).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(fb_occlusion_mask(&f, &VectorField::zeros(5, 4), 0.01, 0.5).is_err());
    }

    #[test]
    fn depth_conversion() {
        let cal = Calibration::new(1.0, 1.0).unwrap();
        let d = disparity_to_depth(&ScalarField::filled(2, 2, 1.0f32), &cal, 1e-3).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));
        let d = disparity_to_depth(&ScalarField::filled(2, 2, 0.0f64), &cal, 1e-3).unwrap();
        assert!(d.data().iter().all(|&v| (v - 1000.0).abs() < 1e-9));
        let cal = Calibration::new(100.0, 0.05).unwrap();
        let d = disparity_to_depth(&ScalarField::filled(1, 1, 2.0f64), &cal, 1e-3).unwrap();
        assert!((d.get(0, 0) - 2.5).abs() < 1e-12);
        assert!(disparity_to_depth(&ScalarField::filled(1, 1, 2.0f64), &cal, 0.0).is_err());
        assert!(Calibration::new(0.0, 1.0).is_err());
    }

    #[test]
    fn adjoint_identity() {
        // <warp(a), b> == <a, warp^T(b)>
        let (h, w) = (5, 7);
        let a = ChannelField::from_fn(h, w, 2, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 - 3.0)
            .unwrap();
        let b = ChannelField::from_fn(h, w, 2, |x, y, c| ((x + 2 * y + 3 * c) % 5) as f64 * 0.5)
            .unwrap();
        let flow = VectorField::from_fn(h, w, |x, y| (0.3 * x as f64 - 1.1, 0.7 - 0.2 * y as f64))
            .unwrap();
        let plan = WarpPlan::from_flow(&flow);
        let lhs: f64 = plan
            .apply(&a)
            .data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| p * q)
            .sum();
        let rhs: f64 = a
            .data()
            .iter()
            .zip(plan.apply_adjoint(&b).data())
            .map(|(p, q)| p * q)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn small_field() -> impl Strategy<Value = ChannelField<f64>> {
        (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(h, w, c)| {
            prop::collection::vec(-10.0f64..10.0, h * w * c)
                .prop_map(move |d| ChannelField::new(h, w, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn zero_flow_is_identity(f in small_field()) {
            let out = warp_by_flow(&f, &VectorField::zeros(f.height(), f.width())).unwrap();
            prop_assert_eq!(out.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn integer_coordinates_are_exact(f in small_field(), xs in 0usize..6, ys in 0usize..6) {
            let (x, y) = (xs.min(f.width() - 1), ys.min(f.height() - 1));
            prop_assert_eq!(bilinear_sample(&f, x as f64, y as f64), f.pixel(x, y).to_vec());
        }

        #[test]
        fn warp_is_linear(f in small_field(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let (h, w, c) = (f.height(), f.width(), f.channels());
            let g = ChannelField::from_fn(h, w, c, |x, y, k| ((x * 7 + y * 13 + k * 3 + seed as usize) % 11) as f64 - 5.0).unwrap();
            let flow = VectorField::from_fn(h, w, |x, y| (((x + seed as usize) % 3) as f64 * 0.37 - 0.5, (y % 2) as f64 * 0.61 - 0.3)).unwrap();
            let mix = ChannelField::new(h, w, c, f.data().iter().zip(g.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = warp_by_flow(&mix, &flow).unwrap();
            let wf = warp_by_flow(&f, &flow).unwrap();
            let wg = warp_by_flow(&g, &flow).unwrap();
            for ((l, p), q) in lhs.data().iter().zip(wf.data()).zip(wg.data()) {
                prop_assert!((l - (a * p + b * q)).abs() < 1e-6);
            }
        }

        #[test]
        fn depth_monotone(d1 in 0.002f64..100.0, d2 in 0.002f64..100.0) {
            let cal = Calibration::new(50.0, 0.1).unwrap();
            let f = ScalarField::new(1, 2, vec![d1, d2]).unwrap();
            let depth = disparity_to_depth(&f, &cal, 1e-3).unwrap();
            if d1 < d2 { prop_assert!(depth.get(0, 0) > depth.get(1, 0)); }
        }

        #[test]
        fn fb_mask_is_binary(vals in prop::collection::vec(-3.0f32..3.0, 4 * 4 * 4)) {
            let f = VectorField::new(4, 4, vals[..32].to_vec()).unwrap();
            let b = VectorField::new(4, 4, vals[32..].to_vec()).unwrap();
            let m = fb_occlusion_mask(&f, &b, DEFAULT_FB_ALPHA, DEFAULT_FB_BETA).unwrap();
            prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}

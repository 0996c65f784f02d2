//! Minimal convolution layers on [`ChannelField`]s with exact reverse-mode
//! gradients.
//!
//! Kernels are stored `[kh][kw][cin][cout]`. Spatial padding is zero with
//! half-kernel margins. Row-parallel loops write disjoint outputs and every
//! reduction runs in a fixed row order, so results do not depend on the
//! thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ChannelField, Real};
use crate::weights::{Tensor, WeightBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// 2-D convolution parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T: Real = f32> {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of a [`Conv2d`].
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dGrad<T: Real = f32> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2dGrad<T> {
    pub fn zeros_like(conv: &Conv2d<T>) -> Self {
        Self {
            weight: vec![T::zero(); conv.weight.len()],
            bias: vec![T::zero(); conv.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += *b;
        }
    }
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            kh,
            kw,
            cin,
            cout,
            stride,
            weight: vec![T::zero(); kh * kw * cin * cout],
            bias: vec![T::zero(); cout],
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.kh, self.kw, self.cin, self.cout]
    }

    /// Loads `{name}.w` and `{name}.b` from a bank, checking shapes.
    pub fn from_bank(
        bank: &WeightBank,
        name: &str,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        let w = bank.expect(&format!("{name}.w"), &[kh, kw, cin, cout])?;
        let b = bank.expect(&format!("{name}.b"), &[cout])?;
        Ok(Self {
            kh,
            kw,
            cin,
            cout,
            stride,
            weight: w.data().iter().map(|&v| T::of(v as f64)).collect(),
            bias: b.data().iter().map(|&v| T::of(v as f64)).collect(),
        })
    }

    pub fn store(&self, bank: &mut WeightBank, name: &str) {
        bank.insert(
            format!("{name}.w"),
            Tensor::new(
                self.weight_shape(),
                self.weight.iter().map(|v| v.as_f64() as f32).collect(),
            )
            .expect("conv weight shape"),
        );
        bank.insert(
            format!("{name}.b"),
            Tensor::new(
                vec![self.cout],
                self.bias.iter().map(|v| v.as_f64() as f32).collect(),
            )
            .expect("conv bias shape"),
        );
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            kh: self.kh,
            kw: self.kw,
            cin: self.cin,
            cout: self.cout,
            stride: self.stride,
            weight: self.weight.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        (
            (h + 2 * ph - self.kh) / self.stride + 1,
            (w + 2 * pw - self.kw) / self.stride + 1,
        )
    }

    fn check_input(&self, input: &ChannelField<T>) -> Result<()> {
        if input.channels() != self.cin {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.cin,
                input.channels()
            )));
        }
        Ok(())
    }

    /// Adds the bias-free convolution of `input` into `out` (row-major
    /// `cout`-channel buffer of the output size).
    pub(crate) fn accumulate(&self, input: &ChannelField<T>, out: &mut [T]) {
        let (h, w) = input.dims();
        let (oh, ow) = self.output_dims(h, w);
        debug_assert_eq!(out.len(), oh * ow * self.cout);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let (cin, cout, s) = (self.cin, self.cout, self.stride);
        let data = input.data();
        out.par_chunks_mut(ow * cout)
            .enumerate()
            .for_each(|(oy, row)| {
                for ox in 0..ow {
                    let acc = &mut row[ox * cout..(ox + 1) * cout];
                    for ky in 0..self.kh {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * s + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let px = &data[(iy as usize * w + ix as usize) * cin..][..cin];
                            let wbase = (ky * self.kw + kx) * cin * cout;
                            for (ci, &a) in px.iter().enumerate() {
                                if a == T::zero() {
                                    continue;
                                }
                                let wrow = &self.weight[wbase + ci * cout..wbase + (ci + 1) * cout];
                                for (o, &wv) in acc.iter_mut().zip(wrow) {
                                    *o += a * wv;
                                }
                            }
                        }
                    }
                }
            });
    }

    /// Convolution plus bias, followed by `act`.
    pub fn forward(&self, input: &ChannelField<T>, act: Activation) -> Result<ChannelField<T>> {
        self.check_input(input)?;
        let (oh, ow) = self.output_dims(input.height(), input.width());
        let mut out: Vec<T> = self
            .bias
            .iter()
            .copied()
            .cycle()
            .take(oh * ow * self.cout)
            .collect();
        self.accumulate(input, &mut out);
        if act != Activation::Identity {
            out.par_iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(ChannelField::from_vec_unchecked(oh, ow, self.cout, out))
    }

    /// Reverse pass for a layer `y = act(conv(x))`.
    ///
    /// `grad_out` is dL/dy. Returns (dL/dx, parameter gradients); dL/dx is
    /// skipped when `need_input_grad` is false.
    pub fn backward(
        &self,
        input: &ChannelField<T>,
        output: &ChannelField<T>,
        grad_out: &ChannelField<T>,
        act: Activation,
        need_input_grad: bool,
    ) -> Result<(Option<ChannelField<T>>, Conv2dGrad<T>)> {
        self.check_input(input)?;
        if output.dims() != grad_out.dims() || grad_out.channels() != self.cout {
            return Err(Error::shape(
                "conv backward: gradient does not match output",
            ));
        }
        let (h, w) = input.dims();
        let (oh, ow) = output.dims();
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let (cin, cout, s) = (self.cin, self.cout, self.stride);

        // dL/d(pre-activation)
        let gpre: Vec<T> = output
            .data()
            .par_iter()
            .zip(grad_out.data().par_iter())
            .map(|(&y, &g)| g * act.derivative_from_output(y))
            .collect();

        let data = input.data();
        let partials: Vec<(Vec<T>, Vec<T>)> = (0..oh)
            .into_par_iter()
            .map(|oy| {
                let mut gw = vec![T::zero(); self.weight.len()];
                let mut gb = vec![T::zero(); cout];
                for ox in 0..ow {
                    let g = &gpre[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                    for (b, &gv) in gb.iter_mut().zip(g) {
                        *b += gv;
                    }
                    for ky in 0..self.kh {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * s + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let px = &data[(iy as usize * w + ix as usize) * cin..][..cin];
                            let wbase = (ky * self.kw + kx) * cin * cout;
                            for (ci, &a) in px.iter().enumerate() {
                                if a == T::zero() {
                                    continue;
                                }
                                let row = &mut gw[wbase + ci * cout..wbase + (ci + 1) * cout];
                                for (o, &gv) in row.iter_mut().zip(g) {
                                    *o += a * gv;
                                }
                            }
                        }
                    }
                }
                (gw, gb)
            })
            .collect();
        let mut grad = Conv2dGrad::zeros_like(self);
        for (gw, gb) in &partials {
            for (a, b) in grad.weight.iter_mut().zip(gw) {
                *a += *b;
            }
            for (a, b) in grad.bias.iter_mut().zip(gb) {
                *a += *b;
            }
        }

        let grad_in = if need_input_grad {
            let mut gin = vec![T::zero(); h * w * cin];
            gin.par_chunks_mut(w * cin)
                .enumerate()
                .for_each(|(iy, row)| {
                    for ix in 0..w {
                        let acc = &mut row[ix * cin..(ix + 1) * cin];
                        for ky in 0..self.kh {
                            let ny = iy as isize + ph as isize - ky as isize;
                            if ny < 0 || ny % s as isize != 0 {
                                continue;
                            }
                            let oy = (ny / s as isize) as usize;
                            if oy >= oh {
                                continue;
                            }
                            for kx in 0..self.kw {
                                let nx = ix as isize + pw as isize - kx as isize;
                                if nx < 0 || nx % s as isize != 0 {
                                    continue;
                                }
                                let ox = (nx / s as isize) as usize;
                                if ox >= ow {
                                    continue;
                                }
                                let g = &gpre[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                                let wbase = (ky * self.kw + kx) * cin * cout;
                                for (ci, a) in acc.iter_mut().enumerate() {
                                    let wrow =
                                        &self.weight[wbase + ci * cout..wbase + (ci + 1) * cout];
                                    let mut sum = T::zero();
                                    for (&wv, &gv) in wrow.iter().zip(g) {
                                        sum += wv * gv;
                                    }
                                    *a += sum;
                                }
                            }
                        }
                    }
                });
            Some(ChannelField::from_vec_unchecked(h, w, cin, gin))
        } else {
            None
        };
        Ok((grad_in, grad))
    }
}

/// Convolutional GRU cell with 3×3 gates:
/// `z = σ(Wz·[h,x])`, `r = σ(Wr·[h,x])`, `q = tanh(Wq·[r⊙h,x])`,
/// `h' = (1−z)⊙h + z⊙q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGru<T: Real = f32> {
    pub hidden: usize,
    pub input: usize,
    pub z: Conv2d<T>,
    pub r: Conv2d<T>,
    pub q: Conv2d<T>,
}

impl<T: Real> ConvGru<T> {
    pub fn tensor_specs(prefix: &str, hidden: usize, input: usize) -> Vec<(String, Vec<usize>)> {
        ["z", "r", "q"]
            .iter()
            .flat_map(|g| {
                [
                    (
                        format!("{prefix}.{g}.w"),
                        vec![3, 3, hidden + input, hidden],
                    ),
                    (format!("{prefix}.{g}.b"), vec![hidden]),
                ]
            })
            .collect()
    }

    pub fn from_bank(bank: &WeightBank, prefix: &str, hidden: usize, input: usize) -> Result<Self> {
        let load = |g: &str| {
            Conv2d::from_bank(
                bank,
                &format!("{prefix}.{g}"),
                3,
                3,
                hidden + input,
                hidden,
                1,
            )
        };
        Ok(Self {
            hidden,
            input,
            z: load("z")?,
            r: load("r")?,
            q: load("q")?,
        })
    }

    pub fn step(&self, h: &ChannelField<T>, x: &ChannelField<T>) -> Result<ChannelField<T>> {
        let hx = ChannelField::concat(&[h, x])?;
        let z = self.z.forward(&hx, Activation::Sigmoid)?;
        let r = self.r.forward(&hx, Activation::Sigmoid)?;
        let rh_data: Vec<T> = r
            .data()
            .iter()
            .zip(h.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let rh = ChannelField::from_vec_unchecked(h.height(), h.width(), self.hidden, rh_data);
        let q = self
            .q
            .forward(&ChannelField::concat(&[&rh, x])?, Activation::Tanh)?;
        let out: Vec<T> = h
            .data()
            .iter()
            .zip(z.data())
            .zip(q.data())
            .map(|((&hv, &zv), &qv)| (T::one() - zv) * hv + zv * qv)
            .collect();
        Ok(ChannelField::from_vec_unchecked(
            h.height(),
            h.width(),
            self.hidden,
            out,
        ))
    }
}

/// Spatio-temporal convolution over a frame sequence with kernel
/// (kt, kh, kw). Temporal taps beyond the sequence ends replicate the edge
/// frame; spatial padding is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d<T: Real = f32> {
    /// One spatial kernel per temporal tap; only the first carries the bias.
    pub taps: Vec<Conv2d<T>>,
}

impl<T: Real> Conv3d<T> {
    pub fn from_bank(
        bank: &WeightBank,
        name: &str,
        kernel: [usize; 3],
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        let [kt, kh, kw] = kernel;
        let w = bank.expect(&format!("{name}.w"), &[kt, kh, kw, cin, cout])?;
        let b = bank.expect(&format!("{name}.b"), &[cout])?;
        let per_tap = kh * kw * cin * cout;
        let taps = (0..kt)
            .map(|t| Conv2d {
                kh,
                kw,
                cin,
                cout,
                stride: 1,
                weight: w.data()[t * per_tap..(t + 1) * per_tap]
                    .iter()
                    .map(|&v| T::of(v as f64))
                    .collect(),
                bias: if t == 0 {
                    b.data().iter().map(|&v| T::of(v as f64)).collect()
                } else {
                    vec![T::zero(); cout]
                },
            })
            .collect();
        Ok(Self { taps })
    }

    pub fn forward(
        &self,
        frames: &[ChannelField<T>],
        act: Activation,
    ) -> Result<Vec<ChannelField<T>>> {
        let kt = self.taps.len();
        let half = (kt / 2) as isize;
        let n = frames.len() as isize;
        frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let first = &self.taps[0];
                if f.channels() != first.cin {
                    return Err(Error::shape(format!(
                        "conv3d expects {} channels, got {}",
                        first.cin,
                        f.channels()
                    )));
                }
                let (h, w) = f.dims();
                let mut out: Vec<T> = first
                    .bias
                    .iter()
                    .copied()
                    .cycle()
                    .take(h * w * first.cout)
                    .collect();
                for (k, tap) in self.taps.iter().enumerate() {
                    let src = (t as isize + k as isize - half).clamp(0, n - 1) as usize;
                    tap.accumulate(&frames[src], &mut out);
                }
                if act != Activation::Identity {
                    out.iter_mut().for_each(|v| *v = act.apply(*v));
                }
                Ok(ChannelField::from_vec_unchecked(h, w, first.cout, out))
            })
            .collect()
    }
}

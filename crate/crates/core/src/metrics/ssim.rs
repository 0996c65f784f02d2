//! Structural similarity with an 11×11 Gaussian window (σ = 1.5).

use crate::error::{Error, Result};
use crate::field::{Real, ScalarField};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Lower bound on the dynamic range so constant inputs stay finite.
pub const MIN_RANGE: f64 = 1e-6;

fn gaussian_window() -> [f64; WINDOW * WINDOW] {
    let half = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    let mut w = [0.0; WINDOW * WINDOW];
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            w[y * WINDOW + x] = g[y] * g[x] / total;
        }
    }
    w
}

/// Mean SSIM over every window position fully inside the raster. The
/// dynamic range L spans both inputs. Identical inputs give exactly 1.
pub fn ssim<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "ssim: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = a.dims();
    if h < WINDOW || w < WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {h}x{w}"
        )));
    }
    let av: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let (lo, hi) = av
        .iter()
        .chain(&bv)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = (hi - lo).max(MIN_RANGE);
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let win = gaussian_window();

    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut ma, mut mb, mut eaa, mut ebb, mut eab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..WINDOW {
                let row = (oy + ky) * w + ox;
                for kx in 0..WINDOW {
                    let g = win[ky * WINDOW + kx];
                    let x = av[row + kx];
                    let y = bv[row + kx];
                    ma += g * x;
                    mb += g * y;
                    eaa += g * (x * x);
                    ebb += g * (y * y);
                    eab += g * (x * y);
                }
            }
            let saa = eaa - ma * ma;
            let sbb = ebb - mb * mb;
            let sab = eab - ma * mb;
            let num = (2.0 * (ma * mb) + c1) * (2.0 * sab + c2);
            let den = (ma * ma + mb * mb + c1) * (saa + sbb + c2);
            total += num / den;
        }
    }
    Ok(total / (oh * ow) as f64)
}

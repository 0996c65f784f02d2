//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::stabilizer::{Stabilizer, StabilizerConfig};
use crate::synth::{generate, perturb, SceneSpec, NOISY_KEY};

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// One probe: a single coordinate or a direction through parameter space.
#[derive(Clone, Debug)]
pub enum Probe {
    Coordinate { label: String, index: usize },
    Direction { label: String, direction: Vec<f64> },
}

impl Probe {
    pub fn label(&self) -> &str {
        match self {
            Probe::Coordinate { label, .. } | Probe::Direction { label, .. } => label,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeResult {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub probes: Vec<ProbeResult>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` (the gradient of `loss` at `theta`) with central
/// differences `(L(θ+h·v) − L(θ−h·v)) / 2h` along every probe.
pub fn gradcheck(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    analytic: &[f64],
    step: f64,
    probes: &[Probe],
) -> Result<GradcheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::shape(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut results = Vec::with_capacity(probes.len());
    let mut point = theta.to_vec();
    for probe in probes {
        let (num, ana) = match probe {
            Probe::Coordinate { index, .. } => {
                let i = *index;
                if i >= theta.len() {
                    return Err(Error::invalid(format!("probe index {i} out of range")));
                }
                point[i] = theta[i] + step;
                let up = loss(&point)?;
                point[i] = theta[i] - step;
                let down = loss(&point)?;
                point[i] = theta[i];
                check_finite(probe, up, down)?;
                ((up - down) / (2.0 * step), analytic[i])
            }
            Probe::Direction { direction, .. } => {
                if direction.len() != theta.len() {
                    return Err(Error::shape(
                        "probe direction length differs from parameter count",
                    ));
                }
                let shifted = |s: f64| -> Vec<f64> {
                    theta
                        .iter()
                        .zip(direction)
                        .map(|(t, d)| t + s * d)
                        .collect()
                };
                let up = loss(&shifted(step))?;
                let down = loss(&shifted(-step))?;
                check_finite(probe, up, down)?;
                let ana = analytic.iter().zip(direction).map(|(g, d)| g * d).sum();
                ((up - down) / (2.0 * step), ana)
            }
        };
        results.push(ProbeResult {
            label: probe.label().to_string(),
            analytic: ana,
            numeric: num,
            rel_err: relative_error(ana, num),
        });
    }
    let max_rel_err = results.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let mean_rel_err = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.rel_err).sum::<f64>() / results.len() as f64
    };
    Ok(GradcheckReport {
        step,
        probes: results,
        max_rel_err,
        mean_rel_err,
    })
}

fn check_finite(probe: &Probe, up: f64, down: f64) -> Result<()> {
    if !(up.is_finite() && down.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss while probing {}",
            probe.label()
        )));
    }
    Ok(())
}

/// Problem size of the stabilizer check.
#[derive(Clone, Copy, Debug)]
pub struct StabilizerCheckSize {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Random single-coordinate probes per parameter tensor.
    pub coordinates_per_tensor: usize,
    /// Random directions spanning the whole parameter vector.
    pub global_directions: usize,
}

impl Default for StabilizerCheckSize {
    fn default() -> Self {
        Self {
            height: 32,
            width: 64,
            frames: 5,
            coordinates_per_tensor: 1,
            global_directions: 4,
        }
    }
}

/// Checks the stabilizer's reverse pass in f64 on a noisy synthetic clip.
///
/// The objective is a fixed random linear functional of the residual. It
/// has the same parameter gradient as the same functional of the corrected
/// disparities and is smooth in every weight, so central differences
/// converge at their nominal rate. Every parameter tensor is probed along
/// one random direction restricted to that tensor, plus a few single
/// coordinates and global directions.
pub fn stabilizer_gradcheck(
    seed: u64,
    size: StabilizerCheckSize,
    config: StabilizerConfig,
) -> Result<GradcheckReport> {
    let spec = SceneSpec::two_layer(seed, size.height, size.width, size.frames);
    let bundle = perturb(&generate(&spec)?, 0.5, seed ^ 0x5eed)?;
    let disp: Vec<ScalarField<f64>> = bundle
        .prediction(NOISY_KEY)?
        .iter()
        .map(|d| d.cast())
        .collect();
    // fractional flows so every warp interpolates
    let shift = |f: &VectorField, du: f64| -> Result<VectorField<f64>> {
        let f = f.cast::<f64>();
        VectorField::from_fn(f.height(), f.width(), |x, y| {
            let (u, v) = f.get(x, y);
            (u + du, v - 0.5 * du)
        })
    };
    let flow_fwd = bundle
        .flow_fwd
        .iter()
        .map(|f| shift(f, 0.3))
        .collect::<Result<Vec<_>>>()?;
    let flow_bwd = bundle
        .flow_bwd
        .iter()
        .map(|f| shift(f, -0.3))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut model = Stabilizer::<f64>::random(config, seed, false)?;
    // small random biases so no bias gradient is structurally special
    let mut theta = model.params();
    for (name, range) in model.param_groups() {
        if name.ends_with(".b") {
            for v in &mut theta[range] {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    model.set_params(&theta)?;

    let (h, w) = (size.height, size.width);
    let px = (h * w * size.frames) as f64;
    let weights: Vec<ScalarField<f64>> = (0..size.frames)
        .map(|_| {
            let data = (0..h * w)
                .map(|_| rng.sample::<f64, _>(StandardNormal) / px)
                .collect();
            ScalarField::new(h, w, data)
        })
        .collect::<Result<_>>()?;
    let objective = |out: &[ScalarField<f64>]| -> f64 {
        out.iter()
            .zip(&weights)
            .map(|(o, g)| {
                o.data()
                    .iter()
                    .zip(g.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    };

    let (_, tape) = model.forward_with_tape(&disp, &flow_fwd, &flow_bwd)?;
    let analytic = model.backward(&tape, &weights)?.flatten();
    drop(tape);

    let mut probes = Vec::new();
    let n = theta.len();
    for (name, range) in model.param_groups() {
        let mut direction = vec![0.0; n];
        for v in &mut direction[range.clone()] {
            *v = rng.sample(StandardNormal);
        }
        probes.push(Probe::Direction {
            label: format!("{name} (direction)"),
            direction: unit(direction),
        });
        for _ in 0..size.coordinates_per_tensor {
            let index = rng.random_range(range.clone());
            probes.push(Probe::Coordinate {
                label: format!("{name}[{}]", index - range.start),
                index,
            });
        }
    }
    for k in 0..size.global_directions {
        let direction = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        probes.push(Probe::Direction {
            label: format!("global direction {k}"),
            direction: unit(direction),
        });
    }

    let mut probe_model = model.clone();
    gradcheck(
        |p| {
            probe_model.set_params(p)?;
            let out = probe_model.forward(&disp, &flow_fwd, &flow_bwd)?;
            // the residual has the same parameter derivatives as the corrected
            // output, without the rounding of adding it to the input
            Ok(objective(&out.residual))
        },
        &theta,
        &analytic,
        DEFAULT_STEP,
        &probes,
    )
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

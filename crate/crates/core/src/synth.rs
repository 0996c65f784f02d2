//! Procedural stereo-video scenes with analytic ground truth.
//!
//! A scene is a textured background plus fronto-parallel rectangular layers,
//! each with a constant disparity and a constant per-frame velocity. Both
//! views are rendered directly from the layer textures, so ground-truth
//! disparity, flow and occlusion follow from the z-order alone.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Calibration, ChannelField, ScalarField, VectorField};
use crate::sequence::SequenceBundle;

/// Axis-aligned rectangle at frame 0, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub disparity: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub disparity: f64,
    pub velocity: [f64; 2],
    pub extent: Rect,
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: BackgroundSpec,
    /// Foreground layers, nearest (largest disparity) first.
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    pub calibration: Calibration,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub clip_id: Option<String>,
    /// Shortest and longest texture period in pixels.
    #[serde(default = "default_periods")]
    pub texture_periods: [f64; 2],
}

fn default_frame_rate() -> f64 {
    30.0
}

fn default_periods() -> [f64; 2] {
    [10.0, 48.0]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::invalid(
                "scene size and frame count must be positive",
            ));
        }
        self.calibration.validate()?;
        let [pmin, pmax] = self.texture_periods;
        if !(pmin >= 2.0 && pmax >= pmin) {
            return Err(Error::invalid(
                "texture periods must satisfy 2 <= min <= max",
            ));
        }
        if !(self.background.disparity >= 0.0) {
            return Err(Error::invalid("background disparity must be >= 0"));
        }
        let mut prev = f64::INFINITY;
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.disparity >= 0.0) {
                return Err(Error::invalid(format!("layer {i}: disparity must be >= 0")));
            }
            if l.disparity > prev {
                return Err(Error::invalid(format!(
                    "layer {i}: layers must be sorted by disparity, nearest first"
                )));
            }
            if l.disparity < self.background.disparity {
                return Err(Error::invalid(format!(
                    "layer {i}: nearer than background required"
                )));
            }
            prev = l.disparity;
            if !(l.extent.w > 0.0 && l.extent.h > 0.0) {
                return Err(Error::invalid(format!("layer {i}: empty extent")));
            }
            let last = (self.frames - 1) as f64;
            for t in [0.0, last] {
                let x0 = l.extent.x + t * l.velocity[0];
                let y0 = l.extent.y + t * l.velocity[1];
                if x0 < 0.0
                    || y0 < 0.0
                    || x0 + l.extent.w > self.width as f64
                    || y0 + l.extent.h > self.height as f64
                {
                    return Err(Error::invalid(format!(
                        "layer {i}: extent leaves the image during the clip"
                    )));
                }
            }
        }
        Ok(())
    }

    /// A ready-made two-layer scene: static background, one moving rectangle.
    pub fn two_layer(seed: u64, height: usize, width: usize, frames: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg_disp = rng.random_range(2..=6) as f64;
        let fg_disp = bg_disp + rng.random_range(4..=8) as f64;
        let w = (width / 3).max(2) as f64;
        let h = (height / 2).max(2) as f64;
        let vx: f64 = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
        let span = vx * (frames.saturating_sub(1)) as f64;
        let x = ((width as f64 - w - span) / 2.0).floor().max(0.0);
        let y = ((height as f64 - h) / 2.0).floor();
        Self {
            seed,
            height,
            width,
            frames,
            background: BackgroundSpec {
                disparity: bg_disp,
                velocity: [0.0, 0.0],
                texture_seed: rng.random(),
            },
            layers: vec![LayerSpec {
                disparity: fg_disp,
                velocity: [vx, 0.0],
                extent: Rect { x, y, w, h },
                texture_seed: rng.random(),
            }],
            calibration: Calibration {
                focal_px: 100.0,
                baseline_m: 0.1,
            },
            frame_rate: 30.0,
            clip_id: None,
            texture_periods: default_periods(),
        }
    }
}

/// Band-limited color texture: four random-phase plane waves per channel.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<Wave>,
}

#[derive(Clone, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    amp: [f64; 3],
    phase: [f64; 3],
}

impl Texture {
    pub fn new(seed: u64, periods: [f64; 2]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..4)
            .map(|_| {
                let (lo, hi) = (periods[0].ln(), periods[1].ln());
                let period = (lo + (hi - lo) * rng.random::<f64>()).exp();
                let angle = TAU * rng.random::<f64>();
                let k = TAU / period;
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    amp: std::array::from_fn(|_| 0.06 + 0.06 * rng.random::<f64>()),
                    phase: std::array::from_fn(|_| TAU * rng.random::<f64>()),
                }
            })
            .collect();
        Self { waves }
    }

    /// Color in [0, 1] at texture coordinates (u, v).
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = [0.5; 3];
        for w in &self.waves {
            let arg = w.kx * u + w.ky * v;
            for c in 0..3 {
                out[c] += w.amp[c] * (arg + w.phase[c]).sin();
            }
        }
        out
    }

    /// Upper bound on |∂c/∂x| + |∂c/∂y| over any channel.
    pub fn gradient_bound(&self) -> f64 {
        (0..3)
            .map(|c| {
                self.waves
                    .iter()
                    .map(|w| w.amp[c] * (w.kx.abs() + w.ky.abs()))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Upper bound on any second partial derivative.
    pub fn curvature_bound(&self) -> f64 {
        (0..3)
            .map(|c| {
                self.waves
                    .iter()
                    .map(|w| w.amp[c] * (w.kx.abs() + w.ky.abs()).powi(2))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

struct Layer {
    disparity: f64,
    velocity: [f64; 2],
    extent: Option<Rect>,
    texture: Texture,
}

/// Renderable scene built from a validated [`SceneSpec`].
pub struct Scene {
    spec: SceneSpec,
    /// Foreground layers in z-order, background last.
    layers: Vec<Layer>,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers: Vec<Layer> = spec
            .layers
            .iter()
            .map(|l| Layer {
                disparity: l.disparity,
                velocity: l.velocity,
                extent: Some(l.extent),
                texture: Texture::new(l.texture_seed, spec.texture_periods),
            })
            .collect();
        layers.push(Layer {
            disparity: spec.background.disparity,
            velocity: spec.background.velocity,
            extent: None,
            texture: Texture::new(spec.background.texture_seed, spec.texture_periods),
        });
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn texture_gradient_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.texture.gradient_bound())
            .fold(0.0, f64::max)
    }

    pub fn texture_curvature_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.texture.curvature_bound())
            .fold(0.0, f64::max)
    }

    fn covers(&self, layer: &Layer, x: f64, y: f64, t: f64, shift: f64) -> bool {
        match &layer.extent {
            None => true,
            Some(r) => r.contains(x + shift - t * layer.velocity[0], y - t * layer.velocity[1]),
        }
    }

    /// Index of the front layer at left-view position (x, y) in frame t.
    pub fn front_layer(&self, x: f64, y: f64, t: f64) -> usize {
        self.layers
            .iter()
            .position(|l| self.covers(l, x, y, t, 0.0))
            .expect("background covers everything")
    }

    /// Index of the front layer at right-view position (x, y) in frame t.
    pub fn front_layer_right(&self, x: f64, y: f64, t: f64) -> usize {
        self.layers
            .iter()
            .position(|l| self.covers(l, x, y, t, l.disparity))
            .expect("background covers everything")
    }

    pub fn layer_disparity(&self, layer: usize) -> f64 {
        self.layers[layer].disparity
    }

    pub fn layer_velocity(&self, layer: usize) -> [f64; 2] {
        self.layers[layer].velocity
    }

    /// Left-view color at continuous position (x, y), frame t.
    pub fn left_color(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let l = &self.layers[self.front_layer(x, y, t)];
        l.texture
            .sample(x - t * l.velocity[0], y - t * l.velocity[1])
    }

    /// Right-view color at continuous position (x, y), frame t.
    pub fn right_color(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let l = &self.layers[self.front_layer_right(x, y, t)];
        l.texture
            .sample(x + l.disparity - t * l.velocity[0], y - t * l.velocity[1])
    }

    fn image(&self, t: usize, color: impl Fn(f64, f64, f64) -> [f64; 3]) -> ChannelField {
        let (h, w) = (self.spec.height, self.spec.width);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let c = color(x as f64, y as f64, t as f64);
                data.extend(c.iter().map(|&v| v as f32));
            }
        }
        ChannelField::new(h, w, 3, data).expect("texture values are finite")
    }

    fn raster(&self, f: impl Fn(usize, usize) -> f64) -> ScalarField {
        ScalarField::from_fn(self.spec.height, self.spec.width, |x, y| f(x, y) as f32)
            .expect("finite raster")
    }

    fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0
            && y >= 0.0
            && x <= (self.spec.width - 1) as f64
            && y <= (self.spec.height - 1) as f64
    }

    /// 1 where the left pixel of frame t is visible in frame t+1.
    pub fn temporal_visibility_fwd(&self, t: usize) -> ScalarField {
        let tf = t as f64;
        self.raster(|x, y| {
            let (x, y) = (x as f64, y as f64);
            let l = self.front_layer(x, y, tf);
            let [u, v] = self.layers[l].velocity;
            let (qx, qy) = (x + u, y + v);
            (self.in_bounds(qx, qy) && self.front_layer(qx, qy, tf + 1.0) == l) as u8 as f64
        })
    }

    /// 1 where the left pixel of frame t+1 is visible in frame t.
    pub fn temporal_visibility_bwd(&self, t: usize) -> ScalarField {
        let tf = t as f64 + 1.0;
        self.raster(|x, y| {
            let (x, y) = (x as f64, y as f64);
            let l = self.front_layer(x, y, tf);
            let [u, v] = self.layers[l].velocity;
            let (qx, qy) = (x - u, y - v);
            (self.in_bounds(qx, qy) && self.front_layer(qx, qy, tf - 1.0) == l) as u8 as f64
        })
    }

    /// 1 where the left pixel of frame t is visible in the right view.
    pub fn stereo_visibility(&self, t: usize) -> ScalarField {
        let tf = t as f64;
        self.raster(|x, y| {
            let (x, y) = (x as f64, y as f64);
            let l = self.front_layer(x, y, tf);
            let qx = x - self.layers[l].disparity;
            (self.in_bounds(qx, y) && self.front_layer_right(qx, y, tf) == l) as u8 as f64
        })
    }

    pub fn render(&self) -> SequenceBundle {
        let s = &self.spec;
        let (h, w, n) = (s.height, s.width, s.frames);
        let mut bundle = SequenceBundle {
            clip_id: s
                .clip_id
                .clone()
                .unwrap_or_else(|| format!("synth-{}", s.seed)),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            flow_fwd: Vec::with_capacity(n.saturating_sub(1)),
            flow_bwd: Vec::with_capacity(n.saturating_sub(1)),
            disp_gt: Vec::with_capacity(n),
            predictions: BTreeMap::new(),
            valid_fwd: Some(Vec::new()),
            valid_bwd: Some(Vec::new()),
            valid_stereo: Some(Vec::new()),
            calibration: s.calibration,
            frame_rate: s.frame_rate,
        };
        for t in 0..n {
            let tf = t as f64;
            bundle
                .left
                .push(self.image(t, |x, y, t| self.left_color(x, y, t)));
            bundle
                .right
                .push(self.image(t, |x, y, t| self.right_color(x, y, t)));
            bundle.disp_gt.push(
                self.raster(|x, y| self.layers[self.front_layer(x as f64, y as f64, tf)].disparity),
            );
            if let Some(v) = bundle.valid_stereo.as_mut() {
                v.push(self.stereo_visibility(t));
            }
            if t + 1 < n {
                let fwd = VectorField::from_fn(h, w, |x, y| {
                    let [u, v] = self.layers[self.front_layer(x as f64, y as f64, tf)].velocity;
                    (u as f32, v as f32)
                })
                .expect("finite flow");
                let bwd = VectorField::from_fn(h, w, |x, y| {
                    let [u, v] =
                        self.layers[self.front_layer(x as f64, y as f64, tf + 1.0)].velocity;
                    (-u as f32, -v as f32)
                })
                .expect("finite flow");
                bundle.flow_fwd.push(fwd);
                bundle.flow_bwd.push(bwd);
                if let Some(v) = bundle.valid_fwd.as_mut() {
                    v.push(self.temporal_visibility_fwd(t));
                }
                if let Some(v) = bundle.valid_bwd.as_mut() {
                    v.push(self.temporal_visibility_bwd(t));
                }
            }
        }
        bundle
    }
}

/// Renders a scene description into a bundle with analytic ground truth.
pub fn generate(spec: &SceneSpec) -> Result<SequenceBundle> {
    Ok(Scene::new(spec.clone())?.render())
}

/// Prediction key written by [`perturb`].
pub const NOISY_KEY: &str = "pred";

/// Adds i.i.d. zero-mean Gaussian noise to the ground-truth disparities and
/// stores the result under [`NOISY_KEY`].
pub fn perturb(bundle: &SequenceBundle, sigma: f64, seed: u64) -> Result<SequenceBundle> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    let mut out = bundle.clone();
    let noisy = if sigma == 0.0 {
        bundle.disp_gt.clone()
    } else {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        bundle
            .disp_gt
            .iter()
            .map(|d| {
                let data = d
                    .data()
                    .iter()
                    .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
                    .collect();
                ScalarField::new(d.height(), d.width(), data)
            })
            .collect::<Result<Vec<_>>>()?
    };
    out.predictions.insert(NOISY_KEY.to_string(), noisy);
    Ok(out)
}

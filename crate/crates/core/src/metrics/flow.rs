//! Flow estimation between depth maps, used by the motion-consistency
//! metric.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::io::read_flo;

/// Which pair of depth maps a flow request refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowRole {
    Prediction,
    GroundTruth,
}

/// Flow on `from` pointing into `to` for transition `transition` (t → t+1).
pub struct FlowRequest<'a> {
    pub transition: usize,
    pub role: FlowRole,
    pub from: &'a ScalarField<f64>,
    pub to: &'a ScalarField<f64>,
}

pub trait FlowProvider: Sync {
    fn flow(&self, request: &FlowRequest<'_>) -> Result<VectorField<f64>>;
}

/// Deterministic coarse-to-fine block matching with a 5×5 SAD window.
///
/// The coarsest level searches ±`radius` pixels around zero; every finer
/// level doubles the coarse estimate and refines it by ±1. Among equal
/// costs the smallest displacement wins.
#[derive(Clone, Copy, Debug)]
pub struct BlockMatchFlow {
    pub levels: usize,
    pub radius: i64,
    pub half_window: i64,
}

impl Default for BlockMatchFlow {
    fn default() -> Self {
        Self {
            levels: 3,
            radius: 2,
            half_window: 2,
        }
    }
}

fn downsample(f: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (nh, nw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        for x in 0..nw {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (f[i] + f[i + 1] + f[i + w] + f[i + w + 1]));
        }
    }
    (out, nh, nw)
}

/// Candidate offsets sorted so that ties resolve toward small displacements.
fn candidates(center: (i64, i64), radius: i64) -> Vec<(i64, i64)> {
    let mut c: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (center.0 + dx, center.1 + dy)))
        .collect();
    c.sort_by_key(|&(u, v)| (u.abs() + v.abs(), v.abs(), u.abs(), v, u));
    c
}

impl BlockMatchFlow {
    fn level(
        &self,
        from: &[f64],
        to: &[f64],
        h: usize,
        w: usize,
        init: &[(i64, i64)],
        radius: i64,
    ) -> Vec<(i64, i64)> {
        let hw = self.half_window;
        let at = |img: &[f64], x: i64, y: i64| -> f64 {
            img[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize]
        };
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut best = (0, 0);
                let mut best_cost = f64::INFINITY;
                for (u, v) in candidates(init[(y as usize) * w + x as usize], radius) {
                    let mut cost = 0.0;
                    for dy in -hw..=hw {
                        for dx in -hw..=hw {
                            cost +=
                                (at(from, x + dx, y + dy) - at(to, x + dx + u, y + dy + v)).abs();
                        }
                    }
                    if cost < best_cost {
                        best_cost = cost;
                        best = (u, v);
                    }
                }
                out.push(best);
            }
        }
        out
    }

    pub fn estimate(
        &self,
        from: &ScalarField<f64>,
        to: &ScalarField<f64>,
    ) -> Result<VectorField<f64>> {
        if from.dims() != to.dims() {
            return Err(Error::shape("block matching: images differ in size"));
        }
        let (h, w) = from.dims();
        let mut pyramid = vec![(from.data().to_vec(), to.data().to_vec(), h, w)];
        while pyramid.len() < self.levels.max(1) {
            let (a, b, ph, pw) = pyramid.last().expect("non-empty");
            if ph / 2 < 8 || pw / 2 < 8 {
                break;
            }
            let (da, nh, nw) = downsample(a, *ph, *pw);
            let (db, _, _) = downsample(b, *ph, *pw);
            pyramid.push((da, db, nh, nw));
        }
        let mut flow: Option<(Vec<(i64, i64)>, usize, usize)> = None;
        for (a, b, ph, pw) in pyramid.iter().rev() {
            let (init, radius) = match &flow {
                None => (vec![(0, 0); ph * pw], self.radius),
                Some((coarse, ch, cw)) => {
                    let mut init = Vec::with_capacity(ph * pw);
                    for y in 0..*ph {
                        for x in 0..*pw {
                            let (u, v) = coarse[(y / 2).min(ch - 1) * cw + (x / 2).min(cw - 1)];
                            init.push((2 * u, 2 * v));
                        }
                    }
                    (init, 1)
                }
            };
            flow = Some((self.level(a, b, *ph, *pw, &init, radius), *ph, *pw));
        }
        let (f, _, _) = flow.expect("at least one level");
        VectorField::new(
            h,
            w,
            f.iter().flat_map(|&(u, v)| [u as f64, v as f64]).collect(),
        )
    }
}

impl FlowProvider for BlockMatchFlow {
    fn flow(&self, request: &FlowRequest<'_>) -> Result<VectorField<f64>> {
        self.estimate(request.from, request.to)
    }
}

/// Flows computed elsewhere, one per transition and role.
#[derive(Clone, Debug)]
pub struct PrecomputedFlow {
    pub prediction: Vec<VectorField<f64>>,
    pub ground_truth: Vec<VectorField<f64>>,
}

impl PrecomputedFlow {
    /// Reads `pred_{t:06}.flo` and `gt_{t:06}.flo` for every transition.
    pub fn from_dir(dir: impl AsRef<Path>, transitions: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |stem: &str| -> Result<Vec<VectorField<f64>>> {
            (0..transitions)
                .map(|t| Ok(read_flo(dir.join(format!("{stem}_{t:06}.flo")))?.cast()))
                .collect()
        };
        Ok(Self {
            prediction: load("pred")?,
            ground_truth: load("gt")?,
        })
    }
}

impl FlowProvider for PrecomputedFlow {
    fn flow(&self, request: &FlowRequest<'_>) -> Result<VectorField<f64>> {
        let list = match request.role {
            FlowRole::Prediction => &self.prediction,
            FlowRole::GroundTruth => &self.ground_truth,
        };
        let f = list.get(request.transition).ok_or_else(|| {
            Error::invalid(format!(
                "no precomputed flow for transition {}",
                request.transition
            ))
        })?;
        if f.dims() != request.from.dims() {
            return Err(Error::shape(
                "precomputed flow size differs from the depth maps",
            ));
        }
        Ok(f.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize, shift: (i64, i64)) -> ScalarField<f64> {
        ScalarField::from_fn(h, w, |x, y| {
            let (x, y) = ((x as i64 + shift.0) as f64, (y as i64 + shift.1) as f64);
            (0.35 * x).sin() * (0.23 * y).cos() + 0.5 * (0.11 * x + 0.19 * y).sin() + 0.02 * x
        })
        .unwrap()
    }

    #[test]
    fn recovers_integer_translation() {
        // to(p) = from(p - s), so from(p) = to(p + s)
        let from = texture(32, 32, (0, 0));
        let to = texture(32, 32, (-3, 1));
        let f = BlockMatchFlow::default().estimate(&from, &to).unwrap();
        let (u, v) = f.get(16, 16);
        assert_eq!((u, v), (3.0, -1.0));
    }

    #[test]
    fn flat_images_give_zero_flow() {
        let a = ScalarField::filled(20, 24, 1.0);
        let f = BlockMatchFlow::default().estimate(&a, &a).unwrap();
        assert!(f.is_zero());
    }
}

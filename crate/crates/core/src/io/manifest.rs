//! JSON sequence manifests. Every path is relative to the directory holding
//! the manifest file.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_flo, read_pfm, read_ppm, write_flo, write_pfm, write_ppm};
use crate::error::{Error, Result};
use crate::field::{Calibration, ScalarField};
use crate::sequence::SequenceBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub left: String,
    pub right: String,
    pub disp_gt: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub predictions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_stereo: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub clip_id: String,
    pub height: usize,
    pub width: usize,
    pub calibration: Calibration,
    pub frame_rate: f64,
    pub frames: Vec<FrameEntry>,
    /// `flow_fwd[t]`: frame t → t+1.
    pub flow_fwd: Vec<String>,
    /// `flow_bwd[t]`: frame t+1 → t.
    pub flow_bwd: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_fwd: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_bwd: Option<Vec<String>>,
}

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

impl SequenceManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.check_structure()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Count and key consistency, without touching the referenced files.
    pub fn check_structure(&self) -> Result<()> {
        let t = self.frames.len();
        if t == 0 {
            return Err(manifest_err("no frames"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(manifest_err("height and width must be positive"));
        }
        if self.flow_fwd.len() != t - 1 || self.flow_bwd.len() != t - 1 {
            return Err(manifest_err(format!(
                "{t} frames need {} flows per direction, got {} forward and {} backward",
                t - 1,
                self.flow_fwd.len(),
                self.flow_bwd.len()
            )));
        }
        for (name, list) in [
            ("valid_fwd", &self.valid_fwd),
            ("valid_bwd", &self.valid_bwd),
        ] {
            if let Some(l) = list {
                if l.len() != t - 1 {
                    return Err(manifest_err(format!(
                        "{name} has {} entries, expected {}",
                        l.len(),
                        t - 1
                    )));
                }
            }
        }
        let keys: Vec<_> = self.frames[0].predictions.keys().collect();
        let stereo = self.frames[0].valid_stereo.is_some();
        for (i, f) in self.frames.iter().enumerate() {
            if f.predictions.keys().collect::<Vec<_>>() != keys {
                return Err(manifest_err(format!(
                    "frame {i} lists different prediction keys"
                )));
            }
            if f.valid_stereo.is_some() != stereo {
                return Err(manifest_err(format!(
                    "frame {i}: valid_stereo must be given for all frames or none"
                )));
            }
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(manifest_err(format!(
                "frame rate must be positive, got {}",
                self.frame_rate
            )));
        }
        self.calibration.validate()
    }

    /// Loads every referenced raster, checking that all of them match the
    /// declared dimensions.
    pub fn load(&self, base: impl AsRef<Path>) -> Result<SequenceBundle> {
        self.check_structure()?;
        let base = base.as_ref();
        let dims = (self.height, self.width);
        let check = |what: &str, rel: &str, d: (usize, usize)| -> Result<()> {
            if d != dims {
                return Err(manifest_err(format!(
                    "{what} `{rel}` is {}x{}, manifest declares {}x{}",
                    d.0, d.1, dims.0, dims.1
                )));
            }
            Ok(())
        };
        let scalar = |what: &str, rel: &str| -> Result<ScalarField> {
            let f = read_pfm(base.join(rel))?;
            check(what, rel, f.dims())?;
            Ok(f)
        };
        let t = self.frames.len();
        let mut left = Vec::with_capacity(t);
        let mut right = Vec::with_capacity(t);
        let mut disp_gt = Vec::with_capacity(t);
        let mut predictions: BTreeMap<String, Vec<ScalarField>> = BTreeMap::new();
        let mut valid_stereo = self.frames[0]
            .valid_stereo
            .as_ref()
            .map(|_| Vec::with_capacity(t));
        for f in &self.frames {
            let l = read_ppm(base.join(&f.left))?;
            check("left image", &f.left, l.dims())?;
            let r = read_ppm(base.join(&f.right))?;
            check("right image", &f.right, r.dims())?;
            left.push(l);
            right.push(r);
            disp_gt.push(scalar("disparity", &f.disp_gt)?);
            for (k, rel) in &f.predictions {
                predictions
                    .entry(k.clone())
                    .or_default()
                    .push(scalar("prediction", rel)?);
            }
            if let (Some(v), Some(rel)) = (valid_stereo.as_mut(), &f.valid_stereo) {
                v.push(scalar("mask", rel)?);
            }
        }
        let flows = |list: &[String]| -> Result<Vec<_>> {
            list.iter()
                .map(|rel| {
                    let f = read_flo(base.join(rel))?;
                    check("flow", rel, f.dims())?;
                    Ok(f)
                })
                .collect()
        };
        let masks = |list: &Option<Vec<String>>| -> Result<Option<Vec<_>>> {
            list.as_ref()
                .map(|l| l.iter().map(|rel| scalar("mask", rel)).collect())
                .transpose()
        };
        let bundle = SequenceBundle {
            clip_id: self.clip_id.clone(),
            left,
            right,
            flow_fwd: flows(&self.flow_fwd)?,
            flow_bwd: flows(&self.flow_bwd)?,
            disp_gt,
            predictions,
            valid_fwd: masks(&self.valid_fwd)?,
            valid_bwd: masks(&self.valid_bwd)?,
            valid_stereo,
            calibration: self.calibration,
            frame_rate: self.frame_rate,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Reads a manifest and loads its bundle relative to the manifest's directory.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, SequenceBundle)> {
        let path = path.as_ref();
        let m = Self::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let bundle = m.load(base)?;
        Ok((m, bundle))
    }
}

/// Writes every raster of `bundle` under `dir` and a `manifest.json`
/// describing them. Returns the manifest path.
pub fn write_bundle(bundle: &SequenceBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    bundle.validate()?;
    let dir = dir.as_ref();
    let mut subdirs = vec!["left", "right", "disp_gt", "flow_fwd", "flow_bwd"];
    if bundle.valid_fwd.is_some() || bundle.valid_bwd.is_some() || bundle.valid_stereo.is_some() {
        subdirs.push("masks");
    }
    let pred_dirs: Vec<String> = bundle
        .predictions
        .keys()
        .map(|k| format!("pred_{k}"))
        .collect();
    for sub in subdirs
        .iter()
        .copied()
        .chain(pred_dirs.iter().map(String::as_str))
    {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let mut frames = Vec::with_capacity(bundle.len());
    for t in 0..bundle.len() {
        let entry = FrameEntry {
            left: format!("left/{t:06}.ppm"),
            right: format!("right/{t:06}.ppm"),
            disp_gt: format!("disp_gt/{t:06}.pfm"),
            predictions: bundle
                .predictions
                .keys()
                .map(|k| (k.clone(), format!("pred_{k}/{t:06}.pfm")))
                .collect(),
            valid_stereo: bundle
                .valid_stereo
                .as_ref()
                .map(|_| format!("masks/stereo_{t:06}.pfm")),
        };
        write_ppm(dir.join(&entry.left), &bundle.left[t])?;
        write_ppm(dir.join(&entry.right), &bundle.right[t])?;
        write_pfm(dir.join(&entry.disp_gt), &bundle.disp_gt[t])?;
        for (k, rel) in &entry.predictions {
            write_pfm(dir.join(rel), &bundle.predictions[k][t])?;
        }
        if let (Some(v), Some(rel)) = (&bundle.valid_stereo, &entry.valid_stereo) {
            write_pfm(dir.join(rel), &v[t])?;
        }
        frames.push(entry);
    }
    let mut flow_fwd = Vec::new();
    let mut flow_bwd = Vec::new();
    for t in 0..bundle.flow_fwd.len() {
        let f = format!("flow_fwd/{t:06}.flo");
        let b = format!("flow_bwd/{t:06}.flo");
        write_flo(dir.join(&f), &bundle.flow_fwd[t])?;
        write_flo(dir.join(&b), &bundle.flow_bwd[t])?;
        flow_fwd.push(f);
        flow_bwd.push(b);
    }
    let masks = |list: &Option<Vec<ScalarField>>, stem: &str| -> Result<Option<Vec<String>>> {
        list.as_ref()
            .map(|l| {
                l.iter()
                    .enumerate()
                    .map(|(t, m)| {
                        let rel = format!("masks/{stem}_{t:06}.pfm");
                        write_pfm(dir.join(&rel), m)?;
                        Ok(rel)
                    })
                    .collect()
            })
            .transpose()
    };
    let (h, w) = bundle.dims();
    let manifest = SequenceManifest {
        clip_id: bundle.clip_id.clone(),
        height: h,
        width: w,
        calibration: bundle.calibration,
        frame_rate: bundle.frame_rate,
        frames,
        flow_fwd,
        flow_bwd,
        valid_fwd: masks(&bundle.valid_fwd, "fwd")?,
        valid_bwd: masks(&bundle.valid_bwd, "bwd")?,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// Expresses `target` relative to directory `from`. Both are resolved
/// against the filesystem when possible; falls back to the absolute target
/// when no relative form exists (e.g. different drive prefixes).
pub fn relative_path(from: impl AsRef<Path>, target: impl AsRef<Path>) -> PathBuf {
    let abs = |p: &Path| -> PathBuf {
        std::fs::canonicalize(p).unwrap_or_else(|_| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                std::env::current_dir()
                    .map(|c| c.join(p))
                    .unwrap_or_else(|_| p.to_path_buf())
            }
        })
    };
    let from = abs(from.as_ref());
    let target = abs(target.as_ref());
    let fc: Vec<Component> = from.components().collect();
    let tc: Vec<Component> = target.components().collect();
    if fc.first() != tc.first() {
        return target;
    }
    let common = fc.iter().zip(&tc).take_while(|(a, b)| a == b).count();
    let mut out = PathBuf::new();
    for _ in common..fc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c.as_os_str());
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        assert_eq!(
            relative_path("/a/b", "/a/b/c/d.pfm"),
            PathBuf::from("c/d.pfm")
        );
        assert_eq!(
            relative_path("/a/b/x", "/a/b/c/d.pfm"),
            PathBuf::from("../c/d.pfm")
        );
        assert_eq!(relative_path("/a", "/a"), PathBuf::from("."));
    }
}

//! Loading input clips and writing derived sequences beside them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bida_core::io::{relative_path, write_pfm, SequenceManifest};
use bida_core::{ScalarField, SequenceBundle};

pub struct Source {
    pub dir: PathBuf,
    pub manifest: SequenceManifest,
    pub bundle: SequenceBundle,
}

/// Reads and fully validates a manifest and every raster it references.
pub fn open(path: &Path) -> Result<Source> {
    let (manifest, bundle) = SequenceManifest::open(path)
        .with_context(|| format!("loading manifest {}", path.display()))?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(Source {
        dir,
        manifest,
        bundle,
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn portable(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes `frames` as `out/<key>/NNNNNN.pfm` and a copy of the source
/// manifest at `out/manifest.json` that also lists them under `key`. Paths
/// of the original rasters are rewritten relative to `out`.
pub fn write_prediction(
    src: &Source,
    out: &Path,
    key: &str,
    frames: &[ScalarField],
) -> Result<PathBuf> {
    anyhow::ensure!(
        !key.is_empty()
            && key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'),
        "prediction key `{key}` must be non-empty ASCII letters, digits, `_` or `-`"
    );
    anyhow::ensure!(frames.len() == src.bundle.len(), "frame count changed");
    create_dir(&out.join(key))?;
    let rebase = |rel: &str| portable(&relative_path(out, src.dir.join(rel)));
    let mut m = src.manifest.clone();
    for (t, (entry, d)) in m.frames.iter_mut().zip(frames).enumerate() {
        entry.left = rebase(&entry.left);
        entry.right = rebase(&entry.right);
        entry.disp_gt = rebase(&entry.disp_gt);
        for p in entry.predictions.values_mut() {
            *p = rebase(p);
        }
        if let Some(v) = entry.valid_stereo.as_mut() {
            *v = rebase(v);
        }
        let rel = format!("{key}/{t:06}.pfm");
        write_pfm(out.join(&rel), d)?;
        entry.predictions.insert(key.to_string(), rel);
    }
    for list in [&mut m.flow_fwd, &mut m.flow_bwd]
        .into_iter()
        .chain(m.valid_fwd.iter_mut())
        .chain(m.valid_bwd.iter_mut())
    {
        for p in list.iter_mut() {
            *p = rebase(p);
        }
    }
    let path = out.join("manifest.json");
    m.write(&path)?;
    Ok(path)
}

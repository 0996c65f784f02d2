use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use bida_core::field::{warp_by_flow, warp_scalar_by_flow};
use bida_core::io::{read_weights, write_bundle, write_pfm, write_ppm, write_weights};
use bida_core::losses::gradcheck::{stabilizer_gradcheck, StabilizerCheckSize};
use bida_core::losses::LossConfig;
use bida_core::metrics::{evaluate, EvalOptions, MetricReport, PrecomputedFlow};
use bida_core::sequence::neighbors;
use bida_core::stabilizer::{Stabilizer, StabilizerConfig};
use bida_core::stereo::{
    fit_matching, matching_grid, matching_weights, random_weights, MatchingParams, StereoConfig,
    StereoNet, StereoOptions,
};
use bida_core::synth::{generate, perturb, SceneSpec};
use bida_core::train::{train_stabilizer, AdamW, Optimizer, TrainConfig};
use bida_core::WeightBank;

use crate::output::{create_dir, open, write_prediction};
use crate::{
    AlignArgs, GenArgs, GradcheckArgs, InferArgs, InitArgs, MetricsArgs, ModelKind, OptimizerKind,
};
use crate::{StabilizeArgs, TrainArgs, WeightKind};

/// A check ran to completion and failed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen(a: GenArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SceneSpec::two_layer(a.seed, a.height, a.width, a.frames),
    };
    let mut bundle = generate(&spec)?;
    if let Some(sigma) = a.noise {
        bundle = perturb(&bundle, sigma, a.noise_seed)?;
    }
    create_dir(&a.out)?;
    let path = write_bundle(&bundle, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_metric_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["kind", "frame", "epe", "tepe", "opw", "rtc", "tcc", "tcm"])?;
    for r in &report.per_frame {
        w.write_record([
            "frame",
            &r.frame.to_string(),
            &r.epe.to_string(),
            "",
            "",
            "",
            "",
            "",
        ])?;
    }
    for r in &report.per_transition {
        w.write_record([
            "transition",
            &r.frame.to_string(),
            "",
            &r.tepe.to_string(),
            &opt(r.opw),
            &opt(r.rtc),
            &r.tcc.to_string(),
            &r.tcm.to_string(),
        ])?;
    }
    let g = &report.aggregate;
    w.write_record([
        "aggregate",
        "",
        &g.epe.to_string(),
        &opt(g.tepe),
        &opt(g.opw),
        &opt(g.rtc),
        &opt(g.tcc),
        &opt(g.tcm),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let src = open(&a.manifest)?;
    src.bundle.prediction(&a.pred_key)?;
    let precomputed = a
        .flow_dir
        .as_ref()
        .map(|d| PrecomputedFlow::from_dir(d, src.bundle.len().saturating_sub(1)))
        .transpose()?;
    let mut options = EvalOptions::default();
    if let Some(p) = &precomputed {
        options.flow_provider = p;
    }
    let report = evaluate(&src.bundle, &a.pred_key, &options)?;
    write_json(&a.report, &report)?;
    if let Some(csv) = &a.csv {
        write_metric_csv(csv, &report)?;
    }
    let g = &report.aggregate;
    println!(
        "{} `{}`: EPE {:.4} TEPE {} OPW {} RTC {} TCC {} TCM {}",
        report.clip_id,
        report.prediction,
        g.epe,
        opt(g.tepe),
        opt(g.opw),
        opt(g.rtc),
        opt(g.tcc),
        opt(g.tcm)
    );
    Ok(())
}

pub fn align(a: AlignArgs) -> Result<()> {
    let src = open(&a.manifest)?;
    let b = &src.bundle;
    let disp = if a.key == "gt" {
        &b.disp_gt[..]
    } else {
        b.prediction(&a.key)?
    };
    create_dir(&a.out)?;
    let (len, dims) = (b.len(), b.dims());
    for t in 0..len {
        let n = neighbors(&b.flow_fwd, &b.flow_bwd, t, len, dims);
        let sides = [
            ("prev", n.prev, n.flow_prev.get()),
            ("next", n.next, n.flow_next.get()),
        ];
        for (side, k, flow) in sides {
            write_pfm(
                a.out.join(format!("{side}_disp_{t:06}.pfm")),
                &warp_scalar_by_flow(&disp[k], flow)?,
            )?;
            write_ppm(
                a.out.join(format!("{side}_left_{t:06}.ppm")),
                &warp_by_flow(&b.left[k], flow)?,
            )?;
        }
    }
    println!("aligned {len} frames into {}", a.out.display());
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let src = open(&a.manifest)?;
    let bank = read_weights(&a.weights)?;
    let net = StereoNet::from_bank(&bank, StereoOptions::default())?;
    let out = net.infer(&src.bundle, a.iters)?;
    let path = write_prediction(&src, &a.out, &a.key, &out)?;
    println!("{}", path.display());
    Ok(())
}

pub fn stabilize(a: StabilizeArgs) -> Result<()> {
    let src = open(&a.manifest)?;
    let input = src.bundle.prediction(&a.pred_key)?;
    let model = Stabilizer::<f32>::from_bank(&read_weights(&a.weights)?)?;
    let out = model.forward(input, &src.bundle.flow_fwd, &src.bundle.flow_bwd)?;
    let path = write_prediction(&src, &a.out, &a.key, &out.corrected)?;
    println!("{}", path.display());
    Ok(())
}

pub fn train_toy(a: TrainArgs) -> Result<()> {
    let src = open(&a.manifest)?;
    let input = src.bundle.prediction(&a.pred_key)?;
    let nonzero = |v: usize| (v > 0).then_some(v);
    let cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        loss: LossConfig {
            gamma: a.gamma,
            lambda: a.lambda,
            ..LossConfig::stabilizer()
        },
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adamw => Optimizer::AdamW(AdamW::default()),
        },
        model: StabilizerConfig {
            feature: a.width,
            hidden: a.width,
            fusion: a.width,
            normalize: a.normalize,
            ..StabilizerConfig::default()
        },
        crop: nonzero(a.crop),
        window: nonzero(a.window),
    };
    let curve_path = a
        .curve
        .clone()
        .unwrap_or_else(|| a.out.with_extension("csv"));
    let mut w = csv::Writer::from_path(&curve_path)
        .with_context(|| format!("writing {}", curve_path.display()))?;
    let mut write_err = None;
    let b = &src.bundle;
    let outcome = train_stabilizer(input, &b.disp_gt, &b.flow_fwd, &b.flow_bwd, &cfg, |p| {
        if write_err.is_none() {
            write_err = w.serialize(p).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    w.flush()?;
    write_weights(&a.out, &outcome.model.to_bank())?;
    println!(
        "total loss {:.6} -> {:.6} (spatial {:.6} -> {:.6}, temporal {:.6} -> {:.6})",
        outcome.initial.total,
        outcome.final_loss.total,
        outcome.initial.spatial,
        outcome.final_loss.spatial,
        outcome.initial.temporal,
        outcome.final_loss.temporal
    );
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = stabilizer_gradcheck(
        a.seed,
        StabilizerCheckSize::default(),
        StabilizerConfig::default(),
    )?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    println!(
        "{} probes, max relative error {:.3e}, mean {:.3e}",
        report.probes.len(),
        report.max_rel_err,
        report.mean_rel_err
    );
    if !report.passes(a.tolerance) {
        return Err(CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_err, a.tolerance
        ))
        .into());
    }
    Ok(())
}

fn stereo_weights(a: &InitArgs) -> Result<WeightBank> {
    let config = StereoConfig::default();
    Ok(match a.kind {
        WeightKind::Random => random_weights(&config, a.seed)?,
        WeightKind::Zero => WeightBank::zeros(&config.tensor_specs()),
        WeightKind::Matching => {
            let mut params = MatchingParams::default();
            if let Some(path) = &a.fit {
                let src = open(path)?;
                let (best, epe) = fit_matching(
                    &config,
                    &StereoOptions::default(),
                    &src.bundle,
                    a.iters,
                    &matching_grid(),
                )?;
                println!("fitted {best:?}, clip EPE {epe:.4}");
                params = best;
            }
            if let Some(g) = a.gain {
                params.gain = g;
            }
            if let Some(e) = &a.edge {
                params.edge = [e[0], e[1], e[2]];
            }
            matching_weights(&config, params)?
        }
    })
}

pub fn init_weights(a: InitArgs) -> Result<()> {
    let bank = match a.model {
        ModelKind::Stereo => stereo_weights(&a)?,
        ModelKind::Stabilizer => {
            ensure!(
                a.fit.is_none() && a.gain.is_none() && a.edge.is_none(),
                "matching options apply to stereo weights only"
            );
            let config = StabilizerConfig::default();
            match a.kind {
                WeightKind::Random => Stabilizer::<f32>::random(config, a.seed, false)?.to_bank(),
                WeightKind::Zero => Stabilizer::<f32>::zeros(config)?.to_bank(),
                WeightKind::Matching => bail!("matching weights exist for the stereo network only"),
            }
        }
    };
    write_weights(&a.out, &bank)?;
    println!("{} tensors, {} parameters", bank.len(), bank.param_count());
    Ok(())
}

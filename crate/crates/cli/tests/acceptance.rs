//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bida_core::correlation::{triple_cost_volume, CorrelationNorm, SearchRange};
use bida_core::field::{warp_by_flow, ChannelField, ScalarField, VectorField};
use bida_core::io::{
    decode_flo, decode_pfm, decode_ppm, decode_weights, encode_flo, encode_pfm, encode_ppm,
    encode_weights, read_pfm, read_weights, SequenceManifest,
};
use bida_core::losses::{spatial_loss, total_loss, LossConfig};
use bida_core::metrics::{epe, evaluate, tcc, temporal_bad_rate, tepe, EvalOptions};
use bida_core::stabilizer::Stabilizer;
use bida_core::synth::{generate, SceneSpec};
use bida_core::train::clip_loss;
use bida_core::{Tensor, WeightBank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn bida(args: &[&str], threads: &str) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bida"))
        .args(args)
        .env("BIDA_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`bida {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

// 1 -------------------------------------------------------------------------

fn warp_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, w) = (13, 17);
    let f = ok(ChannelField::<f32>::from_fn(h, w, 3, |_, _, _| {
        rng.random_range(-5.0..5.0)
    }))?;
    let same = ok(warp_by_flow(&f, &VectorField::zeros(h, w)))?;
    ensure!(
        same.data()
            .iter()
            .zip(f.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "zero flow changed the field"
    );

    let far = ok(warp_by_flow(
        &f,
        &VectorField::constant(h, w, 100.0, -100.0),
    ))?;
    for y in 0..h {
        for x in 0..w {
            ensure!(
                far.pixel(x, y) == f.pixel(w - 1, 0),
                "edge clamp at ({x},{y})"
            );
        }
    }
    let int = ok(warp_by_flow(&f, &VectorField::constant(h, w, 2.0, -1.0)))?;
    for y in 1..h {
        for x in 0..w - 2 {
            ensure!(
                int.pixel(x, y) == f.pixel(x + 2, y - 1),
                "integer shift at ({x},{y})"
            );
        }
    }
    let half = ok(warp_by_flow(&f, &VectorField::constant(h, w, 0.5, 0.0)))?;
    let expect = 0.5 * f.at(3, 4, 1) + 0.5 * f.at(4, 4, 1);
    ensure!(
        (half.at(3, 4, 1) - expect).abs() <= 1e-6,
        "half-pixel interpolation"
    );
    Ok("zero flow bit-exact, clamp and integer shifts exact".into())
}

// 2 -------------------------------------------------------------------------

/// Bilinear sample with edge clamping, written independently of the library.
fn sample(f: &[f64], h: usize, w: usize, c: usize, x: f64, y: f64, k: usize) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| f[(yy * w + xx) * c + k];
    (1.0 - fx) * (1.0 - fy) * at(x0, y0)
        + fx * (1.0 - fy) * at(x1, y0)
        + (1.0 - fx) * fy * at(x0, y1)
        + fx * fy * at(x1, y1)
}

fn correlation_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ranges = [SearchRange::horizontal(4), SearchRange::square(1)];
    let mut worst = 0.0f64;
    for instance in 0..100 {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let c = rng.random_range(1..=4);
        let mut field = |ch: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..h * w * ch).map(|_| rng.random_range(lo..hi)).collect()
        };
        let left = field(c, -1.0, 1.0);
        let rights = [
            field(c, -1.0, 1.0),
            field(c, -1.0, 1.0),
            field(c, -1.0, 1.0),
        ];
        let fp = field(2, -2.0, 2.0);
        let fnx = field(2, -2.0, 2.0);
        let disp = field(1, 0.0, 3.0);

        let cf = |v: &[f64], ch: usize| ChannelField::<f64>::new(h, w, ch, v.to_vec()).unwrap();
        let vf = |v: &[f64]| VectorField::<f64>::new(h, w, v.to_vec()).unwrap();
        let range = &ranges[instance % 2];
        let n = range.len();
        let cv = ok(triple_cost_volume(
            &cf(&left, c),
            &cf(&rights[0], c),
            &cf(&rights[1], c),
            &cf(&rights[2], c),
            &vf(&fp),
            &vf(&fnx),
            &ScalarField::new(h, w, disp.clone()).unwrap(),
            range,
            CorrelationNorm::Mean,
        ))?;
        let got = cv.field();
        for (b, right) in rights.iter().enumerate() {
            // align onto the center frame, then shift by the disparity
            let aligned: Vec<f64> = match b {
                1 => right.clone(),
                _ => {
                    let flow = if b == 0 { &fp } else { &fnx };
                    let mut a = vec![0.0; h * w * c];
                    for y in 0..h {
                        for x in 0..w {
                            let i = y * w + x;
                            for k in 0..c {
                                a[i * c + k] = sample(
                                    right,
                                    h,
                                    w,
                                    c,
                                    x as f64 + flow[2 * i],
                                    y as f64 + flow[2 * i + 1],
                                    k,
                                );
                            }
                        }
                    }
                    a
                }
            };
            let mut shifted = vec![0.0; h * w * c];
            for y in 0..h {
                for x in 0..w {
                    for k in 0..c {
                        shifted[(y * w + x) * c + k] =
                            sample(&aligned, h, w, c, x as f64 - disp[y * w + x], y as f64, k);
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    for (o, &(dx, dy)) in range.offsets().iter().enumerate() {
                        let sx = (x as i64 + dx as i64).clamp(0, w as i64 - 1) as usize;
                        let sy = (y as i64 + dy as i64).clamp(0, h as i64 - 1) as usize;
                        let mut acc = 0.0;
                        for k in 0..c {
                            acc += left[(y * w + x) * c + k] * shifted[(sy * w + sx) * c + k];
                        }
                        let expect = acc / c as f64;
                        let diff = (got.at(x, y, b * n + o) - expect).abs();
                        worst = worst.max(diff);
                    }
                }
            }
        }
    }
    ensure!(worst <= 1e-6, "max deviation {worst:.3e}");
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

// 3 -------------------------------------------------------------------------

fn metric_fixed_points() -> Check {
    for seed in 1..=5u64 {
        let mut b = ok(generate(&SceneSpec::two_layer(seed, 32, 48, 5)))?;
        b.predictions.insert("gt".into(), b.disp_gt.clone());
        let r = ok(evaluate(&b, "gt", &EvalOptions::default()))?;
        let g = &r.aggregate;
        ensure!(
            g.epe == 0.0 && g.tepe == Some(0.0) && g.opw == Some(0.0),
            "seed {seed}: EPE/TEPE/OPW {:?} {:?} {:?}",
            g.epe,
            g.tepe,
            g.opw
        );
        ensure!(
            g.rtc == Some(1.0) && g.tcc == Some(1.0),
            "seed {seed}: RTC/TCC {:?} {:?}",
            g.rtc,
            g.tcc
        );
        ensure!(g.tcm == Some(1.0), "seed {seed}: TCM {:?}", g.tcm);
    }
    Ok("5 seeds: EPE=TEPE=OPW=0, RTC=TCC=TCM=1".into())
}

// 4 -------------------------------------------------------------------------

fn static_bias() -> Check {
    let b = ok(generate(&SceneSpec::two_layer(3, 32, 48, 6)))?;
    let gt = &b.disp_gt;
    let d: Vec<ScalarField> = gt.iter().map(|f| f.map(|v| v + 3.0)).collect();
    let t = ok(tepe(&d, gt, None))?;
    ensure!(t == 0.0, "TEPE {t}");
    for n in [1.0, 3.0] {
        let r = ok(temporal_bad_rate(&d, gt, None, n))?;
        ensure!(r == 0.0, "temporal bad rate at {n}px: {r}");
    }
    for (a, g) in d.iter().zip(gt) {
        let e = ok(epe(a, g, None))?;
        ensure!(e == 3.0, "EPE {e}");
    }
    let c = ok(tcc(&d, gt, &b.flow_fwd))?;
    ensure!(c == 1.0, "TCC {c}");
    Ok("TEPE=0, temporal bad rates 0, EPE=3, TCC=1".into())
}

// 5 -------------------------------------------------------------------------

fn tepe_hand_case() -> Check {
    let len = 7;
    let gt: Vec<ScalarField<f64>> = (0..len)
        .map(|t| ScalarField::from_fn(5, 9, |x, y| (2 * x + y + 3 * t) as f64 * 0.125).unwrap())
        .collect();
    let mut d = gt.clone();
    d[3] = d[3].map(|v| v + 1.0);
    let ours = ok(tepe(&d, &gt, None))?;
    let mut sum = 0.0;
    let mut count = 0;
    for t in 0..len - 1 {
        for y in 0..5 {
            for x in 0..9 {
                sum += ((d[t + 1].get(x, y) - d[t].get(x, y))
                    - (gt[t + 1].get(x, y) - gt[t].get(x, y)))
                .abs();
                count += 1;
            }
        }
    }
    let brute = sum / count as f64;
    let expected = 2.0 / (len - 1) as f64;
    ensure!(
        (ours - expected).abs() <= 1e-9,
        "TEPE {ours}, expected {expected}"
    );
    ensure!(
        (ours - brute).abs() <= 1e-9,
        "TEPE {ours}, brute force {brute}"
    );
    Ok(format!("TEPE {ours:.12} = 2/{}", len - 1))
}

// 6 -------------------------------------------------------------------------

fn rtc_threshold() -> Check {
    use bida_core::metrics::rtc;
    let zero = vec![VectorField::<f64>::zeros(4, 4)];
    let base = ScalarField::filled(4, 4, 100.0f64);
    let at = |v: f64| rtc(&[base.clone(), ScalarField::filled(4, 4, v)], &zero, None);
    let edge = ok(at(101.0))?;
    let inside = ok(at(100.5))?;
    ensure!(
        (101.0f64 / 100.0).to_bits() == 1.01f64.to_bits(),
        "ratio is not exactly 1.01"
    );
    ensure!(edge == 0.0, "ratio 1.01 counted consistent ({edge})");
    ensure!(inside == 1.0, "ratio 1.005 counted inconsistent ({inside})");
    let reversed = ok(rtc(
        &[ScalarField::filled(4, 4, 101.0f64), base.clone()],
        &zero,
        None,
    ))?;
    ensure!(reversed == 0.0, "reversed ratio 1.01 counted consistent");
    Ok("1.01 inconsistent, 1.005 consistent".into())
}

// 7 -------------------------------------------------------------------------

fn gradient_check() -> Check {
    use bida_core::losses::gradcheck::{stabilizer_gradcheck, StabilizerCheckSize};
    use bida_core::stabilizer::StabilizerConfig;
    let mut worst = 0.0f64;
    for seed in [1, 2, 3] {
        let r = ok(stabilizer_gradcheck(
            seed,
            StabilizerCheckSize::default(),
            StabilizerConfig::default(),
        ))?;
        ensure!(r.step == 1e-5, "step {}", r.step);
        worst = worst.max(r.max_rel_err);
    }
    ensure!(worst <= 1e-6, "max relative error {worst:.3e}");
    Ok(format!(
        "3 seeds at 32x64x5, max relative error {worst:.2e}"
    ))
}

// 8 -------------------------------------------------------------------------

fn zero_networks(root: &Path) -> Check {
    let clip = root.join("zero_clip");
    bida(
        &[
            "gen",
            "--seed",
            "2",
            "--height",
            "32",
            "--width",
            "64",
            "--frames",
            "4",
            "--noise",
            "0.5",
            "--out",
            s(&clip),
        ],
        "0",
    )?;
    let manifest = clip.join("manifest.json");
    let stab_w = root.join("zero_stab.bdwt");
    let stereo_w = root.join("zero_stereo.bdwt");
    bida(
        &[
            "init-weights",
            "--model",
            "stabilizer",
            "--kind",
            "zero",
            "--out",
            s(&stab_w),
        ],
        "0",
    )?;
    bida(
        &[
            "init-weights",
            "--model",
            "stereo",
            "--kind",
            "zero",
            "--out",
            s(&stereo_w),
        ],
        "0",
    )?;
    let out = root.join("zero_stabilized");
    bida(
        &[
            "stabilize",
            "--manifest",
            s(&manifest),
            "--weights",
            s(&stab_w),
            "--out",
            s(&out),
        ],
        "0",
    )?;
    let m = ok(SequenceManifest::read(&manifest))?;
    for (t, f) in m.frames.iter().enumerate() {
        let input = ok(std::fs::read(clip.join(&f.predictions["pred"])))?;
        let output = ok(std::fs::read(out.join(format!("stabilized/{t:06}.pfm"))))?;
        ensure!(input == output, "stabilize changed frame {t}");
    }
    let inf = root.join("zero_infer");
    bida(
        &[
            "infer",
            "--manifest",
            s(&manifest),
            "--weights",
            s(&stereo_w),
            "--out",
            s(&inf),
        ],
        "0",
    )?;
    for t in 0..m.frames.len() {
        let d = ok(read_pfm(inf.join(format!("infer/{t:06}.pfm"))))?;
        ensure!(
            d.data().iter().all(|v| v.to_bits() == 0),
            "infer frame {t} is not blank"
        );
    }
    Ok("zero stabilizer is the identity, zero stereo net is blank (bit-exact)".into())
}

// 9 -------------------------------------------------------------------------

fn stabilization_efficacy(root: &Path) -> Check {
    let clip = root.join("train_clip");
    bida(
        &[
            "gen",
            "--seed",
            "1",
            "--height",
            "64",
            "--width",
            "64",
            "--frames",
            "10",
            "--noise",
            "0.5",
            "--noise-seed",
            "7",
            "--out",
            s(&clip),
        ],
        "0",
    )?;
    let manifest = clip.join("manifest.json");
    let weights = root.join("trained.bdwt");
    let start = Instant::now();
    bida(
        &[
            "train-toy",
            "--manifest",
            s(&manifest),
            "--steps",
            "500",
            "--seed",
            "0",
            "--out",
            s(&weights),
        ],
        "0",
    )?;
    let out = root.join("trained_out");
    bida(
        &[
            "stabilize",
            "--manifest",
            s(&manifest),
            "--weights",
            s(&weights),
            "--out",
            s(&out),
        ],
        "0",
    )?;
    let elapsed = start.elapsed();
    let noisy = root.join("noisy.json");
    let stab = root.join("stab.json");
    bida(
        &[
            "metrics",
            "--manifest",
            s(&manifest),
            "--pred-key",
            "pred",
            "--report",
            s(&noisy),
        ],
        "0",
    )?;
    bida(
        &[
            "metrics",
            "--manifest",
            s(&out.join("manifest.json")),
            "--pred-key",
            "stabilized",
            "--report",
            s(&stab),
        ],
        "0",
    )?;
    let agg = |p: &Path| -> Result<(f64, f64), String> {
        let v: serde_json::Value = ok(serde_json::from_str(&ok(std::fs::read_to_string(p))?))?;
        let a = &v["aggregate"];
        Ok((
            a["opw"].as_f64().ok_or("no OPW")?,
            a["epe"].as_f64().ok_or("no EPE")?,
        ))
    };
    let (opw0, epe0) = agg(&noisy)?;
    let (opw1, epe1) = agg(&stab)?;

    let (_, b) = ok(SequenceManifest::open(&manifest))?;
    let model = ok(Stabilizer::<f32>::from_bank(&ok(read_weights(&weights))?))?;
    let identity = ok(Stabilizer::<f32>::zeros(*model.config()))?;
    let input = ok(b.prediction("pred"))?;
    let loss = LossConfig::stabilizer();
    let initial = ok(clip_loss(
        &identity,
        input,
        &b.disp_gt,
        &b.flow_fwd,
        &b.flow_bwd,
        &loss,
    ))?
    .total;
    let trained = ok(clip_loss(
        &model,
        input,
        &b.disp_gt,
        &b.flow_fwd,
        &b.flow_bwd,
        &loss,
    ))?
    .total;

    let detail = format!(
        "OPW {opw0:.4} -> {opw1:.4} ({:.1}%), EPE {epe0:.4} -> {epe1:.4}, loss {initial:.3} -> {trained:.3}, {:.0} s",
        100.0 * opw1 / opw0,
        elapsed.as_secs_f64()
    );
    ensure!(opw1 <= 0.7 * opw0, "{detail}: OPW not reduced to 70%");
    ensure!(
        epe1 <= 1.05 * epe0,
        "{detail}: EPE increased by more than 5%"
    );
    ensure!(trained < 0.5 * initial, "{detail}: loss not halved");
    ensure!(
        elapsed < Duration::from_secs(300),
        "{detail}: over 5 minutes"
    );
    Ok(detail)
}

// 10 ------------------------------------------------------------------------

fn loss_formulas() -> Check {
    let gt = vec![ScalarField::filled(3, 4, 2.0f64)];
    let preds = vec![
        vec![ScalarField::filled(3, 4, 3.0f64)],
        vec![ScalarField::filled(3, 4, 1.0f64)],
    ];
    let l = ok(spatial_loss(&preds, &gt, 0.9))?;
    ensure!(l == 1.9, "gamma weighting gave {l}");
    let single = ok(spatial_loss(&preds[..1], &gt, 0.9))?;
    ensure!(single == 1.0, "single prediction gave {single}");
    ensure!(total_loss(1.0, 2.0, 0.2) == 1.4, "lambda mixing 1 + 0.2*2");
    ensure!(total_loss(0.5, 4.0, 0.0) == 0.5, "lambda 0");
    ensure!(total_loss(3.0, 1.0, 1.0) == 4.0, "lambda 1");
    let c = LossConfig::stabilizer();
    ensure!(
        c.gamma == 0.9 && c.lambda == 0.2,
        "stabilizer defaults {c:?}"
    );
    Ok("gamma example 1.9, lambda mixing exact".into())
}

// 11 ------------------------------------------------------------------------

fn format_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut vals = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1e3..1e3)).collect() };
    let pfm = ok(ScalarField::new(5, 7, vals(35)))?;
    let back = ok(decode_pfm(&encode_pfm(&pfm)))?;
    ensure!(
        back.data()
            .iter()
            .zip(pfm.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "PFM"
    );
    let flo = ok(VectorField::new(4, 6, vals(48)))?;
    let back = ok(decode_flo(&encode_flo(&flo)))?;
    ensure!(
        back.data()
            .iter()
            .zip(flo.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "FLO"
    );

    let mut bank = WeightBank::default();
    bank.insert("a.w".into(), ok(Tensor::new(vec![2, 3], vals(6)))?);
    bank.insert("b".into(), ok(Tensor::new(vec![4], vals(4)))?);
    let bytes = encode_weights(&bank);
    let back = ok(decode_weights(&bytes))?;
    ensure!(encode_weights(&back) == bytes && back == bank, "weights");

    let img = ok(ChannelField::<f32>::from_fn(6, 5, 3, |x, y, c| {
        ((x * 7 + y * 3 + c * 11) % 23) as f32 / 22.0 + 0.0013
    }))?;
    let back = ok(decode_ppm(&ok(encode_ppm(&img))?))?;
    let worst = back
        .data()
        .iter()
        .zip(img.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    ensure!(worst <= 1.0 / 510.0 + 1e-7, "PPM error {worst}");

    let golden: [u8; 20] = [
        0x50, 0x49, 0x45, 0x48, 1, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00,
        0xc0,
    ];
    let one = ok(VectorField::new(1, 1, vec![3.0, -2.0]))?;
    ensure!(encode_flo(&one) == golden, "golden .flo bytes differ");
    Ok(format!(
        "PFM/FLO/weights bit-exact, PPM max error {worst:.2e}, golden .flo identical"
    ))
}

// 12 ------------------------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn run_everything(dir: &Path, threads: &str) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let p = |name: &str| dir.join(name);
    let clip = p("clip");
    let manifest = clip.join("manifest.json");
    let m = s(&manifest).to_string();
    let cmds: Vec<Vec<String>> = vec![
        vec![
            "gen",
            "--seed",
            "5",
            "--height",
            "32",
            "--width",
            "32",
            "--frames",
            "4",
            "--noise",
            "0.5",
            "--out",
            s(&clip),
        ],
        vec![
            "metrics",
            "--manifest",
            &m,
            "--report",
            s(&p("report.json")),
            "--csv",
            s(&p("report.csv")),
        ],
        vec![
            "align",
            "--manifest",
            &m,
            "--key",
            "pred",
            "--out",
            s(&p("aligned")),
        ],
        vec![
            "init-weights",
            "--model",
            "stereo",
            "--kind",
            "random",
            "--seed",
            "3",
            "--out",
            s(&p("stereo.bdwt")),
        ],
        vec![
            "init-weights",
            "--model",
            "stereo",
            "--kind",
            "matching",
            "--out",
            s(&p("matching.bdwt")),
        ],
        vec![
            "init-weights",
            "--model",
            "stabilizer",
            "--kind",
            "random",
            "--seed",
            "3",
            "--out",
            s(&p("stab.bdwt")),
        ],
        vec![
            "infer",
            "--manifest",
            &m,
            "--weights",
            s(&p("stereo.bdwt")),
            "--iters",
            "2",
            "--out",
            s(&p("infer")),
        ],
        vec![
            "stabilize",
            "--manifest",
            &m,
            "--weights",
            s(&p("stab.bdwt")),
            "--out",
            s(&p("stabilized")),
        ],
        vec![
            "train-toy",
            "--manifest",
            &m,
            "--steps",
            "4",
            "--seed",
            "9",
            "--crop",
            "16",
            "--window",
            "3",
            "--out",
            s(&p("trained.bdwt")),
        ],
        vec![
            "gradcheck",
            "--seed",
            "4",
            "--report",
            s(&p("gradcheck.json")),
        ],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    for c in &cmds {
        let args: Vec<&str> = c.iter().map(String::as_str).collect();
        bida(&args, threads)?;
    }
    Ok(snapshot(dir))
}

fn determinism(root: &Path) -> Check {
    let a = run_everything(&root.join("det_a"), "1")?;
    let b = run_everything(&root.join("det_b"), "1")?;
    let c = run_everything(&root.join("det_c"), "4")?;
    ensure!(a.len() > 20, "only {} output files", a.len());
    for (name, other) in [("repeat", &b), ("BIDA_THREADS=4", &c)] {
        ensure!(a.keys().eq(other.keys()), "{name}: different file sets");
        for (k, v) in &a {
            ensure!(&other[k] == v, "{name}: {} differs", k.display());
        }
    }
    Ok(format!(
        "10 commands, {} files byte-identical across 3 runs (threads 1, 1, 4)",
        a.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    type Criterion<'a> = (&'static str, Option<u64>, Box<dyn FnOnce() -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("warp identities", Some(1), Box::new(warp_identities)),
        ("correlation oracle", Some(10), Box::new(correlation_oracle)),
        (
            "metric fixed points",
            Some(30),
            Box::new(metric_fixed_points),
        ),
        ("static-bias invariance", None, Box::new(static_bias)),
        ("TEPE hand case", None, Box::new(tepe_hand_case)),
        ("RTC threshold edge", None, Box::new(rtc_threshold)),
        ("gradient check", Some(120), Box::new(gradient_check)),
        (
            "zero-network identities",
            None,
            Box::new(|| zero_networks(root)),
        ),
        (
            "stabilization efficacy",
            Some(300),
            Box::new(|| stabilization_efficacy(root)),
        ),
        ("loss formulas", None, Box::new(loss_formulas)),
        ("format round trips", None, Box::new(format_round_trips)),
        ("determinism", None, Box::new(|| determinism(root))),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let mut result = check();
        let secs = start.elapsed().as_secs_f64();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if secs > limit as f64 {
                result = Err(format!("{detail}; took {secs:.1} s, limit {limit} s"));
            }
        }
        match result {
            Ok(detail) => println!(
                "acceptance {:>2} PASS {name}: {detail} [{secs:.2} s]",
                i + 1
            ),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2} FAIL {name}: {why} [{secs:.2} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

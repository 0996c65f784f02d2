//! Toy-scale bidirectional-alignment stereo network: forward pass.
//!
//! A shared strided encoder turns every left and right frame into features at
//! 1/16, 1/8 and 1/4 resolution. Each stage runs a fixed number of
//! motion-propagation recurrent updates: the triple-frame cost volume is
//! rebuilt from the current disparity, per-frame motion states are aligned
//! with their neighbors and fused, and a spatio-temporal updater predicts a
//! disparity residual for the whole clip at once. Disparity and motion state
//! are up-sampled into the next stage; the update weights are shared by all
//! stages.
//!
//! Coarse pixel `x` at stride `s` sits over fine pixel `s·x`, which is the
//! sampling grid of the stride-2 encoder. Up-sampling and flow down-sampling
//! use the same grid so that every stage sees geometrically aligned inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correlation::{align_neighbors, triple_cost_volume, CorrelationNorm, SearchRange};
use crate::error::{Error, Result};
use crate::field::{bilinear_sample, ChannelField, ScalarField, VectorField};
use crate::nn::{Activation, Conv2d, Conv3d, ConvGru};
use crate::sequence::{neighbors, SequenceBundle};
use crate::weights::{Tensor, WeightBank};

/// Feature strides of the three stages, coarse to fine.
pub const STAGE_STRIDES: [usize; 3] = [16, 8, 4];

/// Update iterations per stage at evaluation time.
pub const DEFAULT_ITERS: usize = 20;

/// Channel widths and updater layout. Everything here is recoverable from a
/// weight bank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StereoConfig {
    /// Encoder feature channels.
    pub feature: usize,
    /// Motion hidden state channels.
    pub motion: usize,
    /// GRU hidden channels.
    pub hidden: usize,
    /// Correlation encoder width.
    pub corr: usize,
    /// Disparity encoder width.
    pub disp: usize,
    /// Motion feature width.
    pub mot: usize,
    /// Updater width.
    pub updater: usize,
    /// Updater kernels as (time, height, width), applied in order.
    pub kernels: Vec<[usize; 3]>,
    /// Offsets per cost-volume block.
    pub offsets: usize,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            feature: 16,
            motion: 16,
            hidden: 32,
            corr: 32,
            disp: 16,
            mot: 32,
            updater: 32,
            kernels: vec![[3, 1, 1], [1, 1, 5], [1, 1, 15]],
            offsets: 9,
        }
    }
}

impl StereoConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("feature", self.feature),
            ("motion", self.motion),
            ("hidden", self.hidden),
            ("corr", self.corr),
            ("disp", self.disp),
            ("mot", self.mot),
            ("updater", self.updater),
            ("offsets", self.offsets),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!(
                "stereo config: `{name}` must be positive"
            )));
        }
        if self.kernels.is_empty() {
            return Err(Error::invalid(
                "stereo config: updater needs at least one layer",
            ));
        }
        for k in &self.kernels {
            if k.iter().any(|&v| v == 0 || v % 2 == 0) {
                return Err(Error::invalid(format!(
                    "stereo config: updater kernel {k:?} must be odd"
                )));
            }
        }
        Ok(())
    }

    /// Horizontal reach of the updater in columns, one side.
    pub fn updater_reach(&self) -> [usize; 3] {
        self.kernels.iter().fold([0, 0, 0], |acc, k| {
            [acc[0] + k[0] / 2, acc[1] + k[1] / 2, acc[2] + k[2] / 2]
        })
    }

    /// Every tensor the architecture needs, with its shape.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut conv = |name: &str, shape: Vec<usize>| {
            let cout = *shape.last().unwrap();
            specs.push((format!("{name}.w"), shape));
            specs.push((format!("{name}.b"), vec![cout]));
        };
        let c = self.feature;
        conv("fnet.conv1", vec![3, 3, 3, c]);
        for i in 2..=4 {
            conv(&format!("fnet.conv{i}"), vec![3, 3, c, c]);
        }
        conv("corr.conv1", vec![1, 1, 3 * self.offsets, self.corr]);
        conv("corr.conv2", vec![3, 3, self.corr, self.corr]);
        conv("disp.conv1", vec![3, 3, 1, self.disp]);
        conv("prop.conv1", vec![3, 3, 3 * self.motion, self.motion]);
        conv(
            "mot.conv1",
            vec![3, 3, self.corr + self.disp + self.motion, self.mot],
        );
        let mut cin = self.hidden + self.mot;
        for (i, k) in self.kernels.iter().enumerate() {
            conv(
                &format!("upd.conv{i}"),
                vec![k[0], k[1], k[2], cin, self.updater],
            );
            cin = self.updater;
        }
        conv("upd.head", vec![1, 1, 1, self.updater, 1]);
        specs.extend(ConvGru::<f32>::tensor_specs(
            "mot.gru",
            self.hidden,
            self.mot,
        ));
        specs.extend(ConvGru::<f32>::tensor_specs(
            "mot.state",
            self.motion,
            self.mot,
        ));
        specs
    }

    /// Reads the architecture back from tensor shapes.
    pub fn from_bank(bank: &WeightBank) -> Result<Self> {
        let out_width = |name: &str| -> Result<usize> { Ok(bank.get(&format!("{name}.b"))?.len()) };
        let corr_in = bank
            .get("corr.conv1.w")?
            .shape()
            .get(2)
            .copied()
            .unwrap_or(0);
        if corr_in % 3 != 0 {
            return Err(Error::invalid(format!(
                "corr.conv1.w takes {corr_in} channels, not a multiple of 3"
            )));
        }
        let mut kernels = Vec::new();
        while let Ok(t) = bank.get(&format!("upd.conv{}.w", kernels.len())) {
            match t.shape() {
                [kt, kh, kw, _, _] => kernels.push([*kt, *kh, *kw]),
                s => {
                    return Err(Error::WeightShape {
                        name: format!("upd.conv{}.w", kernels.len()),
                        expected: vec![0; 5],
                        found: s.to_vec(),
                    })
                }
            }
        }
        let config = Self {
            feature: out_width("fnet.conv1")?,
            motion: out_width("prop.conv1")?,
            hidden: out_width("mot.gru.z")?,
            corr: out_width("corr.conv1")?,
            disp: out_width("disp.conv1")?,
            mot: out_width("mot.conv1")?,
            updater: out_width("upd.conv0")?,
            kernels,
            offsets: corr_in / 3,
        };
        config.validate()?;
        bank.validate(&config.tensor_specs())?;
        Ok(config)
    }
}

/// Inference settings that are not part of the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoOptions {
    /// Search ranges cycled per iteration within a stage.
    pub ranges: Vec<SearchRange>,
    pub norm: CorrelationNorm,
    /// Half-width of the uniform motion-state initialization.
    pub motion_init: f32,
    pub motion_seed: u64,
}

impl Default for StereoOptions {
    fn default() -> Self {
        Self {
            ranges: vec![SearchRange::horizontal(4), SearchRange::square(1)],
            norm: CorrelationNorm::Mean,
            motion_init: 0.1,
            motion_seed: 0,
        }
    }
}

/// Features of one stage for every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub stride: usize,
    pub left: Vec<ChannelField>,
    pub right: Vec<ChannelField>,
}

impl PyramidLevel {
    pub fn dims(&self) -> (usize, usize) {
        self.left[0].dims()
    }
}

/// Levels ordered coarse to fine (strides 16, 8, 4).
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
}

/// Flows resampled onto one stage's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFlows {
    pub fwd: Vec<VectorField>,
    pub bwd: Vec<VectorField>,
}

impl StageFlows {
    /// Point-samples full-resolution flows at the stage grid and divides the
    /// displacements by the stride.
    pub fn from_full(
        fwd: &[VectorField],
        bwd: &[VectorField],
        stride: usize,
        dims: (usize, usize),
    ) -> Result<Self> {
        let scale = |f: &VectorField| -> Result<VectorField> {
            let (fh, fw) = f.dims();
            let s = stride as f32;
            VectorField::from_fn(dims.0, dims.1, |x, y| {
                let (u, v) = f.get((x * stride).min(fw - 1), (y * stride).min(fh - 1));
                (u / s, v / s)
            })
        };
        Ok(Self {
            fwd: fwd.iter().map(scale).collect::<Result<_>>()?,
            bwd: bwd.iter().map(scale).collect::<Result<_>>()?,
        })
    }
}

/// Per-frame recurrent state of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateState {
    pub disparity: Vec<ScalarField>,
    pub hidden: Vec<ChannelField>,
    pub motion: Vec<ChannelField>,
}

impl UpdateState {
    pub fn len(&self) -> usize {
        self.disparity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disparity.is_empty()
    }
}

/// Instrumentation points of the forward pass.
#[derive(Debug)]
pub enum TraceEvent<'a> {
    StageStart {
        stage: usize,
        state: &'a UpdateState,
    },
    /// Motion states right before Prop-Enc fuses them.
    AlignedMotion {
        stage: usize,
        iteration: usize,
        frame: usize,
        prev: &'a ChannelField,
        center: &'a ChannelField,
        next: &'a ChannelField,
    },
    Residual {
        stage: usize,
        iteration: usize,
        delta: &'a [ScalarField],
    },
    StageEnd {
        stage: usize,
        state: &'a UpdateState,
    },
}

pub trait Observer {
    fn observe(&mut self, event: TraceEvent<'_>);
}

impl Observer for () {
    fn observe(&mut self, _: TraceEvent<'_>) {}
}

impl<F: FnMut(TraceEvent<'_>)> Observer for F {
    fn observe(&mut self, event: TraceEvent<'_>) {
        self(event)
    }
}

/// Loaded network. Immutable after construction.
#[derive(Clone, Debug)]
pub struct StereoNet {
    config: StereoConfig,
    options: StereoOptions,
    fnet: Vec<Conv2d>,
    corr: [Conv2d; 2],
    disp: Conv2d,
    prop: Conv2d,
    mot: Conv2d,
    gru: ConvGru,
    state: ConvGru,
    updater: Vec<Conv3d>,
    head: Conv3d,
}

fn scalar(f: ChannelField) -> ScalarField {
    ScalarField::from_channels(f).expect("single-channel field")
}

/// Bilinear up-sampling by an integer factor on the stride grid, with the
/// values multiplied by `value_scale`.
fn upsample(
    field: &ChannelField,
    factor: usize,
    height: usize,
    width: usize,
    value_scale: f32,
) -> ChannelField {
    let c = field.channels();
    let f = factor as f32;
    let mut out = ChannelField::zeros(height, width, c);
    for y in 0..height {
        for x in 0..width {
            let v = bilinear_sample(field, x as f32 / f, y as f32 / f);
            for (o, s) in out.pixel_mut(x, y).iter_mut().zip(v) {
                *o = s * value_scale;
            }
        }
    }
    out
}

impl StereoNet {
    pub fn from_bank(bank: &WeightBank, options: StereoOptions) -> Result<Self> {
        let config = StereoConfig::from_bank(bank)?;
        if options.ranges.is_empty() {
            return Err(Error::invalid("stereo options: no search range"));
        }
        if let Some(r) = options.ranges.iter().find(|r| r.len() != config.offsets) {
            return Err(Error::invalid(format!(
                "search range with {} offsets does not match the {}-offset correlation encoder",
                r.len(),
                config.offsets
            )));
        }
        if !options.motion_init.is_finite() || options.motion_init < 0.0 {
            return Err(Error::invalid(
                "motion_init must be finite and non-negative",
            ));
        }
        let c = config.feature;
        let mut fnet = vec![Conv2d::from_bank(bank, "fnet.conv1", 3, 3, 3, c, 2)?];
        for i in 2..=4 {
            fnet.push(Conv2d::from_bank(
                bank,
                &format!("fnet.conv{i}"),
                3,
                3,
                c,
                c,
                2,
            )?);
        }
        let mut updater = Vec::new();
        let mut cin = config.hidden + config.mot;
        for (i, &k) in config.kernels.iter().enumerate() {
            updater.push(Conv3d::from_bank(
                bank,
                &format!("upd.conv{i}"),
                k,
                cin,
                config.updater,
            )?);
            cin = config.updater;
        }
        Ok(Self {
            corr: [
                Conv2d::from_bank(bank, "corr.conv1", 1, 1, 3 * config.offsets, config.corr, 1)?,
                Conv2d::from_bank(bank, "corr.conv2", 3, 3, config.corr, config.corr, 1)?,
            ],
            disp: Conv2d::from_bank(bank, "disp.conv1", 3, 3, 1, config.disp, 1)?,
            prop: Conv2d::from_bank(
                bank,
                "prop.conv1",
                3,
                3,
                3 * config.motion,
                config.motion,
                1,
            )?,
            mot: Conv2d::from_bank(
                bank,
                "mot.conv1",
                3,
                3,
                config.corr + config.disp + config.motion,
                config.mot,
                1,
            )?,
            gru: ConvGru::from_bank(bank, "mot.gru", config.hidden, config.mot)?,
            state: ConvGru::from_bank(bank, "mot.state", config.motion, config.mot)?,
            head: Conv3d::from_bank(bank, "upd.head", [1, 1, 1], config.updater, 1)?,
            fnet,
            updater,
            config,
            options,
        })
    }

    pub fn config(&self) -> &StereoConfig {
        &self.config
    }

    pub fn options(&self) -> &StereoOptions {
        &self.options
    }

    fn encode(&self, image: &ChannelField) -> Result<[ChannelField; 3]> {
        let half = self.fnet[0].forward(image, Activation::Relu)?;
        let quarter = self.fnet[1].forward(&half, Activation::Relu)?;
        let eighth = self.fnet[2].forward(&quarter, Activation::Relu)?;
        let sixteenth = self.fnet[3].forward(&eighth, Activation::Relu)?;
        Ok([sixteenth, eighth, quarter])
    }

    /// Runs the shared encoder over both views.
    pub fn extract_features(
        &self,
        left: &[ChannelField],
        right: &[ChannelField],
    ) -> Result<FeaturePyramid> {
        if left.is_empty() || left.len() != right.len() {
            return Err(Error::shape(format!(
                "need equal non-empty view sequences, got {} left and {} right frames",
                left.len(),
                right.len()
            )));
        }
        let dims = left[0].dims();
        if dims.0 % 16 != 0 || dims.1 % 16 != 0 {
            return Err(Error::invalid(format!(
                "frame size {}x{} is not a multiple of 16",
                dims.0, dims.1
            )));
        }
        for f in left.iter().chain(right) {
            if f.dims() != dims || f.channels() != 3 {
                return Err(Error::shape(
                    "every frame must be a 3-channel image of the same size",
                ));
            }
        }
        let mut levels: Vec<PyramidLevel> = STAGE_STRIDES
            .iter()
            .map(|&stride| PyramidLevel {
                stride,
                left: Vec::with_capacity(left.len()),
                right: Vec::with_capacity(left.len()),
            })
            .collect();
        for (l, r) in left.iter().zip(right) {
            for (level, (fl, fr)) in levels
                .iter_mut()
                .zip(self.encode(l)?.into_iter().zip(self.encode(r)?))
            {
                level.left.push(fl);
                level.right.push(fr);
            }
        }
        Ok(FeaturePyramid { levels })
    }

    /// Maps per-frame (hidden, motion feature) pairs to disparity residuals.
    pub fn super_kernel_update(
        &self,
        hidden: &[ChannelField],
        motion: &[ChannelField],
    ) -> Result<Vec<ScalarField>> {
        if hidden.is_empty() || hidden.len() != motion.len() {
            return Err(Error::shape(
                "updater needs matching non-empty hidden and motion sequences",
            ));
        }
        let mut x = hidden
            .iter()
            .zip(motion)
            .map(|(h, m)| ChannelField::concat(&[h, m]))
            .collect::<Result<Vec<_>>>()?;
        for layer in &self.updater {
            x = layer.forward(&x, Activation::Relu)?;
        }
        Ok(self
            .head
            .forward(&x, Activation::Identity)?
            .into_iter()
            .map(scalar)
            .collect())
    }

    /// One motion-propagation recurrent update of every frame. Returns the
    /// residuals that were added to `state.disparity`.
    pub fn mru_step(
        &self,
        state: &mut UpdateState,
        level: &PyramidLevel,
        flows: &StageFlows,
        stage: usize,
        iteration: usize,
        observer: &mut dyn Observer,
    ) -> Result<Vec<ScalarField>> {
        let n = state.len();
        let dims = level.dims();
        if level.left.len() != n
            || flows.fwd.len() + 1 != n.max(1)
            || flows.bwd.len() != flows.fwd.len()
        {
            return Err(Error::shape(
                "update state, features and flows disagree on frame count",
            ));
        }
        let range = &self.options.ranges[iteration % self.options.ranges.len()];
        let mut features = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        let mut motion = Vec::with_capacity(n);
        for t in 0..n {
            let nb = neighbors(&flows.fwd, &flows.bwd, t, n, dims);
            let (fp, fnx) = (nb.flow_prev.get(), nb.flow_next.get());
            let cost = triple_cost_volume(
                &level.left[t],
                &level.right[nb.prev],
                &level.right[t],
                &level.right[nb.next],
                fp,
                fnx,
                &state.disparity[t],
                range,
                self.options.norm,
            )?;
            let (mp, mn) =
                align_neighbors(&state.motion[nb.prev], &state.motion[nb.next], fp, fnx)?;
            observer.observe(TraceEvent::AlignedMotion {
                stage,
                iteration,
                frame: t,
                prev: &mp,
                center: &state.motion[t],
                next: &mn,
            });
            let prop = self.prop.forward(
                &ChannelField::concat(&[&mp, &state.motion[t], &mn])?,
                Activation::Relu,
            )?;
            let corr = self.corr[0].forward(cost.field(), Activation::Relu)?;
            let corr = self.corr[1].forward(&corr, Activation::Relu)?;
            let disp = self
                .disp
                .forward(state.disparity[t].as_channels(), Activation::Relu)?;
            let f = self.mot.forward(
                &ChannelField::concat(&[&corr, &disp, &prop])?,
                Activation::Relu,
            )?;
            hidden.push(self.gru.step(&state.hidden[t], &f)?);
            motion.push(self.state.step(&state.motion[t], &f)?);
            features.push(f);
        }
        let delta = self.super_kernel_update(&hidden, &features)?;
        for (t, (d, dd)) in state.disparity.iter_mut().zip(&delta).enumerate() {
            let next = d.zip_map(dd, |a, b| a + b)?;
            if next.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "disparity of frame {t} became non-finite at stage {stage}, iteration {iteration}"
                )));
            }
            *d = next;
        }
        state.hidden = hidden;
        state.motion = motion;
        observer.observe(TraceEvent::Residual {
            stage,
            iteration,
            delta: &delta,
        });
        Ok(delta)
    }

    fn initial_state(&self, frames: usize, dims: (usize, usize)) -> UpdateState {
        let (h, w) = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(self.options.motion_seed);
        let a = self.options.motion_init;
        let motion = (0..frames)
            .map(|_| {
                let data = (0..h * w * self.config.motion)
                    .map(|_| {
                        if a > 0.0 {
                            rng.random_range(-a..a)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                ChannelField::new(h, w, self.config.motion, data).expect("motion state size")
            })
            .collect();
        UpdateState {
            disparity: vec![ScalarField::zeros(h, w); frames],
            hidden: vec![ChannelField::zeros(h, w, self.config.hidden); frames],
            motion,
        }
    }

    /// Full cascade from a blank disparity to full-resolution estimates.
    pub fn run(
        &self,
        left: &[ChannelField],
        right: &[ChannelField],
        flow_fwd: &[VectorField],
        flow_bwd: &[VectorField],
        iters: usize,
        observer: &mut dyn Observer,
    ) -> Result<Vec<ScalarField>> {
        let pyramid = self.extract_features(left, right)?;
        if flow_fwd.len() + 1 != left.len() || flow_bwd.len() != flow_fwd.len() {
            return Err(Error::shape(format!(
                "{} frames need {} flows per direction, got {} forward and {} backward",
                left.len(),
                left.len() - 1,
                flow_fwd.len(),
                flow_bwd.len()
            )));
        }
        let (full_h, full_w) = left[0].dims();
        if let Some(f) = flow_fwd
            .iter()
            .chain(flow_bwd)
            .find(|f| f.dims() != (full_h, full_w))
        {
            return Err(Error::shape(format!(
                "flow of size {}x{} on {full_h}x{full_w} frames",
                f.height(),
                f.width()
            )));
        }
        let mut state: Option<UpdateState> = None;
        for (stage, level) in pyramid.levels.iter().enumerate() {
            let dims = level.dims();
            let mut current = match state.take() {
                None => self.initial_state(left.len(), dims),
                Some(prev) => {
                    let factor = STAGE_STRIDES[stage - 1] / level.stride;
                    UpdateState {
                        disparity: prev
                            .disparity
                            .iter()
                            .map(|d| {
                                scalar(upsample(
                                    d.as_channels(),
                                    factor,
                                    dims.0,
                                    dims.1,
                                    factor as f32,
                                ))
                            })
                            .collect(),
                        hidden: vec![
                            ChannelField::zeros(dims.0, dims.1, self.config.hidden);
                            left.len()
                        ],
                        motion: prev
                            .motion
                            .iter()
                            .map(|m| upsample(m, factor, dims.0, dims.1, 1.0))
                            .collect(),
                    }
                }
            };
            let flows = StageFlows::from_full(flow_fwd, flow_bwd, level.stride, dims)?;
            observer.observe(TraceEvent::StageStart {
                stage,
                state: &current,
            });
            for it in 0..iters {
                self.mru_step(&mut current, level, &flows, stage, it, observer)?;
            }
            observer.observe(TraceEvent::StageEnd {
                stage,
                state: &current,
            });
            state = Some(current);
        }
        let last = state.expect("three stages");
        let stride = STAGE_STRIDES[2];
        Ok(last
            .disparity
            .iter()
            .map(|d| {
                scalar(upsample(
                    d.as_channels(),
                    stride,
                    full_h,
                    full_w,
                    stride as f32,
                ))
            })
            .collect())
    }

    /// Runs on a clip's images and stored flows.
    pub fn infer(&self, bundle: &SequenceBundle, iters: usize) -> Result<Vec<ScalarField>> {
        self.run(
            &bundle.left,
            &bundle.right,
            &bundle.flow_fwd,
            &bundle.flow_bwd,
            iters,
            &mut (),
        )
    }
}

/// Glorot-uniform weights with zero biases.
pub fn random_weights(config: &StereoConfig, seed: u64) -> Result<WeightBank> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = WeightBank::default();
    for (name, shape) in config.tensor_specs() {
        let tensor = if name.ends_with(".b") {
            Tensor::zeros(shape)
        } else {
            let (cin, cout) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let taps: usize = shape[..shape.len() - 2].iter().product();
            let bound = (6.0 / (taps * (cin + cout)) as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            Tensor::new(shape, data)?
        };
        bank.insert(name, tensor);
    }
    Ok(bank)
}

/// Gains of the hand-built matching weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchingParams {
    /// Update per unit of correlation difference.
    pub gain: f32,
    /// Largest residual per iteration, in pixels of the current stage.
    pub step: f32,
    /// Gain of the gradient features per stage, coarse to fine.
    pub edge: [f32; 3],
}

impl Default for MatchingParams {
    fn default() -> Self {
        Self {
            gain: 4.0,
            step: 0.5,
            edge: [4.0; 3],
        }
    }
}

/// Hand-constructed weights that turn the network into a coarse-to-fine
/// correlation descent.
///
/// The encoder binomially filters and subsamples the color channels. The
/// correlation encoder takes the difference between the (−1, 0) and (+1, 0)
/// offsets of all three cost blocks, which share channel positions in both
/// standard ranges. Two 3×3 box filters aggregate it, and the updater clips
/// it: `Δd = clip(gain·box₅ₓ₅(Σ_blocks c₋₁ − c₊₁), ±step)`. Signed values
/// travel as positive and negative parts through the ReLU layers. Recurrent,
/// propagation and disparity-encoder weights are zero.
pub fn matching_weights(config: &StereoConfig, params: MatchingParams) -> Result<WeightBank> {
    config.validate()?;
    if config.offsets != 9
        || config.feature < 12
        || config.corr < 2
        || config.mot < 2
        || config.updater < 4
        || config.kernels.len() < 2
    {
        return Err(Error::invalid(
            "matching weights need 9 offsets, 12 features, 2 correlation and motion channels, \
             4 updater channels and 2 updater layers",
        ));
    }
    let mut bank = WeightBank::zeros(&config.tensor_specs());
    let mut set = |name: &str, index: &[usize], value: f32| {
        let t = bank.get(name).expect("tensor from specs");
        let shape = t.shape().to_vec();
        let flat = index.iter().zip(&shape).fold(0, |acc, (i, s)| acc * s + i);
        let mut data = t.data().to_vec();
        data[flat] = value;
        bank.insert(
            name.to_string(),
            Tensor::new(shape, data).expect("same shape"),
        );
    };
    // Encoder: channels 0..6 carry the positive and negative parts of a
    // binomially filtered, mean-removed image, scaled by CARRIER so they
    // barely enter the correlation. Channels 6..12 hold the parts of its
    // horizontal Sobel response. Removing the mean keeps the zero padding
    // from producing strong artificial edges at the borders.
    const CARRIER: f32 = 0.05;
    const MEAN: f32 = 0.5;
    let binomial = [1.0f32, 2.0, 1.0];
    for i in 1..=4 {
        // conv2, conv3 and conv4 produce the stride 4, 8 and 16 levels
        let edge = if i == 1 { 0.0 } else { params.edge[4 - i] };
        let name = format!("fnet.conv{i}");
        for c in 0..3 {
            if i == 1 {
                set(&format!("{name}.b"), &[c], -MEAN * CARRIER);
                set(&format!("{name}.b"), &[3 + c], MEAN * CARRIER);
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let lowpass = binomial[ky] * binomial[kx] / 16.0;
                    let sobel = edge * binomial[ky] * (kx as f32 - 1.0) / 8.0;
                    // linear input: the raw image, or the difference of the carrier parts
                    let inputs: &[(usize, f32)] = if i == 1 {
                        &[(c, 1.0)]
                    } else {
                        &[(c, 1.0 / CARRIER), (3 + c, -1.0 / CARRIER)]
                    };
                    for &(src, scale) in inputs {
                        set(
                            &format!("{name}.w"),
                            &[ky, kx, src, c],
                            lowpass * CARRIER * scale,
                        );
                        set(
                            &format!("{name}.w"),
                            &[ky, kx, src, 3 + c],
                            -lowpass * CARRIER * scale,
                        );
                        set(&format!("{name}.w"), &[ky, kx, src, 6 + c], sobel * scale);
                        set(&format!("{name}.w"), &[ky, kx, src, 9 + c], -sobel * scale);
                    }
                }
            }
        }
    }
    for ky in 0..3 {
        for kx in 0..3 {
            for c in 0..2 {
                set("corr.conv2.w", &[ky, kx, c, c], 1.0 / 9.0);
            }
            set("mot.conv1.w", &[ky, kx, 0, 0], 1.0 / 9.0);
            set("mot.conv1.w", &[ky, kx, 1, 0], -1.0 / 9.0);
            set("mot.conv1.w", &[ky, kx, 1, 1], 1.0 / 9.0);
            set("mot.conv1.w", &[ky, kx, 0, 1], -1.0 / 9.0);
        }
    }
    for b in 0..3 {
        let (minus, plus) = (b * 9 + 3, b * 9 + 5);
        set("corr.conv1.w", &[0, 0, minus, 0], params.gain);
        set("corr.conv1.w", &[0, 0, plus, 0], -params.gain);
        set("corr.conv1.w", &[0, 0, minus, 1], -params.gain);
        set("corr.conv1.w", &[0, 0, plus, 1], params.gain);
    }
    let center = |k: &[usize; 3]| [k[0] / 2, k[1] / 2, k[2] / 2];
    // min(a, step) = a − relu(a − step) for a ≥ 0
    let [t, y, x] = center(&config.kernels[0]);
    for ch in 0..2 {
        let src = config.hidden + ch;
        set("upd.conv0.w", &[t, y, x, src, 2 * ch], 1.0);
        set("upd.conv0.w", &[t, y, x, src, 2 * ch + 1], 1.0);
        set("upd.conv0.b", &[2 * ch + 1], -params.step);
    }
    let [t, y, x] = center(&config.kernels[1]);
    for ch in 0..2 {
        set("upd.conv1.w", &[t, y, x, 2 * ch, ch], 1.0);
        set("upd.conv1.w", &[t, y, x, 2 * ch + 1, ch], -1.0);
    }
    for (i, k) in config.kernels.iter().enumerate().skip(2) {
        let [t, y, x] = center(k);
        for ch in 0..2 {
            set(&format!("upd.conv{i}.w"), &[t, y, x, ch, ch], 1.0);
        }
    }
    set("upd.head.w", &[0, 0, 0, 0, 0], 1.0);
    set("upd.head.w", &[0, 0, 0, 1, 0], -1.0);
    Ok(bank)
}

/// Candidate gains searched by [`fit_matching`].
pub fn matching_grid() -> Vec<MatchingParams> {
    let mut grid = Vec::new();
    for gain in [3.0, 5.0, 8.0] {
        for coarse in [1.0, 2.0, 4.0] {
            for middle in [2.0, 4.0, 6.0] {
                grid.push(MatchingParams {
                    gain,
                    step: 0.5,
                    edge: [coarse, middle, 4.0],
                });
            }
        }
    }
    grid
}

/// Mean end-point error of a network over every frame of a clip.
pub fn clip_epe(net: &StereoNet, bundle: &SequenceBundle, iters: usize) -> Result<f64> {
    let out = net.infer(bundle, iters)?;
    let mut total = 0.0;
    for (d, g) in out.iter().zip(&bundle.disp_gt) {
        total += crate::metrics::epe(d, g, None)?;
    }
    Ok(total / out.len() as f64)
}

/// Overfits the matching gains to one clip by exhaustive search. Returns the
/// first candidate with the lowest clip EPE.
pub fn fit_matching(
    config: &StereoConfig,
    options: &StereoOptions,
    bundle: &SequenceBundle,
    iters: usize,
    candidates: &[MatchingParams],
) -> Result<(MatchingParams, f64)> {
    let mut best: Option<(MatchingParams, f64)> = None;
    for &params in candidates {
        let net = StereoNet::from_bank(&matching_weights(config, params)?, options.clone())?;
        let e = clip_epe(&net, bundle, iters)?;
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((params, e));
        }
    }
    best.ok_or_else(|| Error::invalid("no matching candidates"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SceneSpec};

    fn zero_net(config: &StereoConfig) -> StereoNet {
        StereoNet::from_bank(
            &WeightBank::zeros(&config.tensor_specs()),
            StereoOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn pyramid_dims() {
        let net = zero_net(&StereoConfig::default());
        let img = vec![ChannelField::zeros(64, 128, 3)];
        let p = net.extract_features(&img, &img).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| l.dims()).collect();
        assert_eq!(dims, vec![(4, 8), (8, 16), (16, 32)]);
        assert!(p
            .levels
            .iter()
            .all(|l| l.left[0].data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn config_round_trips_through_bank() {
        let config = StereoConfig {
            feature: 5,
            kernels: vec![[3, 1, 1], [1, 3, 3]],
            ..StereoConfig::default()
        };
        let bank = random_weights(&config, 3).unwrap();
        assert_eq!(StereoConfig::from_bank(&bank).unwrap(), config);
    }

    #[test]
    fn missing_tensor_is_named() {
        let config = StereoConfig::default();
        let mut bank = WeightBank::default();
        for (name, shape) in config.tensor_specs() {
            if name != "mot.state.q.w" {
                bank.insert(name, Tensor::zeros(shape));
            }
        }
        let err = StereoNet::from_bank(&bank, StereoOptions::default()).unwrap_err();
        assert!(err.to_string().contains("mot.state.q.w"), "{err}");
    }

    #[test]
    fn zero_iterations_are_blank() {
        let bundle = generate(&SceneSpec::two_layer(2, 32, 64, 3)).unwrap();
        let net = StereoNet::from_bank(
            &random_weights(&StereoConfig::default(), 1).unwrap(),
            StereoOptions::default(),
        )
        .unwrap();
        let out = net.infer(&bundle, 0).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out
            .iter()
            .all(|d| d.dims() == (32, 64) && d.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_unaligned_sizes() {
        let net = zero_net(&StereoConfig::default());
        let img = vec![ChannelField::zeros(40, 64, 3)];
        assert!(net.extract_features(&img, &img).is_err());
    }

    #[test]
    fn upsample_keeps_grid_points() {
        let f = ChannelField::from_fn(2, 3, 1, |x, y, _| (x + 10 * y) as f32).unwrap();
        let up = upsample(&f, 2, 4, 6, 2.0);
        assert_eq!(up.at(2, 2, 0), 2.0 * 11.0);
        assert_eq!(up.at(1, 0, 0), 2.0 * 0.5);
        assert_eq!(up.at(5, 3, 0), 2.0 * 12.0);
    }
}

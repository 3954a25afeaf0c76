use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

use super::config::{BackboneConfig, LayerSpec};
use super::mask::{downsample_mask, MaskTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Baseline,
    Segmented,
    DualBranchSum,
    DualBranchStack,
    WeightedFocus,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Baseline,
        ModelVariant::Segmented,
        ModelVariant::DualBranchSum,
        ModelVariant::DualBranchStack,
        ModelVariant::WeightedFocus,
    ];

    pub fn needs_mask(self) -> bool {
        self != ModelVariant::Baseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Baseline => "baseline",
            ModelVariant::Segmented => "segmented",
            ModelVariant::DualBranchSum => "dual_branch_sum",
            ModelVariant::DualBranchStack => "dual_branch_stack",
            ModelVariant::WeightedFocus => "weighted_focus",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| invalid!("unknown model variant {s:?}"))
    }
}

/// conv -> per-channel affine -> relu
#[derive(Debug, Clone)]
struct ConvBlock {
    weight: ParamId,
    scale: ParamId,
    shift: ParamId,
    spec: LayerSpec,
}

impl ConvBlock {
    fn new(params: &mut ParamSet, rng: &mut Rng, name: &str, cin: usize, cout: usize, spec: LayerSpec) -> Self {
        let [kt, kh, kw] = spec.kernel;
        let bound = (1.0 / (cin * kt * kh * kw) as f64).sqrt();
        Self {
            weight: params.add(
                format!("{name}.conv.weight"),
                Tensor::uniform(&[cout, cin, kt, kh, kw], bound, rng),
            ),
            scale: params.add(format!("{name}.affine.scale"), Tensor::ones(&[cout])),
            shift: params.add(format!("{name}.affine.shift"), Tensor::zeros(&[cout])),
            spec,
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv3d(x, p.var(self.weight), None, self.spec.conv())?;
        let y = tape.channel_affine(y, p.var(self.scale), p.var(self.shift))?;
        tape.relu(y)
    }
}

#[derive(Debug, Clone)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn new(params: &mut ParamSet, rng: &mut Rng, name: &str, fin: usize, fout: usize) -> Self {
        let bound = (1.0 / fin as f64).sqrt();
        Self {
            weight: params.add(format!("{name}.weight"), Tensor::uniform(&[fout, fin], bound, rng)),
            bias: params.add(format!("{name}.bias"), Tensor::uniform(&[fout], bound, rng)),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

/// Stem, Stage 1 and Stage 2.
#[derive(Debug, Clone)]
struct Prefix {
    stem: ConvBlock,
    pool: Option<LayerSpec>,
    stage1: ConvBlock,
    stage2: ConvBlock,
}

impl Prefix {
    fn new(params: &mut ParamSet, rng: &mut Rng, name: &str, cfg: &BackboneConfig) -> Self {
        Self {
            stem: ConvBlock::new(
                params,
                rng,
                &format!("{name}.stem"),
                cfg.in_channels,
                cfg.stem_width,
                cfg.stem,
            ),
            pool: cfg.stem_pool,
            stage1: ConvBlock::new(
                params,
                rng,
                &format!("{name}.stage1"),
                cfg.stem_width,
                cfg.widths[0],
                cfg.stages[0],
            ),
            stage2: ConvBlock::new(
                params,
                rng,
                &format!("{name}.stage2"),
                cfg.widths[0],
                cfg.widths[1],
                cfg.stages[1],
            ),
        }
    }

    /// Returns (stage-1 output, stage-2 output).
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let mut y = self.stem.forward(tape, p, x)?;
        if let Some(pool) = &self.pool {
            y = tape.pool3d(y, pool.max_pool())?;
        }
        let s1 = self.stage1.forward(tape, p, y)?;
        let s2 = self.stage2.forward(tape, p, s1)?;
        Ok((s1, s2))
    }
}

/// Stage 3, Stage 4 and the classification head.
#[derive(Debug, Clone)]
struct Suffix {
    stage3: ConvBlock,
    stage4: ConvBlock,
    head: Linear,
}

impl Suffix {
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.stage3.forward(tape, p, x)?;
        let y = self.stage4.forward(tape, p, y)?;
        let y = tape.global_avg_pool(y)?;
        self.head.forward(tape, p, y)
    }
}

/// Small conv + global average pool + linear; the raw scalar is squashed to
/// α ∈ (−1, 1) by 2σ(x) − 1.
#[derive(Debug, Clone)]
struct AlphaHead {
    conv: ConvBlock,
    out: Linear,
}

impl AlphaHead {
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        let y = tape.global_avg_pool(y)?;
        let raw = self.out.forward(tape, p, y)?;
        tape.scaled_sigmoid(raw)
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    /// Features entering Stage 3 (after fusion or re-weighting).
    pub fused: Var,
    /// α per sample, WeightedFocus only.
    pub alpha: Option<Var>,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    variant: ModelVariant,
    config: BackboneConfig,
    pub params: ParamSet,
    branches: Vec<Prefix>,
    alpha: Option<AlphaHead>,
    suffix: Suffix,
}

impl Model {
    pub fn new(variant: ModelVariant, config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived(seed, "model-init");
        let mut params = ParamSet::new();
        let dual = matches!(variant, ModelVariant::DualBranchSum | ModelVariant::DualBranchStack);
        let mut branches = vec![Prefix::new(&mut params, &mut rng, "branch0", &config)];
        if dual {
            branches.push(Prefix::new(&mut params, &mut rng, "branch1", &config));
        }
        let alpha = (variant == ModelVariant::WeightedFocus).then(|| AlphaHead {
            conv: ConvBlock::new(
                &mut params,
                &mut rng,
                "alpha.conv",
                config.widths[0],
                config.alpha_width,
                LayerSpec::new([1, 3, 3], [1, 1, 1], [0, 1, 1]),
            ),
            out: Linear::new(&mut params, &mut rng, "alpha.linear", config.alpha_width, 1),
        });
        let stage3_in = if variant == ModelVariant::DualBranchStack {
            2 * config.widths[1]
        } else {
            config.widths[1]
        };
        let suffix = Suffix {
            stage3: ConvBlock::new(
                &mut params,
                &mut rng,
                "stage3",
                stage3_in,
                config.widths[2],
                config.stages[2],
            ),
            stage4: ConvBlock::new(
                &mut params,
                &mut rng,
                "stage4",
                config.widths[2],
                config.widths[3],
                config.stages[3],
            ),
            head: Linear::new(&mut params, &mut rng, "head", config.widths[3], config.classes),
        };
        Ok(Self {
            variant,
            config,
            params,
            branches,
            alpha,
            suffix,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Input channel count of Stage 3's convolution.
    pub fn stage3_in_channels(&self) -> usize {
        self.params.get(self.suffix.stage3.weight).shape()[1]
    }

    pub fn head_bias(&self) -> &[f64] {
        self.params.get(self.suffix.head.bias).data()
    }

    /// Copies branch 0's weights into branch 1 (dual-branch variants).
    pub fn tie_branches(&mut self) -> Result<()> {
        if self.branches.len() != 2 {
            return Err(invalid!("{} has a single branch", self.variant));
        }
        let pairs: Vec<(ParamId, ParamId)> = [
            (&self.branches[0].stem, &self.branches[1].stem),
            (&self.branches[0].stage1, &self.branches[1].stage1),
            (&self.branches[0].stage2, &self.branches[1].stage2),
        ]
        .iter()
        .flat_map(|(a, b)| [(a.weight, b.weight), (a.scale, b.scale), (a.shift, b.shift)])
        .collect();
        for (src, dst) in pairs {
            let data = self.params.get(src).data().to_vec();
            self.params.get_mut(dst).data_mut().copy_from_slice(&data);
        }
        Ok(())
    }

    fn check_input(&self, video: &Tensor, mask: Option<&MaskTensor>) -> Result<()> {
        let c = &self.config;
        let s = video.shape();
        if s.len() != 5 || s[1] != c.in_channels || s[2] != c.frames || s[3] != c.size || s[4] != c.size {
            return Err(shape_err!(
                "video must be (B,{},{},{},{}), got {:?}",
                c.in_channels,
                c.frames,
                c.size,
                c.size,
                s
            ));
        }
        match mask {
            None if self.variant.needs_mask() => {
                Err(Error::MissingMask(format!("{} requires a human mask", self.variant)))
            }
            Some(m) if self.variant.needs_mask() => {
                if m.dims() != [s[2], s[3], s[4]] || (m.batch() != s[0] && m.batch() != 1) {
                    return Err(shape_err!("mask {:?} does not match video {:?}", m.tensor().shape(), s));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Records the forward pass on `tape` using parameter handles `p`.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        p: &Bound,
        video: Var,
        mask: Option<&MaskTensor>,
    ) -> Result<ForwardTrace> {
        self.check_input(tape.value(video), mask)?;
        let mask_var = |tape: &mut Tape| mask.map(|m| tape.constant(m.tensor().clone()));
        let mut alpha = None;
        let fused = match self.variant {
            ModelVariant::Baseline => self.branches[0].forward(tape, p, video)?.1,
            ModelVariant::Segmented => {
                let m = mask_var(tape).expect("checked");
                let seg = tape.mul(video, m)?;
                self.branches[0].forward(tape, p, seg)?.1
            }
            ModelVariant::DualBranchSum | ModelVariant::DualBranchStack => {
                let m = mask_var(tape).expect("checked");
                let seg = tape.mul(video, m)?;
                let (_, a) = self.branches[0].forward(tape, p, video)?;
                let (_, b) = self.branches[1].forward(tape, p, seg)?;
                if self.variant == ModelVariant::DualBranchSum {
                    tape.add(a, b)?
                } else {
                    tape.concat_channels(&[a, b])?
                }
            }
            ModelVariant::WeightedFocus => {
                let (s1, s2) = self.branches[0].forward(tape, p, video)?;
                let head = self.alpha.as_ref().expect("weighted focus owns an alpha head");
                let a = head.forward(tape, p, s1)?;
                alpha = Some(a);
                let fs = tape.value(s2).shape();
                let small = downsample_mask(mask.expect("checked"), [fs[2], fs[3], fs[4]])?;
                let m = tape.constant(small.into_tensor());
                let w = tape.weighted_mask(a, m)?;
                tape.mul(s2, w)?
            }
        };
        let logits = self.suffix.forward(tape, p, fused)?;
        Ok(ForwardTrace { fused, alpha, logits })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, video: Var, mask: Option<&MaskTensor>) -> Result<Var> {
        Ok(self.forward_traced(tape, p, video, mask)?.logits)
    }

    /// Inference without gradient bookkeeping; returns (B, classes) logits.
    pub fn logits(&self, video: &Tensor, mask: Option<&MaskTensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let v = tape.constant(video.clone());
        let out = self.forward(&mut tape, &p, v, mask)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, video: &Tensor, mask: Option<&MaskTensor>) -> Result<Vec<usize>> {
        let logits = self.logits(video, mask)?;
        let c = logits.shape()[1];
        Ok(logits.data().chunks(c).map(argmax).collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

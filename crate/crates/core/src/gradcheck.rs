//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per parameter (all when `None`).
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Denominator floor for the relative error, so that gradients which are
/// zero analytically are compared against central-difference roundoff
/// (about 1e-11 for O(1) losses) rather than against zero.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a relu or max-pool kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Coordinate and (analytic, numeric) pair behind `max_rel_error`.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// True when every parameter had at least one smooth coordinate checked
    /// and all errors are below tolerance.
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.checked > 0) && self.max_rel_error() < self.tolerance
    }
}

/// Compares analytic gradients of `build` against central differences.
///
/// `build` receives a fresh tape and one leaf per entry of `params` and must
/// return a scalar loss. Errors from `build` are propagated; gradient
/// mismatches are reported, not raised.
pub fn grad_check<F>(params: &[(String, Tensor)], build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[(String, Tensor)], with_grad: bool| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.requires_grad = with_grad;
                tape.leaf(t)
            })
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    let (mut tape, vars, loss) = eval(params, true)?;
    let pattern = tape.activation_pattern();
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, (_, t))| {
            tape.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);

    let mut rng = rng::derived(cfg.seed, "gradcheck");
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, (name, t)) in params.iter().enumerate() {
        let n = t.numel();
        // Visit coordinates in random order when sampling, so that a
        // coordinate skipped at a kink is replaced by the next one.
        let (order, want): (Vec<usize>, usize) = match cfg.max_coords {
            Some(k) if k < n => (sample(&mut rng, n, n).into_vec(), k),
            _ => ((0..n).collect(), n),
        };
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for &i in &order {
            if check.checked == want {
                break;
            }
            let orig = t.data()[i];
            work[pi].1.data_mut()[i] = orig + cfg.epsilon;
            let (tp, _, lp) = eval(&work, false)?;
            let f_plus = tp.value(lp).item()?;
            let smooth_plus = tp.activation_pattern() == pattern;
            drop(tp);
            work[pi].1.data_mut()[i] = orig - cfg.epsilon;
            let (tm, _, lm) = eval(&work, false)?;
            let f_minus = tm.value(lm).item()?;
            let smooth_minus = tm.activation_pattern() == pattern;
            work[pi].1.data_mut()[i] = orig;
            if !(smooth_plus && smooth_minus) {
                check.skipped += 1;
                continue;
            }
            check.checked += 1;

            let numeric = (f_plus - f_minus) / (2.0 * cfg.epsilon);
            let a = analytic[pi][i];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || check.worst.is_none() {
                check.max_rel_error = err.max(check.max_rel_error);
                check.worst = Some((i, a, numeric));
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: cfg.tolerance,
    })
}

/// Named gradient-check results, as produced by the suites below.
pub type SuiteResult = Vec<(String, GradCheckReport)>;

fn rand_tensor(shape: &[usize], rng: &mut rng::Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn project(tape: &mut Tape, y: Var, rng_seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(rand_tensor(&shape, &mut rng::seeded(rng_seed)));
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

/// Checks every differentiable primitive on small random inputs.
pub fn primitive_suite(cfg: &GradCheckConfig) -> Result<SuiteResult> {
    use crate::autograd::{Conv3dSpec, Pool3dSpec, PoolMode};

    type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
    let mut rng = rng::derived(cfg.seed, "primitive-suite");
    let mask = Tensor::new(
        &[2, 1, 2, 2, 2],
        (0..16).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect(),
    )?;
    let pool = |mode| Pool3dSpec {
        mode,
        kernel: [2, 2, 2],
        stride: [1, 2, 2],
        pad: [0, 1, 1],
    };
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        (
            "conv3d",
            vec![vec![2, 2, 3, 5, 5], vec![3, 2, 2, 3, 3], vec![3]],
            Box::new(|t, v| {
                let spec = Conv3dSpec {
                    stride: [1, 2, 2],
                    pad: [1, 1, 0],
                };
                t.conv3d(v[0], v[1], Some(v[2]), spec)
            }),
        ),
        (
            "max_pool3d",
            vec![vec![1, 2, 3, 4, 4]],
            Box::new(move |t, v| t.pool3d(v[0], pool(PoolMode::Max))),
        ),
        (
            "avg_pool3d",
            vec![vec![1, 2, 3, 4, 4]],
            Box::new(move |t, v| t.pool3d(v[0], pool(PoolMode::Avg))),
        ),
        (
            "linear",
            vec![vec![3, 4], vec![2, 4], vec![2]],
            Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))),
        ),
        ("relu", vec![vec![2, 3, 4]], Box::new(|t, v| t.relu(v[0]))),
        (
            "scaled_sigmoid",
            vec![vec![2, 3, 4]],
            Box::new(|t, v| t.scaled_sigmoid(v[0])),
        ),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.add(v[0], v[1]))),
        (
            "mul_broadcast",
            vec![vec![2, 3, 2, 2, 2], vec![2, 1, 2, 2, 2]],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "concat_channels",
            vec![vec![2, 1, 2, 2, 1], vec![2, 3, 2, 2, 1]],
            Box::new(|t, v| t.concat_channels(&[v[0], v[1]])),
        ),
        (
            "global_avg_pool",
            vec![vec![2, 3, 2, 2, 2]],
            Box::new(|t, v| t.global_avg_pool(v[0])),
        ),
        (
            "channel_affine",
            vec![vec![2, 3, 2, 2, 1], vec![3], vec![3]],
            Box::new(|t, v| t.channel_affine(v[0], v[1], v[2])),
        ),
        (
            "weighted_mask",
            vec![vec![2]],
            Box::new(move |t, v| {
                let squashed = t.scale(v[0], 0.9)?;
                let m = t.constant(mask.clone());
                t.weighted_mask(squashed, m)
            }),
        ),
    ];

    let mut out = Vec::new();
    for (i, (name, shapes, build)) in cases.into_iter().enumerate() {
        let params: Vec<(String, Tensor)> = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| (format!("{name}.in{k}"), rand_tensor(s, &mut rng)))
            .collect();
        let seed = cfg.seed.wrapping_add(i as u64);
        let rep = grad_check(
            &params,
            |t, v| {
                let y = build(t, v)?;
                project(t, y, seed)
            },
            cfg,
        )?;
        out.push((name.to_string(), rep));
    }
    let logits = vec![("logits".to_string(), rand_tensor(&[4, 5], &mut rng))];
    let rep = grad_check(&logits, |t, v| t.softmax_cross_entropy(v[0], &[0, 4, 2, 2]), cfg)?;
    out.push(("softmax_cross_entropy".to_string(), rep));
    Ok(out)
}

/// End-to-end check of one model variant: cross-entropy of a random batch
/// with a half-human mask, differentiated with respect to every parameter.
pub fn model_check(
    variant: crate::models::ModelVariant,
    backbone: &crate::models::BackboneConfig,
    batch: usize,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    use crate::models::{MaskTensor, Model};
    use crate::params::Bound;

    let mut model = Model::new(variant, backbone.clone(), cfg.seed)?;
    let mut rng = rng::derived(cfg.seed, "model-check-input");
    // Random affine parameters instead of the (1, 0) init: with zero shifts,
    // masked-out regions put relu inputs exactly on the kink.
    let ids: Vec<_> = (0..model.params.len()).map(crate::params::ParamId).collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let t = model.params.get_mut(id);
        if name.ends_with("affine.scale") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else if name.ends_with("affine.shift") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        }
    }
    let (t, s) = (backbone.frames, backbone.size);
    let shape = [batch, backbone.in_channels, t, s, s];
    let video = Tensor::new(
        &shape,
        rand_tensor(&shape, &mut rng)
            .data()
            .iter()
            .map(|v| 0.5 + 0.5 * v)
            .collect(),
    )?;
    // human occupies a centred square that drifts one pixel per frame
    let mut mdata = Vec::with_capacity(batch * t * s * s);
    for _ in 0..batch {
        for f in 0..t {
            for y in 0..s {
                for x in 0..s {
                    let inside = y >= s / 4 && y < 3 * s / 4 && x + s / 4 >= f && x < 3 * s / 4 + f;
                    mdata.push(inside as u8 as f64);
                }
            }
        }
    }
    let mask = MaskTensor::new(Tensor::new(&[batch, 1, t, s, s], mdata)?)?;
    let labels: Vec<usize> = (0..batch).map(|i| i % backbone.classes).collect();
    let params: Vec<(String, Tensor)> = model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    grad_check(
        &params,
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let v = tape.constant(video.clone());
            let logits = model.forward(tape, &bound, v, Some(&mask))?;
            tape.softmax_cross_entropy(logits, &labels)
        },
        cfg,
    )
}

pub fn model_suite(
    backbone: &crate::models::BackboneConfig,
    batch: usize,
    cfg: &GradCheckConfig,
) -> Result<SuiteResult> {
    crate::models::ModelVariant::ALL
        .iter()
        .map(|&v| Ok((v.to_string(), model_check(v, backbone, batch, cfg)?)))
        .collect()
}

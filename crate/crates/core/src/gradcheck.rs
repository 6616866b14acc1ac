//! Central finite-difference checks of every differentiable primitive and of a
//! miniature end-to-end network, in f64.
//!
//! Relative error is `|a − n| / max(|a|, |n|, floor)` for analytic gradient
//! `a` and numeric gradient `n`. Each primitive is checked through the scalar
//! objective `Σ out ⊙ R` with a fixed random `R`.

use std::fmt::Write;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aic::{aic_forward, AicSpec, Modulation};
use crate::datagen::{generate_scene, SyntheticSceneSpec};
use crate::error::Result;
use crate::graph::{Graph, OpKind, Var};
use crate::network::{AicNet, NetworkSpec, ProjectionMap};
use crate::params::{Binder, ParamStore};
use crate::tensor::{Axis, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub threshold: f64,
    /// Sampled coordinates per checked tensor.
    pub samples_per_tensor: usize,
    /// Scales the backward output of this primitive (harness hook).
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            eps: 1e-5,
            floor: 1e-5,
            threshold: DEFAULT_THRESHOLD,
            samples_per_tensor: 6,
            fault: None,
        }
    }
}

/// Worst relative error for one checked op.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub worst: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<OpCheck>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.worst < self.threshold)
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.worst).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&OpCheck> {
        self.rows.iter().filter(|r| !(r.worst < self.threshold)).collect()
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let status = if r.worst < self.threshold { "pass" } else { "FAIL" };
            let _ = writeln!(s, "op={} worst_rel_error={:.3e} checked={} status={status}", r.op, r.worst, r.checked);
        }
        let _ = writeln!(s, "threshold={:e}", self.threshold);
        let _ = writeln!(s, "worst_rel_error={:.3e}", self.worst());
        let _ = writeln!(s, "passed={}", self.passed());
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference gradient of `f` at the flat coordinates `indices`.
pub fn finite_difference_grad(
    f: &mut dyn FnMut(&Tensor<f64>) -> Result<f64>,
    point: &Tensor<f64>,
    eps: f64,
    indices: &[usize],
) -> Result<Vec<f64>> {
    let mut probe = point.clone();
    indices
        .iter()
        .map(|&i| {
            let x = point.data()[i];
            probe.data_mut()[i] = x + eps;
            let up = f(&probe)?;
            probe.data_mut()[i] = x - eps;
            let down = f(&probe)?;
            probe.data_mut()[i] = x;
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}

fn pick(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= n {
        (0..len).collect()
    } else {
        let mut v = sample_indices(rng, len, n).into_vec();
        v.sort_unstable();
        v
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, so ReLU kinks stay out of reach of `eps`.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.1 apart, so pooling windows have no near-ties.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    rand::seq::SliceRandom::shuffle(values.as_mut_slice(), rng);
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

struct Checker {
    opts: GradcheckOptions,
    rng: ChaCha8Rng,
    rows: Vec<OpCheck>,
}

impl Checker {
    fn objective(&self, inputs: &[Tensor<f64>], build: &Build<'_>, weights: &Tensor<f64>, grads: bool) -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        if grads {
            if let Some(k) = self.opts.fault {
                g.inject_backward_fault(k);
            }
        }
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| if grads { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let out = build(&mut g, &vars)?;
        let r = g.constant(weights.clone());
        let prod = g.mul(out, r)?;
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        if !grads {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let gs = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        Ok((value, gs))
    }

    fn check(&mut self, op: &str, inputs: Vec<Tensor<f64>>, build: &Build<'_>) -> Result<()> {
        let shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = build(&mut g, &vars)?;
            g.value(out).shape().to_vec()
        };
        let weights = uniform(&shape, &mut self.rng);
        let (_, analytic) = self.objective(&inputs, build, &weights, true)?;
        let mut worst = 0.0f64;
        let mut checked = 0;
        for k in 0..inputs.len() {
            let idx = pick(inputs[k].len(), self.opts.samples_per_tensor, &mut self.rng);
            let mut f = |t: &Tensor<f64>| {
                let mut probe = inputs.clone();
                probe[k] = t.clone();
                Ok(self.objective(&probe, build, &weights, false)?.0)
            };
            let numeric = finite_difference_grad(&mut f, &inputs[k], self.opts.eps, &idx)?;
            for (&i, n) in idx.iter().zip(numeric) {
                worst = worst.max(relative_error(analytic[k].data()[i], n, self.opts.floor));
                checked += 1;
            }
        }
        self.rows.push(OpCheck {
            op: op.to_string(),
            worst,
            checked,
        });
        Ok(())
    }
}

/// Checks every primitive, one AIC module, and the miniature network.
pub fn run_gradcheck(opts: GradcheckOptions) -> Result<GradcheckReport> {
    let mut c = Checker {
        opts,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        rows: Vec::new(),
    };
    primitive_checks(&mut c)?;
    aic_check(&mut c)?;
    let net = network_check(&opts, &mut c.rng)?;
    c.rows.push(net);
    Ok(GradcheckReport {
        rows: c.rows,
        threshold: opts.threshold,
    })
}

fn primitive_checks(c: &mut Checker) -> Result<()> {
    let rng = &mut c.rng.clone();
    let vol = [2, 3, 4, 3, 5];
    for axis in Axis::ALL {
        let inputs = vec![uniform(&vol, rng), uniform(&[3, 3, 3], rng), uniform(&[3], rng)];
        c.check(&format!("conv1d_axis[{axis}]"), inputs, &|g, v| g.conv1d_axis(v[0], v[1], v[2], axis))?;
    }
    let img = [2, 3, 4, 5];
    let inputs = vec![uniform(&img, rng), uniform(&[3, 3, 5], rng), uniform(&[3], rng)];
    c.check("conv1d_axis[2d]", inputs, &|g, v| g.conv1d_axis(v[0], v[1], v[2], Axis::Y))?;
    let inputs = vec![uniform(&vol, rng), uniform(&[4, 3], rng), uniform(&[4], rng)];
    c.check(OpKind::Pointwise.name(), inputs, &|g, v| g.pointwise_conv(v[0], v[1], v[2]))?;
    let inputs = vec![uniform(&vol, rng).map(|x| 3.0 * x)];
    c.check(OpKind::Softmax.name(), inputs, &|g, v| g.softmax_channels(v[0]))?;
    let inputs = vec![uniform(&vol, rng), uniform(&vol, rng)];
    c.check(OpKind::Add.name(), inputs.clone(), &|g, v| g.add(v[0], v[1]))?;
    c.check(OpKind::Mul.name(), inputs, &|g, v| g.mul(v[0], v[1]))?;
    c.check(OpKind::Relu.name(), vec![off_zero(&vol, rng)], &|g, v| Ok(g.relu(v[0])))?;
    let inputs = vec![uniform(&vol, rng), uniform(&[2, 1, 4, 3, 5], rng)];
    c.check(OpKind::MulBroadcast.name(), inputs, &|g, v| g.mul_channel_broadcast(v[0], v[1]))?;
    let inputs = vec![uniform(&vol, rng), uniform(&[2, 2, 4, 3, 5], rng)];
    c.check(OpKind::Concat.name(), inputs, &|g, v| g.concat_channels(v))?;
    c.check(OpKind::Slice.name(), vec![uniform(&vol, rng)], &|g, v| g.slice_channels(v[0], 1, 2))?;
    c.check(OpKind::MaxPool.name(), vec![distinct(&[2, 2, 4, 2, 6], rng)], &|g, v| g.max_pool2(v[0]))?;
    for stride in [1, 2] {
        let inputs = vec![
            uniform(&[1, 2, 4, 4, 6], rng),
            uniform(&[3, 2, 3, 3, 3], rng),
            uniform(&[3], rng),
        ];
        c.check(&format!("{}[s{stride}]", OpKind::Conv3d.name()), inputs, &|g, v| {
            g.conv3d(v[0], v[1], v[2], stride)
        })?;
    }
    let spec = NetworkSpec::miniature();
    let [h, w] = spec.image;
    let maps: Vec<ProjectionMap> = (0..2)
        .map(|_| {
            let depth: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.5f32..3.0)).collect();
            ProjectionMap::build(&depth, h, w, &spec.camera, &spec.grid)
        })
        .collect::<Result<_>>()?;
    let maps = Arc::new(maps);
    c.check(OpKind::Project.name(), vec![uniform(&[2, 3, h, w], rng)], &|g, v| g.project(v[0], maps.clone()))?;
    c.check(OpKind::Sum.name(), vec![uniform(&vol, rng)], &|g, v| Ok(g.sum(v[0])))?;
    let classes = 4;
    let logits_shape = [2, classes, 2, 3, 2];
    let voxels = 2 * 2 * 3 * 2;
    let labels: Arc<Vec<u32>> = Arc::new((0..voxels).map(|_| rng.gen_range(1..=classes as u32)).collect());
    let weights: Arc<Vec<f64>> = Arc::new((0..voxels).map(|_| rng.gen_range(0.0..2.0)).collect());
    c.check(OpKind::CrossEntropy.name(), vec![uniform(&logits_shape, rng).map(|x| 2.0 * x)], &|g, v| {
        g.weighted_cross_entropy(v[0], labels.clone(), weights.clone())
    })?;
    c.rng = rng.clone();
    Ok(())
}

fn aic_check(c: &mut Checker) -> Result<()> {
    let rng = &mut c.rng.clone();
    let spec = AicSpec::uniform(4, Some(3), &[1, 3, 5]).with_modulation(Modulation::Softmax);
    let mut store = ParamStore::<f64>::new();
    spec.init_params("aic", &mut store, rng)?;
    // Non-zero head and biases so every path carries gradient.
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let t = store.get_mut(name)?;
        for v in t.data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let input = uniform(&[2, 4, 3, 4, 5], rng);
    let mut inputs = vec![input];
    inputs.extend(names.iter().map(|n| store.get(n).cloned()).collect::<Result<Vec<_>>>()?);
    let names_ref = &names;
    let empty = ParamStore::new();
    c.check("aic_module", inputs, &|g, v| {
        let mut binder = Binder::new(&empty, true);
        for (name, &var) in names_ref.iter().zip(&v[1..]) {
            binder.preset(name, var);
        }
        Ok(aic_forward(g, &mut binder, "aic", &spec, v[0])?.output)
    })?;
    c.rng = rng.clone();
    Ok(())
}

/// Miniature network: loss gradient for sampled coordinates of every parameter tensor.
fn network_check(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<OpCheck> {
    let spec = NetworkSpec::miniature();
    let net = AicNet::<f64>::new(spec.clone(), opts.seed)?;
    let mut params = net.params.clone();
    // Move zero-initialised heads and biases off their symmetric start.
    for (_, p) in params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let scene_spec = SyntheticSceneSpec::for_network(&spec);
    let samples = [generate_scene(&scene_spec, opts.seed)?, generate_scene(&scene_spec, opts.seed + 1)?];
    let refs: Vec<_> = samples.iter().collect();
    let inputs = net.inputs(&refs)?;
    let labels: Arc<Vec<u32>> = Arc::new(refs.iter().flat_map(|s| s.labels.iter().map(|&l| l as u32)).collect());
    let weights: Arc<Vec<f64>> = Arc::new(vec![1.0; labels.len()]);
    // forward reads parameters through the binder only.
    let shell = AicNet {
        spec: spec.clone(),
        params: ParamStore::new(),
    };
    let loss_of = |store: &ParamStore<f64>, grads: bool| -> Result<(f64, Option<ParamStore<f64>>)> {
        let mut g = Graph::new();
        if grads {
            if let Some(k) = opts.fault {
                g.inject_backward_fault(k);
            }
        }
        let mut binder = Binder::new(store, grads);
        let out = shell.forward(&mut g, &mut binder, &inputs)?;
        let loss = g.weighted_cross_entropy(out.logits, labels.clone(), weights.clone())?;
        let value = g.value(loss).item();
        if !grads {
            return Ok((value, None));
        }
        g.backward(loss)?;
        Ok((value, Some(binder.gradients(&g))))
    };
    let (_, grads) = loss_of(&params, true)?;
    let grads = grads.expect("requested");
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for name in &names {
        let point = params.get(name)?.clone();
        let idx = pick(point.len(), opts.samples_per_tensor.min(3), rng);
        let mut probe = params.clone();
        let mut f = |t: &Tensor<f64>| {
            *probe.get_mut(name)? = t.clone();
            Ok(loss_of(&probe, false)?.0)
        };
        let numeric = finite_difference_grad(&mut f, &point, opts.eps, &idx)?;
        let analytic = grads.get(name)?;
        for (&i, n) in idx.iter().zip(numeric) {
            worst = worst.max(relative_error(analytic.data()[i], n, opts.floor));
            checked += 1;
        }
    }
    Ok(OpCheck {
        op: "aicnet_miniature".into(),
        worst,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_quadratic() {
        let p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut f = |t: &Tensor<f64>| Ok(t.data().iter().map(|x| x * x).sum::<f64>());
        let g = finite_difference_grad(&mut f, &p, 1e-5, &[0, 1, 2]).unwrap();
        for (a, b) in g.iter().zip([2.0, -4.0, 1.0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-5), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-5) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-5) - 1e-4).abs() < 1e-15);
    }
}

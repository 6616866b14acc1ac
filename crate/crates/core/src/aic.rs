//! Anisotropic convolution (AIC).
//!
//! Each axis runs several same-padded 1D convolutions with different kernel
//! sizes and blends them per voxel with softmax modulation factors produced by
//! a 1×1×1 convolution head. Axis stages run in order (X, Y, Z by default),
//! each consuming the previous stage's output, and the module adds its input
//! back as a residual. The bottleneck variant wraps the axis stages in
//! pointwise D→D′ and D′→D convolutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{fan_in_uniform, Binder, ParamStore};
use crate::tensor::{Axis, Scalar, Tensor};

/// How per-kernel mixing factors are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    /// Learned 1×1×1 head followed by a softmax over kernels.
    #[default]
    Softmax,
    /// No head; every factor is fixed at 1 (so factors sum to the kernel count).
    Ones,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    #[default]
    Relu,
}

/// Candidate kernel sizes along one axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSpec {
    pub axis: Axis,
    pub kernel_sizes: Vec<usize>,
}

impl BankSpec {
    pub fn new(axis: Axis, kernel_sizes: &[usize]) -> Self {
        BankSpec {
            axis,
            kernel_sizes: kernel_sizes.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config(format!(
                "axis {} has no candidate kernels",
                self.axis
            )));
        }
        for &k in &self.kernel_sizes {
            if k % 2 == 0 {
                return Err(Error::EvenKernel { size: k });
            }
        }
        if self.kernel_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "kernel sizes {:?} on axis {} must be strictly increasing",
                self.kernel_sizes, self.axis
            )));
        }
        Ok(())
    }

    pub fn kernel_count(&self) -> usize {
        self.kernel_sizes.len()
    }
}

/// Configuration of one AIC module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AicSpec {
    /// Outer channel count D.
    pub channels: usize,
    /// Inner channel count D′ of the bottleneck variant.
    #[serde(default)]
    pub bottleneck: Option<usize>,
    pub banks: Vec<BankSpec>,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub activation: Activation,
}

impl AicSpec {
    /// Three-axis module with the same kernel set on every axis.
    pub fn uniform(channels: usize, bottleneck: Option<usize>, kernel_sizes: &[usize]) -> Self {
        AicSpec {
            channels,
            bottleneck,
            banks: Axis::ALL.iter().map(|&a| BankSpec::new(a, kernel_sizes)).collect(),
            modulation: Modulation::Softmax,
            activation: Activation::Relu,
        }
    }

    /// Modulation-free single-kernel decomposed residual unit over the given axes.
    pub fn decomposed(channels: usize, axes: &[Axis], kernel: usize) -> Self {
        AicSpec {
            channels,
            bottleneck: None,
            banks: axes.iter().map(|&a| BankSpec::new(a, &[kernel])).collect(),
            modulation: Modulation::Ones,
            activation: Activation::Relu,
        }
    }

    pub fn with_modulation(mut self, modulation: Modulation) -> Self {
        self.modulation = modulation;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Channel count the axis banks operate at.
    pub fn inner_channels(&self) -> usize {
        self.bottleneck.unwrap_or(self.channels)
    }

    pub fn has_head(&self) -> bool {
        self.modulation == Modulation::Softmax
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("AIC channel count must be positive".into()));
        }
        if let Some(inner) = self.bottleneck {
            if inner == 0 || inner >= self.channels {
                return Err(Error::Config(format!(
                    "bottleneck width {inner} must satisfy 0 < D' < D = {}",
                    self.channels
                )));
            }
        }
        if self.banks.is_empty() {
            return Err(Error::Config("AIC module needs at least one axis bank".into()));
        }
        for (i, bank) in self.banks.iter().enumerate() {
            bank.validate()?;
            if self.banks[..i].iter().any(|b| b.axis == bank.axis) {
                return Err(Error::Config(format!("axis {} appears twice", bank.axis)));
            }
        }
        Ok(())
    }

    /// Creates the module's parameters under `prefix`. Convolution weights use
    /// fan-in scaled uniform init; biases and the modulation head start at zero.
    /// Without a head the branches are summed, so their fan-in counts every branch.
    pub fn init_params<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let (d, inner) = (self.channels, self.inner_channels());
        if self.bottleneck.is_some() {
            store.insert(format!("{prefix}.reduce.weight"), fan_in_uniform(vec![inner, d], d, rng), true);
            store.insert(format!("{prefix}.reduce.bias"), Tensor::zeros(vec![inner]), true);
        }
        for bank in &self.banks {
            let ax = bank.axis;
            let summed = if self.has_head() { 1 } else { bank.kernel_count() };
            for &k in &bank.kernel_sizes {
                store.insert(
                    format!("{prefix}.{ax}.k{k}.weight"),
                    fan_in_uniform(vec![inner, inner, k], inner * k * summed, rng),
                    true,
                );
                store.insert(format!("{prefix}.{ax}.k{k}.bias"), Tensor::zeros(vec![inner]), true);
            }
            if self.has_head() {
                let n = bank.kernel_count();
                store.insert(format!("{prefix}.{ax}.mod.weight"), Tensor::zeros(vec![n, inner]), true);
                store.insert(format!("{prefix}.{ax}.mod.bias"), Tensor::zeros(vec![n]), false);
            }
        }
        if self.bottleneck.is_some() {
            store.insert(format!("{prefix}.expand.weight"), fan_in_uniform(vec![d, inner], inner, rng), true);
            store.insert(format!("{prefix}.expand.bias"), Tensor::zeros(vec![d]), true);
        }
        Ok(())
    }
}

impl AicSpec {
    /// Parameters producing the residual branch's output: the expand weights,
    /// or the last bank's kernels without a bottleneck.
    pub fn output_weight_names(&self, prefix: &str) -> Vec<String> {
        if self.bottleneck.is_some() {
            return vec![format!("{prefix}.expand.weight")];
        }
        let last = self.banks.last().expect("validated spec has banks");
        last.kernel_sizes
            .iter()
            .map(|k| format!("{prefix}.{}.k{k}.weight", last.axis))
            .collect()
    }
}

/// Graph handles produced by one module evaluation.
pub struct AicTrace {
    pub output: Var,
    /// Modulation factors per bank, `[B, n, X, Y, Z]`; empty for fixed modulation.
    pub factors: Vec<Var>,
}

/// Softmax modulation factors for one bank: 1×1×1 head, then softmax over kernels.
pub fn modulation_factors<T: Scalar>(
    graph: &mut Graph<T>,
    params: &mut Binder<'_, T>,
    prefix: &str,
    bank: &BankSpec,
    input: Var,
) -> Result<Var> {
    let w = params.var(graph, &format!("{prefix}.{}.mod.weight", bank.axis))?;
    let b = params.var(graph, &format!("{prefix}.{}.mod.bias", bank.axis))?;
    let logits = graph.pointwise_conv(input, w, b)?;
    graph.softmax_channels(logits)
}

/// Σ_i conv_i(input) ⊙ factor_i along one axis. Returns the mixed output and
/// the factor tensor when a head is present.
pub fn axis_aniso_conv<T: Scalar>(
    graph: &mut Graph<T>,
    params: &mut Binder<'_, T>,
    prefix: &str,
    bank: &BankSpec,
    modulation: Modulation,
    input: Var,
) -> Result<(Var, Option<Var>)> {
    let ax = bank.axis;
    let mut branches = Vec::with_capacity(bank.kernel_count());
    for &k in &bank.kernel_sizes {
        let w = params.var(graph, &format!("{prefix}.{ax}.k{k}.weight"))?;
        let b = params.var(graph, &format!("{prefix}.{ax}.k{k}.bias"))?;
        branches.push(graph.conv1d_axis(input, w, b, ax)?);
    }
    let factors = match modulation {
        Modulation::Softmax => Some(modulation_factors(graph, params, prefix, bank, input)?),
        Modulation::Ones => None,
    };
    let mut mixed: Option<Var> = None;
    for (i, branch) in branches.into_iter().enumerate() {
        let term = match factors {
            Some(f) => {
                let fi = graph.slice_channels(f, i, 1)?;
                graph.mul_channel_broadcast(branch, fi)?
            }
            None => branch,
        };
        mixed = Some(match mixed {
            Some(acc) => graph.add(acc, term)?,
            None => term,
        });
    }
    Ok((mixed.expect("bank has at least one kernel"), factors))
}

/// Residual AIC forward pass: `input + F_last(…F_first(input))`.
pub fn aic_forward<T: Scalar>(
    graph: &mut Graph<T>,
    params: &mut Binder<'_, T>,
    prefix: &str,
    spec: &AicSpec,
    input: Var,
) -> Result<AicTrace> {
    let channels = graph.value(input).channels();
    if channels != spec.channels {
        return Err(Error::shape(
            "aic_forward",
            format!("module expects {} channels, input has {channels}", spec.channels),
        ));
    }
    let mut h = input;
    if spec.bottleneck.is_some() {
        let w = params.var(graph, &format!("{prefix}.reduce.weight"))?;
        let b = params.var(graph, &format!("{prefix}.reduce.bias"))?;
        h = graph.pointwise_conv(h, w, b)?;
    }
    let mut factors = Vec::new();
    let last = spec.banks.len() - 1;
    for (i, bank) in spec.banks.iter().enumerate() {
        let (mixed, f) = axis_aniso_conv(graph, params, prefix, bank, spec.modulation, h)?;
        factors.extend(f);
        h = if i < last && spec.activation == Activation::Relu {
            graph.relu(mixed)
        } else {
            mixed
        };
    }
    if spec.bottleneck.is_some() {
        let w = params.var(graph, &format!("{prefix}.expand.weight"))?;
        let b = params.var(graph, &format!("{prefix}.expand.bias"))?;
        h = graph.pointwise_conv(h, w, b)?;
    }
    let output = graph.add(h, input)?;
    Ok(AicTrace { output, factors })
}

/// A standalone module: spec plus its own parameters, keyed under `"aic"`.
#[derive(Clone, Debug)]
pub struct AicModule<T> {
    pub spec: AicSpec,
    pub params: ParamStore<T>,
}

impl<T: Scalar> AicModule<T> {
    pub const PREFIX: &'static str = "aic";

    pub fn new(spec: AicSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        spec.init_params(Self::PREFIX, &mut params, rng)?;
        Ok(AicModule { spec, params })
    }

    /// Same structure with every parameter set to zero.
    pub fn zeroed(spec: AicSpec) -> Result<Self> {
        let mut m = Self::new(spec, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        m.params.map_values(|_| T::zero());
        Ok(m)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let mut binder = Binder::new(&self.params, false);
        let x = graph.constant(input.clone());
        let trace = aic_forward(&mut graph, &mut binder, Self::PREFIX, &self.spec, x)?;
        Ok(graph.value(trace.output).clone())
    }

    /// Output plus the modulation factors of every bank.
    pub fn forward_with_factors(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut graph = Graph::new();
        let mut binder = Binder::new(&self.params, false);
        let x = graph.constant(input.clone());
        let trace = aic_forward(&mut graph, &mut binder, Self::PREFIX, &self.spec, x)?;
        let factors = trace.factors.iter().map(|&f| graph.value(f).clone()).collect();
        Ok((graph.value(trace.output).clone(), factors))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kernels;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn validation_rules() {
        assert!(AicSpec::uniform(8, None, &[3, 5, 7]).validate().is_ok());
        assert!(matches!(
            AicSpec::uniform(8, None, &[3, 4]).validate(),
            Err(Error::EvenKernel { size: 4 })
        ));
        assert!(AicSpec::uniform(8, None, &[5, 3]).validate().is_err());
        assert!(AicSpec::uniform(8, None, &[]).validate().is_err());
        assert!(AicSpec::uniform(8, Some(8), &[3]).validate().is_err());
        let mut dup = AicSpec::uniform(8, None, &[3]);
        dup.banks[1].axis = Axis::X;
        assert!(dup.validate().is_err());
    }

    #[test]
    fn zero_branch_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [
            AicSpec::uniform(4, None, &[3, 5, 7]),
            AicSpec::uniform(6, Some(2), &[3, 5]),
        ] {
            let m = AicModule::<f64>::zeroed(spec).unwrap();
            let x = random(&[1, m.spec.channels, 3, 4, 5], &mut rng);
            assert_eq!(m.forward(&x).unwrap(), x);
        }
    }

    #[test]
    fn zero_head_gives_uniform_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = AicModule::<f64>::new(AicSpec::uniform(3, None, &[3, 5, 7]), &mut rng).unwrap();
        let x = random(&[1, 3, 4, 4, 4], &mut rng);
        let (_, factors) = m.forward_with_factors(&x).unwrap();
        assert_eq!(factors.len(), 3);
        for f in factors {
            assert!(f.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn dominant_logit_selects_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = AicModule::<f64>::new(AicSpec::uniform(2, None, &[3, 5, 7]), &mut rng).unwrap();
        m.params.get_mut("aic.x.mod.bias").unwrap().data_mut()[1] = 20.0;
        let x = random(&[1, 2, 3, 3, 3], &mut rng);
        let (_, factors) = m.forward_with_factors(&x).unwrap();
        let vox = 27;
        for v in 0..vox {
            assert!(factors[0].data()[vox + v] > 0.999);
        }
    }

    #[test]
    fn single_kernel_bank_equals_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = AicSpec::uniform(3, None, &[5]).with_activation(Activation::None);
        let m = AicModule::<f64>::new(spec.clone(), &mut rng).unwrap();
        let x = random(&[1, 3, 4, 5, 6], &mut rng);
        let mut g = Graph::new();
        let mut b = Binder::new(&m.params, false);
        let xv = g.constant(x.clone());
        let (mixed, f) = axis_aniso_conv(&mut g, &mut b, "aic", &spec.banks[0], spec.modulation, xv).unwrap();
        let f = g.value(f.unwrap());
        assert!(f.data().iter().all(|&v| v == 1.0));
        let plain = kernels::conv1d_axis(
            &x,
            m.params.get("aic.x.k5.weight").unwrap(),
            m.params.get("aic.x.k5.bias").unwrap(),
            Axis::X,
        )
        .unwrap();
        assert!(g.value(mixed).max_abs_diff(&plain) < 1e-14);
    }

    #[test]
    fn zero_head_mix_is_average_of_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = AicSpec::uniform(2, None, &[3, 5, 7]);
        let m = AicModule::<f64>::new(spec.clone(), &mut rng).unwrap();
        let x = random(&[1, 2, 7, 3, 2], &mut rng);
        let mut g = Graph::new();
        let mut b = Binder::new(&m.params, false);
        let xv = g.constant(x.clone());
        let (mixed, _) = axis_aniso_conv(&mut g, &mut b, "aic", &spec.banks[0], spec.modulation, xv).unwrap();
        let mut avg = Tensor::<f64>::zeros(x.shape().to_vec());
        for k in [3, 5, 7] {
            let c = kernels::conv1d_axis(
                &x,
                m.params.get(&format!("aic.x.k{k}.weight")).unwrap(),
                m.params.get(&format!("aic.x.k{k}.bias")).unwrap(),
                Axis::X,
            )
            .unwrap();
            for (a, v) in avg.data_mut().iter_mut().zip(c.data()) {
                *a += v / 3.0;
            }
        }
        assert!(g.value(mixed).max_abs_diff(&avg) < 1e-14);
    }

    #[test]
    fn zero_kernels_give_zero_mix() {
        let spec = AicSpec::uniform(2, None, &[3, 5]);
        let m = AicModule::<f64>::zeroed(spec.clone()).unwrap();
        let x = Tensor::from_fn(vec![1, 2, 3, 3, 3], |i| i as f64);
        let mut g = Graph::new();
        let mut b = Binder::new(&m.params, false);
        let xv = g.constant(x);
        let (mixed, _) = axis_aniso_conv(&mut g, &mut b, "aic", &spec.banks[1], spec.modulation, xv).unwrap();
        assert!(g.value(mixed).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let m = AicModule::<f64>::zeroed(AicSpec::uniform(4, None, &[3])).unwrap();
        assert!(m.forward(&Tensor::zeros(vec![1, 3, 2, 2, 2])).is_err());
    }

    #[test]
    fn shape_preserved_and_noise_free_params_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = AicSpec::uniform(8, Some(4), &[3, 5, 7]);
        let m = AicModule::<f32>::new(spec, &mut rng).unwrap();
        let x = Tensor::<f32>::from_fn(vec![2, 8, 4, 2, 6], |i| (i as f32 * 0.37).sin());
        assert_eq!(m.forward(&x).unwrap().shape(), x.shape());
        assert!(!m.params.param("aic.y.mod.bias").unwrap().decay);
        assert!(m.params.param("aic.y.mod.weight").unwrap().decay);
    }
}

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aic::{aic_forward, Activation, AicSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::network::projection::ProjectionMap;
use crate::network::spec::NetworkSpec;
use crate::network::SceneSample;
use crate::params::{fan_in_uniform, Binder, ParamStore};
use crate::tensor::{LabelGrid, Scalar, Tensor};

/// Batched network inputs.
pub struct NetInputs<T> {
    pub depth: Tensor<T>,
    pub rgb: Tensor<T>,
    pub maps: Arc<Vec<ProjectionMap>>,
}

/// A row of the architecture table as it was executed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutedLayer {
    pub label: String,
    /// Channels followed by spatial extents.
    pub output: Vec<usize>,
}

pub struct NetOutput {
    pub logits: Var,
    pub layers: Vec<ExecutedLayer>,
    /// Modulation factors of every AIC bank in execution order.
    pub factors: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct AicNet<T> {
    pub spec: NetworkSpec,
    pub params: ParamStore<T>,
}

impl<T: Scalar> AicNet<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let e = spec.extractor;
        for &branch in spec.branches.names() {
            let cin = NetworkSpec::branch_inputs(branch);
            params.insert(
                format!("{branch}.stem.weight"),
                fan_in_uniform(vec![e.stem, cin], cin, &mut rng),
                true,
            );
            params.insert(format!("{branch}.stem.bias"), Tensor::zeros(vec![e.stem]), true);
            for i in 0..2 {
                spec.ddr2d_spec()
                    .init_params(&format!("{branch}.ddr2d.{i}"), &mut params, &mut rng)?;
            }
            for (j, (cin, cout)) in [(e.stem, e.mid), (e.mid, e.out)].into_iter().enumerate() {
                let conv_out = cout - cin;
                params.insert(
                    format!("{branch}.down{j}.weight"),
                    fan_in_uniform(vec![conv_out, cin, 3, 3, 3], cin * 27, &mut rng),
                    true,
                );
                params.insert(format!("{branch}.down{j}.bias"), Tensor::zeros(vec![conv_out]), true);
                spec.ddr3d_spec(cout)
                    .init_params(&format!("{branch}.ddr3d.{j}"), &mut params, &mut rng)?;
            }
        }
        let agg = spec.aggregation_aic();
        for s in 0..spec.aggregation.stages {
            for m in 0..spec.aggregation.modules_per_stage {
                agg.init_params(&format!("agg.{s}.{m}"), &mut params, &mut rng)?;
            }
        }
        let fusion = spec.fusion_aic();
        for m in 0..spec.fusion.modules {
            fusion.init_params(&format!("fusion.{m}"), &mut params, &mut rng)?;
        }
        // Every residual branch starts as the zero map, so the net starts as a
        // chain of identities and activations do not grow with depth.
        let mut residual_outputs = Vec::new();
        for &branch in spec.branches.names() {
            for i in 0..2 {
                residual_outputs.extend(spec.ddr2d_spec().output_weight_names(&format!("{branch}.ddr2d.{i}")));
            }
            for (j, c) in [e.mid, e.out].into_iter().enumerate() {
                residual_outputs.extend(spec.ddr3d_spec(c).output_weight_names(&format!("{branch}.ddr3d.{j}")));
            }
        }
        for s in 0..spec.aggregation.stages {
            for m in 0..spec.aggregation.modules_per_stage {
                residual_outputs.extend(agg.output_weight_names(&format!("agg.{s}.{m}")));
            }
        }
        for m in 0..spec.fusion.modules {
            residual_outputs.extend(fusion.output_weight_names(&format!("fusion.{m}")));
        }
        for name in residual_outputs {
            params.get_mut(&name)?.data_mut().fill(T::zero());
        }
        let mut cin = spec.fusion_channels();
        for (i, &cout) in spec.head.iter().chain(std::iter::once(&spec.class_count)).enumerate() {
            params.insert(
                format!("head.{i}.weight"),
                fan_in_uniform(vec![cout, cin], cin, &mut rng),
                true,
            );
            params.insert(format!("head.{i}.bias"), Tensor::zeros(vec![cout]), true);
            cin = cout;
        }
        Ok(AicNet { spec, params })
    }

    /// Same structure with every parameter zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        net.params.map_values(|_| T::zero());
        Ok(net)
    }

    pub fn inputs(&self, samples: &[&SceneSample]) -> Result<NetInputs<T>> {
        let [h, w] = self.spec.image;
        let pixels = h * w;
        let mut depth = Vec::with_capacity(samples.len() * pixels);
        let mut rgb = Vec::with_capacity(samples.len() * 3 * pixels);
        let mut maps = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.image != self.spec.image {
                return Err(Error::shape(
                    "network input",
                    format!("sample {i} image {:?} != spec {:?}", s.image, self.spec.image),
                ));
            }
            s.validate(self.spec.class_count)?;
            depth.extend(s.depth.iter().map(|&d| T::of(d as f64)));
            for c in 0..3 {
                rgb.extend((0..pixels).map(|p| T::of(s.rgb[p * 3 + c] as f64)));
            }
            maps.push(ProjectionMap::build(&s.depth, h, w, &self.spec.camera, &self.spec.grid)?);
        }
        let b = samples.len();
        Ok(NetInputs {
            depth: Tensor::new(vec![b, 1, h, w], depth)?,
            rgb: Tensor::new(vec![b, 3, h, w], rgb)?,
            maps: Arc::new(maps),
        })
    }

    /// Records the network on `graph`.
    pub fn forward(
        &self,
        graph: &mut Graph<T>,
        params: &mut Binder<'_, T>,
        inputs: &NetInputs<T>,
    ) -> Result<NetOutput> {
        let mut run = Run {
            graph,
            params,
            layers: Vec::new(),
            factors: Vec::new(),
            relu: self.spec.activation == Activation::Relu,
        };
        let e = self.spec.extractor;
        let mut branch_out = Vec::new();
        for &branch in self.spec.branches.names() {
            let x = match branch {
                "rgb" => run.graph.constant(inputs.rgb.clone()),
                _ => run.graph.constant(inputs.depth.clone()),
            };
            let tag = |op: &str| format!("{branch}/{op}");
            let mut h = run.layer(&tag("PWConv"), |r| {
                let y = r.pointwise(&format!("{branch}.stem"), x)?;
                Ok(r.act(y))
            })?;
            for i in 0..2 {
                h = run.layer(&tag("2D DDR"), |r| {
                    r.aic(&format!("{branch}.ddr2d.{i}"), &self.spec.ddr2d_spec(), h)
                })?;
            }
            h = run.layer(&tag("2D-3D Projection"), |r| r.graph.project(h, inputs.maps.clone()))?;
            for (j, width) in [e.mid, e.out].into_iter().enumerate() {
                h = run.layer(&tag("Down-sample"), |r| r.downsample(&format!("{branch}.down{j}"), h))?;
                h = run.layer(&tag("3D DDR"), |r| {
                    r.aic(&format!("{branch}.ddr3d.{j}"), &self.spec.ddr3d_spec(width), h)
                })?;
            }
            branch_out.push(h);
        }

        let mut s = run.layer("Add", |r| {
            let mut acc = branch_out[0];
            for &b in &branch_out[1..] {
                acc = r.graph.add(acc, b)?;
            }
            Ok(acc)
        })?;
        let mut collected = vec![s];
        let agg = self.spec.aggregation_aic();
        let stack_name = if self.spec.aggregation.modules_per_stage == 2 {
            "AIC ×2"
        } else {
            "AIC stack"
        };
        for stage in 0..self.spec.aggregation.stages {
            let h = run.layer(stack_name, |r| {
                let mut h = s;
                for m in 0..self.spec.aggregation.modules_per_stage {
                    h = r.aic(&format!("agg.{stage}.{m}"), &agg, h)?;
                }
                Ok(h)
            })?;
            s = run.layer("Add", |r| r.graph.add(h, s))?;
            collected.push(s);
        }
        let mut h = run.layer("Concatenate", |r| r.graph.concat_channels(&collected))?;
        let fusion = self.spec.fusion_aic();
        for m in 0..self.spec.fusion.modules {
            h = run.layer("AIC", |r| r.aic(&format!("fusion.{m}"), &fusion, h))?;
        }
        let last = self.spec.head.len();
        for i in 0..=last {
            h = run.layer("PWConv", |r| {
                let y = r.pointwise(&format!("head.{i}"), h)?;
                Ok(if i < last { r.act(y) } else { y })
            })?;
        }
        Ok(NetOutput {
            logits: h,
            layers: run.layers,
            factors: run.factors,
        })
    }

    /// Logits `[B, class_count, X/4, Y/4, Z/4]` without gradient tracking.
    pub fn logits(&self, samples: &[&SceneSample]) -> Result<Tensor<T>> {
        let inputs = self.inputs(samples)?;
        let mut graph = Graph::new();
        let mut binder = Binder::new(&self.params, false);
        let out = self.forward(&mut graph, &mut binder, &inputs)?;
        Ok(graph.value(out.logits).clone())
    }

    /// Predicted 1-based labels; ties resolve to the lowest class.
    pub fn predict(&self, samples: &[&SceneSample]) -> Result<LabelGrid> {
        let logits = self.logits(samples)?;
        let labels = kernels::argmax_channels(&logits).into_iter().map(|c| c + 1).collect();
        let [x, y, z] = logits.spatial();
        LabelGrid::new([logits.batch(), x, y, z], labels)
    }
}

struct Run<'g, 'b, 'p, T> {
    graph: &'g mut Graph<T>,
    params: &'b mut Binder<'p, T>,
    layers: Vec<ExecutedLayer>,
    factors: Vec<Var>,
    relu: bool,
}

impl<T: Scalar> Run<'_, '_, '_, T> {
    fn layer(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<Var>) -> Result<Var> {
        let index = self.layers.len();
        let v = f(self).map_err(|e| e.in_layer(index, label))?;
        let value = self.graph.value(v);
        let mut output = vec![value.channels()];
        output.extend_from_slice(&value.shape()[2..]);
        self.layers.push(ExecutedLayer {
            label: label.to_string(),
            output,
        });
        Ok(v)
    }

    fn act(&mut self, v: Var) -> Var {
        if self.relu {
            self.graph.relu(v)
        } else {
            v
        }
    }

    fn pointwise(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.params.var(self.graph, &format!("{prefix}.weight"))?;
        let b = self.params.var(self.graph, &format!("{prefix}.bias"))?;
        self.graph.pointwise_conv(x, w, b)
    }

    fn aic(&mut self, prefix: &str, spec: &AicSpec, x: Var) -> Result<Var> {
        let trace = aic_forward(self.graph, self.params, prefix, spec, x)?;
        self.factors.extend(trace.factors);
        Ok(trace.output)
    }

    /// concat(max-pool stride 2, conv k=3 stride 2), then activation.
    fn downsample(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let pooled = self.graph.max_pool2(x)?;
        let w = self.params.var(self.graph, &format!("{prefix}.weight"))?;
        let b = self.params.var(self.graph, &format!("{prefix}.bias"))?;
        let conv = self.graph.conv3d(x, w, b, 2)?;
        let y = self.graph.concat_channels(&[pooled, conv])?;
        Ok(self.act(y))
    }
}

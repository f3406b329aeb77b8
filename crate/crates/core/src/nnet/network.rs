use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Groups, Neighbors, Tape, Var};
use super::Tensor;
use crate::domain::StationGraph;
use crate::error::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    SageConv { input: usize, output: usize },
    Dense { input: usize, output: usize },
    BatchNorm { dim: usize },
    Relu,
    Dropout { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub output_members: usize,
}

impl NetworkSpec {
    /// Hidden blocks of SAGEConv, batch norm, ReLU and dropout followed by
    /// an output SAGEConv with one unit per member.
    pub fn graphsage(input: usize, hidden: &[usize], members: usize, dropout: f64) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(LayerSpec::SageConv { input: width, output: h });
            layers.push(LayerSpec::BatchNorm { dim: h });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Dropout { rate: dropout });
            width = h;
        }
        layers.push(LayerSpec::SageConv {
            input: width,
            output: members,
        });
        Self {
            layers,
            output_members: members,
        }
    }

    /// Dense layers with ReLU between them.
    pub fn mlp(input: usize, hidden: &[usize], members: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(LayerSpec::Dense { input: width, output: h });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            input: width,
            output: members,
        });
        Self {
            layers,
            output_members: members,
        }
    }

    /// Width of the node features expected by the first layer.
    pub fn input_dim(&self) -> Result<usize> {
        self.validate()
    }

    /// Checks that adjacent widths agree; returns the input width.
    pub fn validate(&self) -> Result<usize> {
        let mut width: Option<usize> = None;
        let mut input = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (inp, out) = match *layer {
                LayerSpec::SageConv { input, output } | LayerSpec::Dense { input, output } => (Some(input), output),
                LayerSpec::BatchNorm { dim } => (Some(dim), dim),
                LayerSpec::Relu => match width {
                    Some(w) => (None, w),
                    None => return Err(Error::Config("network cannot start with an activation".into())),
                },
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    match width {
                        Some(w) => (None, w),
                        None => return Err(Error::Config("network cannot start with dropout".into())),
                    }
                }
            };
            if let Some(inp) = inp {
                if inp == 0 || out == 0 {
                    return Err(Error::Config(format!("layer {i} has zero width")));
                }
                match width {
                    Some(w) if w != inp => {
                        return Err(Error::Config(format!("layer {i} expects width {inp}, previous layer gives {w}")));
                    }
                    None => input = Some(inp),
                    _ => {}
                }
            }
            width = Some(out);
        }
        match (input, width) {
            (Some(i), Some(w)) if w == self.output_members => Ok(i),
            (Some(_), Some(w)) => Err(Error::Config(format!(
                "final width {w} differs from the {} output members",
                self.output_members
            ))),
            _ => Err(Error::Config("network has no layers".into())),
        }
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for layer in &self.layers {
            match *layer {
                LayerSpec::SageConv { input, output } => {
                    shapes.extend([(input, output), (input, output), (1, output)]);
                }
                LayerSpec::Dense { input, output } => shapes.extend([(input, output), (1, output)]),
                LayerSpec::BatchNorm { dim } => shapes.extend([(1, dim), (1, dim)]),
                LayerSpec::Relu | LayerSpec::Dropout { .. } => {}
            }
        }
        shapes
    }

    fn batch_norm_dims(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::BatchNorm { dim } => Some(*dim),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean and variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Trainable parameters plus batch-norm buffers for a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
    running: Vec<RunningStats>,
}

/// Result of recording a forward pass.
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
    pub batch_stats: Vec<RunningStats>,
}

/// One graph with node features and (for training) observations.
#[derive(Clone, Debug)]
pub struct Instance {
    pub features: Tensor,
    pub neighbors: Neighbors,
    pub observations: Vec<f64>,
}

impl Instance {
    pub fn new(features: Tensor, neighbors: Neighbors, observations: Vec<f64>) -> Result<Self> {
        if neighbors.len() != features.rows() || observations.len() != features.rows() {
            return Err(Error::mismatch(format!(
                "instance with {} feature rows, {} graph nodes and {} observations",
                features.rows(),
                neighbors.len(),
                observations.len()
            )));
        }
        Ok(Self {
            features,
            neighbors,
            observations,
        })
    }
}

pub fn graph_neighbors(graph: &StationGraph) -> Neighbors {
    Arc::new(graph.neighbors())
}

/// Stacks instances into one block-diagonal graph.
pub fn stack(instances: &[&Instance]) -> Result<(Tensor, Neighbors, Vec<f64>, Groups)> {
    let parts: Vec<&Tensor> = instances.iter().map(|i| &i.features).collect();
    let features = Tensor::vstack(&parts)?;
    let mut neighbors = Vec::with_capacity(features.rows());
    let mut obs = Vec::with_capacity(features.rows());
    let mut groups = Vec::with_capacity(instances.len());
    let mut offset = 0;
    for inst in instances {
        for nb in inst.neighbors.iter() {
            neighbors.push(nb.iter().map(|u| u + offset).collect());
        }
        obs.extend_from_slice(&inst.observations);
        groups.push((offset, inst.features.rows()));
        offset += inst.features.rows();
    }
    Ok((features, Arc::new(neighbors), obs, Arc::new(groups)))
}

impl Network {
    /// He-normal weights, zero biases, unit batch-norm scales.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in &spec.layers {
            match *layer {
                LayerSpec::SageConv { input, output } => {
                    let std = (2.0 / (2 * input) as f64).sqrt();
                    params.push(he(&mut rng, input, output, std));
                    params.push(he(&mut rng, input, output, std));
                    params.push(Tensor::zeros(1, output));
                }
                LayerSpec::Dense { input, output } => {
                    params.push(he(&mut rng, input, output, (2.0 / input as f64).sqrt()));
                    params.push(Tensor::zeros(1, output));
                }
                LayerSpec::BatchNorm { dim } => {
                    params.push(Tensor::filled(1, dim, 1.0));
                    params.push(Tensor::zeros(1, dim));
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } => {}
            }
        }
        let running = spec
            .batch_norm_dims()
            .into_iter()
            .map(|d| RunningStats {
                mean: vec![0.0; d],
                var: vec![1.0; d],
            })
            .collect();
        Ok(Self { spec, params, running })
    }

    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>, running: Vec<RunningStats>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.shape()) {
            return Err(Error::mismatch("parameter shapes do not match the network spec"));
        }
        let dims = spec.batch_norm_dims();
        if dims.len() != running.len()
            || dims
                .iter()
                .zip(&running)
                .any(|(d, r)| r.mean.len() != *d || r.var.len() != *d)
        {
            return Err(Error::mismatch("batch-norm statistics do not match the network spec"));
        }
        Ok(Self { spec, params, running })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running(&self) -> &[RunningStats] {
        &self.running
    }

    /// Sets every bias of the final layer to `value`.
    pub fn set_output_bias(&mut self, value: f64) {
        if let Some(b) = self.params.last_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }

    /// Records a forward pass on `tape`. Dropout draws from `rng` in train
    /// mode only.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        features: Tensor,
        neighbors: &Neighbors,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let input = self.spec.validate()?;
        if features.cols() != input {
            return Err(Error::mismatch(format!(
                "network expects {input} features, got {}",
                features.cols()
            )));
        }
        if neighbors.len() != features.rows() {
            return Err(Error::mismatch(format!(
                "graph has {} nodes, features have {} rows",
                neighbors.len(),
                features.rows()
            )));
        }
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut h = tape.leaf(features);
        let mut next = 0;
        let mut bn_index = 0;
        let mut batch_stats = Vec::new();
        for (li, layer) in self.spec.layers.iter().enumerate() {
            h = match *layer {
                LayerSpec::SageConv { .. } => {
                    let (ws, wn, b) = (params[next], params[next + 1], params[next + 2]);
                    next += 3;
                    let agg = tape.neighbor_mean(h, neighbors.clone())?;
                    let own = tape.matmul(h, ws)?;
                    let nb = tape.matmul(agg, wn)?;
                    let sum = tape.add(own, nb)?;
                    tape.add_bias(sum, b)?
                }
                LayerSpec::Dense { .. } => {
                    let (w, b) = (params[next], params[next + 1]);
                    next += 2;
                    let z = tape.matmul(h, w)?;
                    tape.add_bias(z, b)?
                }
                LayerSpec::BatchNorm { .. } => {
                    let (g, b) = (params[next], params[next + 1]);
                    next += 2;
                    let stats = &self.running[bn_index];
                    bn_index += 1;
                    match mode {
                        Mode::Train => {
                            let (out, mean, var) = tape.batch_norm(h, g, b, BATCH_NORM_EPS, None)?;
                            batch_stats.push(RunningStats { mean, var });
                            out
                        }
                        Mode::Eval => {
                            tape.batch_norm(h, g, b, BATCH_NORM_EPS, Some((&stats.mean, &stats.var)))?
                                .0
                        }
                    }
                }
                LayerSpec::Relu => tape.relu(h)?,
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train if rate > 0.0 => tape.dropout(h, rate, rng)?,
                    _ => h,
                },
            };
            if !tape.value(h)?.is_finite() {
                return Err(Error::Numerical(format!("non-finite activation after layer {li}")));
            }
        }
        Ok(Forward {
            output: h,
            params,
            batch_stats,
        })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&mut self, batch_stats: &[RunningStats], rows: usize) {
        let unbias = if rows > 1 {
            rows as f64 / (rows - 1) as f64
        } else {
            1.0
        };
        for (run, batch) in self.running.iter_mut().zip(batch_stats) {
            for (r, b) in run.mean.iter_mut().zip(&batch.mean) {
                *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * b;
            }
            for (r, b) in run.var.iter_mut().zip(&batch.var) {
                *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * b * unbias;
            }
        }
    }

    /// Eval-mode output, one row of members per node.
    pub fn predict(&self, features: &Tensor, neighbors: &Neighbors) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward(&mut tape, features.clone(), neighbors, Mode::Eval, &mut rng)?;
        Ok(tape.value(f.output)?.clone())
    }
}

fn he<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive standard deviation");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}

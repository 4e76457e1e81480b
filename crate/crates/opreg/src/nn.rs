//! Layer specifications, parameter initialization, and network forward pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
    },
    Conv2dTranspose {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv",
            LayerSpec::Conv2dTranspose { .. } => "tconv",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    /// Output shape (batch axis excluded) for the given input shape, or the
    /// reason this layer cannot follow it.
    fn infer(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            LayerSpec::Dense { units, .. } => {
                if *units == 0 {
                    return Err("dense layer needs units > 0".into());
                }
                match input {
                    [_] => Ok(vec![*units]),
                    other => Err(format!(
                        "dense layer expects a flat input, got {:?} (insert a flatten layer)",
                        other
                    )),
                }
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                ..
            } => {
                if *filters == 0 {
                    return Err("conv layer needs filters > 0".into());
                }
                if stride.0 == 0 || stride.1 == 0 {
                    return Err("conv stride must be >= 1".into());
                }
                match input {
                    [h, w, _] => {
                        if kernel.0 > *h || kernel.1 > *w {
                            Err(format!(
                                "kernel {}x{} larger than input {}x{}",
                                kernel.0, kernel.1, h, w
                            ))
                        } else {
                            Ok(vec![
                                (h - kernel.0) / stride.0 + 1,
                                (w - kernel.1) / stride.1 + 1,
                                *filters,
                            ])
                        }
                    }
                    other => Err(format!("conv layer expects [h, w, c] input, got {:?}", other)),
                }
            }
            LayerSpec::Conv2dTranspose {
                filters, stride, ..
            } => {
                if *filters == 0 {
                    return Err("transposed conv layer needs filters > 0".into());
                }
                if stride.0 == 0 || stride.1 == 0 {
                    return Err("transposed conv stride must be >= 1".into());
                }
                match input {
                    [h, w, _] => Ok(vec![h * stride.0, w * stride.1, *filters]),
                    other => Err(format!(
                        "transposed conv layer expects [h, w, c] input, got {:?}",
                        other
                    )),
                }
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(rate) {
                    Ok(input.to_vec())
                } else {
                    Err(format!("dropout rate {} outside [0, 1)", rate))
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered layer stack with owned parameters.
#[derive(Clone, Debug)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    /// Per-layer output shapes, batch axis excluded.
    layer_shapes: Vec<Vec<usize>>,
    params: Vec<Param>,
    /// Indexes into `params` per layer: (weights, bias).
    layer_params: Vec<Option<(usize, usize)>>,
}

impl Network {
    /// Build a network with Glorot-uniform weights and zero biases drawn from
    /// a stream seeded by `seed`; the same seed yields bit-identical
    /// parameters.
    pub fn build(specs: Vec<LayerSpec>, input_shape: Vec<usize>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer_shapes = Vec::with_capacity(specs.len());
        let mut params = Vec::new();
        let mut layer_params = Vec::with_capacity(specs.len());
        let mut shape = input_shape.clone();
        for (index, spec) in specs.iter().enumerate() {
            shape = spec.infer(&shape).map_err(|reason| Error::InvalidLayer {
                index,
                kind: spec.kind_name().to_string(),
                reason,
            })?;
            let entry = match spec {
                LayerSpec::Dense { units, .. } => {
                    let fan_in = *layer_shapes
                        .last()
                        .unwrap_or(&input_shape)
                        .first()
                        .expect("dense input validated");
                    let w = glorot(&[fan_in, *units], fan_in, *units, &mut rng);
                    Some(push_pair(&mut params, index, "dense", w, *units))
                }
                LayerSpec::Conv2d {
                    filters, kernel, ..
                } => {
                    let cin = *layer_shapes
                        .last()
                        .unwrap_or(&input_shape)
                        .last()
                        .expect("conv input validated");
                    let fan_in = kernel.0 * kernel.1 * cin;
                    let fan_out = kernel.0 * kernel.1 * filters;
                    let w = glorot(
                        &[kernel.0, kernel.1, cin, *filters],
                        fan_in,
                        fan_out,
                        &mut rng,
                    );
                    Some(push_pair(&mut params, index, "conv", w, *filters))
                }
                LayerSpec::Conv2dTranspose {
                    filters, kernel, ..
                } => {
                    let cin = *layer_shapes
                        .last()
                        .unwrap_or(&input_shape)
                        .last()
                        .expect("conv input validated");
                    let fan_in = kernel.0 * kernel.1 * cin;
                    let fan_out = kernel.0 * kernel.1 * filters;
                    let w = glorot(
                        &[kernel.0, kernel.1, *filters, cin],
                        fan_in,
                        fan_out,
                        &mut rng,
                    );
                    Some(push_pair(&mut params, index, "tconv", w, *filters))
                }
                LayerSpec::Flatten | LayerSpec::Dropout { .. } => None,
            };
            layer_params.push(entry);
            layer_shapes.push(shape.clone());
        }
        Ok(Self {
            specs,
            input_shape,
            layer_shapes,
            params,
            layer_params,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layer_shapes.last().unwrap_or(&self.input_shape)
    }

    /// Shape after each layer, batch axis excluded.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.layer_shapes
    }

    pub fn output_width(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Register all parameters on a tape. Call once per forward pass.
    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> StagedNetwork {
        StagedNetwork {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), trainable))
                .collect(),
        }
    }

    /// Layer composition on the tape; `x` is `[batch, ...input_shape]`.
    /// Dropout is active only when `training` is set.
    pub fn forward(
        &self,
        tape: &mut Tape,
        staged: &StagedNetwork,
        x: Var,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let got = tape.shape(x).to_vec();
        if got.len() != self.input_shape.len() + 1 || got[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "network input",
                lhs: got,
                rhs: self.input_shape.clone(),
            });
        }
        let batch = got[0];
        let mut cur = x;
        for (i, spec) in self.specs.iter().enumerate() {
            cur = match spec {
                LayerSpec::Dense { activation, .. } => {
                    let (w, b) = self.staged_pair(staged, i);
                    let z = tape.matmul(cur, w)?;
                    let z = tape.add_bias(z, b)?;
                    activate(tape, z, *activation)
                }
                LayerSpec::Conv2d {
                    stride, activation, ..
                } => {
                    let (w, b) = self.staged_pair(staged, i);
                    let z = tape.conv2d(cur, w, b, *stride)?;
                    activate(tape, z, *activation)
                }
                LayerSpec::Conv2dTranspose {
                    stride, activation, ..
                } => {
                    let (w, b) = self.staged_pair(staged, i);
                    let z = tape.conv2d_transpose(cur, w, b, *stride)?;
                    activate(tape, z, *activation)
                }
                LayerSpec::Flatten => {
                    let mut s = vec![batch];
                    s.push(self.layer_shapes[i][0]);
                    tape.reshape(cur, &s)?
                }
                LayerSpec::Dropout { rate } => tape.dropout(cur, *rate, training, rng)?,
            };
        }
        Ok(cur)
    }

    fn staged_pair(&self, staged: &StagedNetwork, layer: usize) -> (Var, Var) {
        let (w, b) = self.layer_params[layer].expect("parametric layer");
        (staged.vars[w], staged.vars[b])
    }
}

/// Tape handles for one staging of a network's parameters, in the same order
/// as `Network::params`.
pub struct StagedNetwork {
    pub vars: Vec<Var>,
}

fn activate(tape: &mut Tape, x: Var, activation: Activation) -> Var {
    match activation {
        Activation::Relu => tape.relu(x),
        Activation::Linear => x,
    }
}

fn push_pair(
    params: &mut Vec<Param>,
    layer: usize,
    kind: &str,
    weights: Tensor,
    units: usize,
) -> (usize, usize) {
    let wname = if kind == "dense" { "weight" } else { "kernel" };
    params.push(Param {
        name: format!("{layer}.{kind}.{wname}"),
        value: weights,
    });
    params.push(Param {
        name: format!("{layer}.{kind}.bias"),
        value: Tensor::zeros(&[units]),
    });
    (params.len() - 2, params.len() - 1)
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

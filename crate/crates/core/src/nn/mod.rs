//! A small differentiable-network substrate.
//!
//! Activations are rank-3 tensors laid out row-major as `(len, chans, feats)`:
//! time steps, series channels, and feature maps. A raw window of `L` steps and
//! `C` channels is either `(L, C, 1)` or `(L, 1, C)`; both share one memory
//! layout, so the choice only decides which layers see the channels.
//!
//! Gradients are computed layer by layer in reverse over a [`Tape`] that holds
//! the input of every layer from the matching forward pass.

mod checkpoint;
mod layers;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{sigmoid, Activation, LayerSpec};
pub use optim::{adam_step, AdamConfig, OptimizerState};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::par::Exec;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub len: usize,
    pub chans: usize,
    pub feats: usize,
}

impl Shape {
    pub const fn new(len: usize, chans: usize, feats: usize) -> Self {
        Self { len, chans, feats }
    }

    pub fn size(&self) -> usize {
        self.len * self.chans * self.feats
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.len, self.chans, self.feats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.size() {
            return Err(Error::Shape(format!(
                "{} values for tensor of shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.size()],
        }
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub tensors: Vec<Param>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(
            self.tensors
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.tensors.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.tensors.iter_mut().find(|p| p.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradients aligned with a [`ParamSet`], one flat vector per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Layer inputs recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    fingerprint: u64,
    timestep: Option<usize>,
    inputs: Vec<Tensor>,
}

/// A validated stack of layers with precomputed shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    param_index: Vec<Option<usize>>,
    fingerprint: u64,
}

impl Network {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.size() == 0 {
            return Err(Error::Shape(format!("empty input shape {input}")));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input);
        let mut param_index = Vec::with_capacity(layers.len());
        let mut n_params = 0;
        for (i, layer) in layers.iter().enumerate() {
            let out = layer
                .output_shape(shapes[i])
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
            shapes.push(out);
            if layer.param_shapes().is_empty() {
                param_index.push(None);
            } else {
                param_index.push(Some(n_params));
                n_params += 2;
            }
        }
        let fingerprint = rng::derive_seed(0, &format!("{input:?}{layers:?}"));
        Ok(Self {
            input,
            layers,
            shapes,
            param_index,
            fingerprint,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("shapes include the input")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn uses_timestep(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::TimeEmbedding { .. }))
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut r = rng::rng(seed);
        let mut tensors = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let (w_shape, b_shape) = (&shapes[0], &shapes[1]);
            let std = (1.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let w_len = w_shape.iter().product();
            tensors.push(Param {
                name: format!("layer{i}.{}.weight", layer.name()),
                shape: w_shape.clone(),
                data: (0..w_len).map(|_| normal.sample(&mut r)).collect(),
            });
            tensors.push(Param {
                name: format!("layer{i}.{}.bias", layer.name()),
                shape: b_shape.clone(),
                data: vec![0.0; b_shape.iter().product()],
            });
        }
        ParamSet { tensors }
    }

    /// Checks that `params` has the tensors this network expects.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let expected: Vec<Vec<usize>> = self.layers.iter().flat_map(|l| l.param_shapes()).collect();
        if expected.len() != params.len() {
            return Err(Error::Shape(format!(
                "network expects {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (shape, p) in expected.iter().zip(&params.tensors) {
            if *shape != p.shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?}, expected {shape:?}",
                    p.name, p.shape
                )));
            }
        }
        Ok(())
    }

    fn check_call(&self, params: &ParamSet, input: &Tensor, timestep: Option<usize>) -> Result<()> {
        if input.shape != self.input || input.data.len() != self.input.size() {
            return Err(Error::Shape(format!(
                "input shape {} does not match network input {}",
                input.shape, self.input
            )));
        }
        match (self.uses_timestep(), timestep) {
            (true, None) => return Err(Error::InvalidArgument("network needs a timestep".into())),
            (false, Some(_)) => {
                return Err(Error::InvalidArgument("network takes no timestep".into()))
            }
            _ => {}
        }
        self.check_params(params)
    }

    fn layer_params<'a>(&self, i: usize, params: &'a ParamSet) -> Option<(&'a [f64], &'a [f64])> {
        self.param_index[i].map(|k| {
            (
                params.tensors[k].data.as_slice(),
                params.tensors[k + 1].data.as_slice(),
            )
        })
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        input: &Tensor,
        timestep: Option<usize>,
    ) -> Result<(Tensor, Tape)> {
        self.check_call(params, input, timestep)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(
                self.layer_params(i, params),
                &x,
                self.shapes[i + 1],
                timestep,
            );
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok((
            x,
            Tape {
                fingerprint: self.fingerprint,
                timestep,
                inputs,
            },
        ))
    }

    /// Forward pass without recording a tape.
    pub fn predict(
        &self,
        params: &ParamSet,
        input: &Tensor,
        timestep: Option<usize>,
    ) -> Result<Tensor> {
        self.check_call(params, input, timestep)?;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(
                self.layer_params(i, params),
                &x,
                self.shapes[i + 1],
                timestep,
            );
        }
        Ok(x)
    }

    /// Reverse pass: `grad_output` is the gradient of a scalar loss with
    /// respect to the network output.
    pub fn backward(&self, params: &ParamSet, tape: &Tape, grad_output: &Tensor) -> Result<Grads> {
        if tape.fingerprint != self.fingerprint || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape(
                "tape was recorded by a different network".into(),
            ));
        }
        self.check_params(params)?;
        if grad_output.shape != self.output_shape() {
            return Err(Error::Shape(format!(
                "output gradient shape {} does not match network output {}",
                grad_output.shape,
                self.output_shape()
            )));
        }
        let mut grads = params.zeros_like();
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let slot = self.param_index[i];
            let (gw, gb) = match slot {
                Some(k) => {
                    let (a, b) = grads.0.split_at_mut(k + 1);
                    (Some(a[k].as_mut_slice()), Some(b[0].as_mut_slice()))
                }
                None => (None, None),
            };
            let need_input = i > 0;
            g = self.layers[i].backward(
                self.layer_params(i, params),
                &tape.inputs[i],
                &g,
                tape.timestep,
                gw.zip(gb),
                need_input,
            );
        }
        Ok(grads)
    }
}

/// Sums per-sample losses and gradients. Samples are evaluated through
/// `exec` and reduced in input order.
pub fn accumulate<S, F>(params: &ParamSet, samples: &[S], exec: Exec, f: F) -> Result<(f64, Grads)>
where
    S: Sync,
    F: Fn(&S) -> Result<(f64, Grads)> + Sync + Send,
{
    let parts = exec.try_map(samples, f)?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Fixed scalar probe used by [`finite_diff_check`]:
/// `sum_k sin(k + 1) * y_k + 0.5 * y_k^2`.
fn probe_loss(out: &[f64]) -> f64 {
    out.iter()
        .enumerate()
        .map(|(k, y)| ((k + 1) as f64).sin() * y + 0.5 * y * y)
        .sum()
}

fn probe_grad(out: &Tensor) -> Tensor {
    let data = out
        .data
        .iter()
        .enumerate()
        .map(|(k, y)| ((k + 1) as f64).sin() + y)
        .collect();
    Tensor {
        shape: out.shape,
        data,
    }
}

/// Largest relative error between backward gradients and central
/// differences of a fixed scalar loss, over every parameter entry.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check(
    net: &Network,
    params: &ParamSet,
    input: &Tensor,
    timestep: Option<usize>,
    step: f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument(
            "finite difference step must be positive".into(),
        ));
    }
    let (out, tape) = net.forward(params, input, timestep)?;
    let analytic = net.backward(params, &tape, &probe_grad(&out))?;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (k, tensor) in params.tensors.iter().enumerate() {
        for j in 0..tensor.data.len() {
            let orig = tensor.data[j];
            probe.tensors[k].data[j] = orig + step;
            let up = probe_loss(&net.predict(&probe, input, timestep)?.data);
            probe.tensors[k].data[j] = orig - step;
            let down = probe_loss(&net.predict(&probe, input, timestep)?.data);
            probe.tensors[k].data[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.0[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

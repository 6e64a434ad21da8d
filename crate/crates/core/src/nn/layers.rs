use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Layer vocabulary. Weight layouts put the output feature last so inner
/// loops run over contiguous memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Pointwise affine map over the feature axis at every (time, channel).
    /// Weight `[inputs, outputs]`.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Convolution along time with "same" zero padding, weights shared across
    /// channels. Weight `[kernel, inputs, outputs]`; output step `t` reads
    /// inputs `t + j - (kernel - 1) / 2` for `j` in `0..kernel`.
    TemporalConv {
        kernel: usize,
        inputs: usize,
        outputs: usize,
    },
    /// Mixes all channels at each time step, collapsing the channel axis to 1.
    /// Weight `[channels, inputs, outputs]`.
    ChannelConv {
        channels: usize,
        inputs: usize,
        outputs: usize,
    },
    Activation {
        function: Activation,
    },
    /// Mean over the time axis.
    GlobalMeanPool,
    /// Adds a learned projection of the sinusoidal embedding of the timestep
    /// to every position. Weight `[dim, features]`.
    TimeEmbedding {
        dim: usize,
        features: usize,
    },
    /// `(L, C, F) -> (L, 1, C * F)`; data layout unchanged.
    MergeChannels,
    /// `(L, C, F) -> (1, 1, L * C * F)`; data layout unchanged.
    Flatten,
}

pub fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        e[i] = arg.sin();
        e[half + i] = arg.cos();
    }
    e
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::TemporalConv { .. } => "temporal_conv",
            LayerSpec::ChannelConv { .. } => "channel_conv",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::GlobalMeanPool => "global_mean_pool",
            LayerSpec::TimeEmbedding { .. } => "time_embedding",
            LayerSpec::MergeChannels => "merge_channels",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn act(function: Activation) -> Self {
        LayerSpec::Activation { function }
    }

    pub(crate) fn output_shape(&self, s: Shape) -> Result<Shape, String> {
        let need = |ok: bool, msg: String| if ok { Ok(()) } else { Err(msg) };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                need(
                    inputs == s.feats,
                    format!("expects {inputs} features, input has {}", s.feats),
                )?;
                need(outputs > 0, "zero outputs".into())?;
                Ok(Shape::new(s.len, s.chans, outputs))
            }
            LayerSpec::TemporalConv {
                kernel,
                inputs,
                outputs,
            } => {
                need(
                    inputs == s.feats,
                    format!("expects {inputs} features, input has {}", s.feats),
                )?;
                need(
                    kernel >= 1 && kernel <= s.len,
                    format!("kernel {kernel} vs length {}", s.len),
                )?;
                need(outputs > 0, "zero outputs".into())?;
                Ok(Shape::new(s.len, s.chans, outputs))
            }
            LayerSpec::ChannelConv {
                channels,
                inputs,
                outputs,
            } => {
                need(
                    channels == s.chans,
                    format!("expects {channels} channels, input has {}", s.chans),
                )?;
                need(
                    inputs == s.feats,
                    format!("expects {inputs} features, input has {}", s.feats),
                )?;
                need(outputs > 0, "zero outputs".into())?;
                Ok(Shape::new(s.len, 1, outputs))
            }
            LayerSpec::Activation { .. } => Ok(s),
            LayerSpec::GlobalMeanPool => Ok(Shape::new(1, s.chans, s.feats)),
            LayerSpec::TimeEmbedding { dim, features } => {
                need(
                    features == s.feats,
                    format!("expects {features} features, input has {}", s.feats),
                )?;
                need(
                    dim >= 2 && dim % 2 == 0,
                    format!("embedding dim {dim} must be even and >= 2"),
                )?;
                Ok(s)
            }
            LayerSpec::MergeChannels => Ok(Shape::new(s.len, 1, s.chans * s.feats)),
            LayerSpec::Flatten => Ok(Shape::new(1, 1, s.size())),
        }
    }

    /// Shapes of `[weight, bias]`, or empty for parameter-free layers.
    pub(crate) fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            LayerSpec::TemporalConv {
                kernel,
                inputs,
                outputs,
            } => vec![vec![kernel, inputs, outputs], vec![outputs]],
            LayerSpec::ChannelConv {
                channels,
                inputs,
                outputs,
            } => vec![vec![channels, inputs, outputs], vec![outputs]],
            LayerSpec::TimeEmbedding { dim, features } => vec![vec![dim, features], vec![features]],
            _ => Vec::new(),
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::TemporalConv { kernel, inputs, .. } => kernel * inputs,
            LayerSpec::ChannelConv {
                channels, inputs, ..
            } => channels * inputs,
            LayerSpec::TimeEmbedding { dim, .. } => dim,
            _ => 1,
        }
    }

    pub(crate) fn forward(
        &self,
        params: Option<(&[f64], &[f64])>,
        x: &Tensor,
        out_shape: Shape,
        timestep: Option<usize>,
    ) -> Tensor {
        let s = x.shape;
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = params.expect("dense has params");
                let mut out = Vec::with_capacity(out_shape.size());
                for row in x.data.chunks_exact(inputs) {
                    let start = out.len();
                    out.extend_from_slice(b);
                    let o = &mut out[start..];
                    for (i, &xi) in row.iter().enumerate() {
                        axpy(xi, &w[i * outputs..(i + 1) * outputs], o);
                    }
                }
                Tensor {
                    shape: out_shape,
                    data: out,
                }
            }
            LayerSpec::TemporalConv {
                kernel,
                inputs,
                outputs,
            } => {
                let (w, b) = params.expect("conv has params");
                let pad = (kernel - 1) / 2;
                let mut out = vec![0.0; out_shape.size()];
                for t in 0..s.len {
                    for c in 0..s.chans {
                        let o = &mut out[(t * s.chans + c) * outputs..][..outputs];
                        o.copy_from_slice(b);
                        for j in 0..kernel {
                            let Some(ti) = (t + j).checked_sub(pad).filter(|&ti| ti < s.len) else {
                                continue;
                            };
                            let xin = &x.data[(ti * s.chans + c) * inputs..][..inputs];
                            for (i, &xi) in xin.iter().enumerate() {
                                axpy(xi, &w[(j * inputs + i) * outputs..][..outputs], o);
                            }
                        }
                    }
                }
                Tensor {
                    shape: out_shape,
                    data: out,
                }
            }
            LayerSpec::ChannelConv {
                channels,
                inputs,
                outputs,
            } => {
                let (w, b) = params.expect("conv has params");
                let mut out = vec![0.0; out_shape.size()];
                for t in 0..s.len {
                    let o = &mut out[t * outputs..][..outputs];
                    o.copy_from_slice(b);
                    let xin = &x.data[t * channels * inputs..][..channels * inputs];
                    for (ci, &xi) in xin.iter().enumerate() {
                        axpy(xi, &w[ci * outputs..][..outputs], o);
                    }
                }
                Tensor {
                    shape: out_shape,
                    data: out,
                }
            }
            LayerSpec::Activation { function } => Tensor {
                shape: out_shape,
                data: x.data.iter().map(|&v| function.apply(v)).collect(),
            },
            LayerSpec::GlobalMeanPool => {
                let inner = s.chans * s.feats;
                let mut out = vec![0.0; inner];
                for row in x.data.chunks_exact(inner) {
                    axpy(1.0, row, &mut out);
                }
                let n = s.len as f64;
                out.iter_mut().for_each(|v| *v /= n);
                Tensor {
                    shape: out_shape,
                    data: out,
                }
            }
            LayerSpec::TimeEmbedding { dim, features } => {
                let (w, b) = params.expect("embedding has params");
                let e = sinusoidal_embedding(timestep.unwrap_or(0), dim);
                let mut h = b.to_vec();
                for (j, &ej) in e.iter().enumerate() {
                    axpy(ej, &w[j * features..][..features], &mut h);
                }
                let mut data = x.data.clone();
                for row in data.chunks_exact_mut(features) {
                    axpy(1.0, &h, row);
                }
                Tensor {
                    shape: out_shape,
                    data,
                }
            }
            LayerSpec::MergeChannels | LayerSpec::Flatten => Tensor {
                shape: out_shape,
                data: x.data.clone(),
            },
        }
    }

    /// Returns the gradient with respect to the layer input (empty when
    /// `need_input` is false) and accumulates parameter gradients.
    pub(crate) fn backward(
        &self,
        params: Option<(&[f64], &[f64])>,
        x: &Tensor,
        g: &Tensor,
        timestep: Option<usize>,
        pgrads: Option<(&mut [f64], &mut [f64])>,
        need_input: bool,
    ) -> Tensor {
        let s = x.shape;
        let empty = || Tensor {
            shape: s,
            data: Vec::new(),
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = params.expect("dense has params");
                let (gw, gb) = pgrads.expect("dense has grads");
                let mut gx = if need_input {
                    vec![0.0; s.size()]
                } else {
                    Vec::new()
                };
                for (p, (row, go)) in x
                    .data
                    .chunks_exact(inputs)
                    .zip(g.data.chunks_exact(outputs))
                    .enumerate()
                {
                    axpy(1.0, go, gb);
                    for (i, &xi) in row.iter().enumerate() {
                        let wr = &w[i * outputs..][..outputs];
                        axpy(xi, go, &mut gw[i * outputs..][..outputs]);
                        if need_input {
                            gx[p * inputs + i] = dot(wr, go);
                        }
                    }
                }
                Tensor { shape: s, data: gx }
            }
            LayerSpec::TemporalConv {
                kernel,
                inputs,
                outputs,
            } => {
                let (w, _) = params.expect("conv has params");
                let (gw, gb) = pgrads.expect("conv has grads");
                let pad = (kernel - 1) / 2;
                let mut gx = if need_input {
                    vec![0.0; s.size()]
                } else {
                    Vec::new()
                };
                for t in 0..s.len {
                    for c in 0..s.chans {
                        let go = &g.data[(t * s.chans + c) * outputs..][..outputs];
                        axpy(1.0, go, gb);
                        for j in 0..kernel {
                            let Some(ti) = (t + j).checked_sub(pad).filter(|&ti| ti < s.len) else {
                                continue;
                            };
                            let base = (ti * s.chans + c) * inputs;
                            for i in 0..inputs {
                                let widx = (j * inputs + i) * outputs;
                                axpy(x.data[base + i], go, &mut gw[widx..][..outputs]);
                                if need_input {
                                    gx[base + i] += dot(&w[widx..][..outputs], go);
                                }
                            }
                        }
                    }
                }
                Tensor { shape: s, data: gx }
            }
            LayerSpec::ChannelConv {
                channels,
                inputs,
                outputs,
            } => {
                let (w, _) = params.expect("conv has params");
                let (gw, gb) = pgrads.expect("conv has grads");
                let width = channels * inputs;
                let mut gx = if need_input {
                    vec![0.0; s.size()]
                } else {
                    Vec::new()
                };
                for t in 0..s.len {
                    let go = &g.data[t * outputs..][..outputs];
                    axpy(1.0, go, gb);
                    for ci in 0..width {
                        let xi = x.data[t * width + ci];
                        axpy(xi, go, &mut gw[ci * outputs..][..outputs]);
                        if need_input {
                            gx[t * width + ci] = dot(&w[ci * outputs..][..outputs], go);
                        }
                    }
                }
                Tensor { shape: s, data: gx }
            }
            LayerSpec::Activation { function } => {
                if !need_input {
                    return empty();
                }
                Tensor {
                    shape: s,
                    data: x
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(&v, &gv)| gv * function.derivative(v))
                        .collect(),
                }
            }
            LayerSpec::GlobalMeanPool => {
                if !need_input {
                    return empty();
                }
                let n = s.len as f64;
                let scaled: Vec<f64> = g.data.iter().map(|v| v / n).collect();
                let mut data = Vec::with_capacity(s.size());
                for _ in 0..s.len {
                    data.extend_from_slice(&scaled);
                }
                Tensor { shape: s, data }
            }
            LayerSpec::TimeEmbedding { dim, features } => {
                let (gw, gb) = pgrads.expect("embedding has grads");
                let e = sinusoidal_embedding(timestep.unwrap_or(0), dim);
                let mut gh = vec![0.0; features];
                for row in g.data.chunks_exact(features) {
                    axpy(1.0, row, &mut gh);
                }
                axpy(1.0, &gh, gb);
                for (j, &ej) in e.iter().enumerate() {
                    axpy(ej, &gh, &mut gw[j * features..][..features]);
                }
                if !need_input {
                    return empty();
                }
                Tensor {
                    shape: s,
                    data: g.data.clone(),
                }
            }
            LayerSpec::MergeChannels | LayerSpec::Flatten => Tensor {
                shape: s,
                data: if need_input {
                    g.data.clone()
                } else {
                    Vec::new()
                },
            },
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

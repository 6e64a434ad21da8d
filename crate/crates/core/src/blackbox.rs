//! Raw-signal classifiers trained on real versus reference-generator windows.
//!
//! Labels come from window provenance: synthetic is 1, real is 0. Every
//! classifier ends in a single sigmoid unit.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{Source, Window};
use crate::metrics::{confusion, f1_accuracy, ScoredBatch};
use crate::nn::{
    self, adam_step, Activation, AdamConfig, LayerSpec, Network, OptimizerState, ParamSet, Shape,
    Tensor,
};
use crate::par::Exec;
use crate::whitebox::csv_err;
use crate::{rng, Error, Result};

/// Probabilities are clipped to `[BCE_CLIP, 1 - BCE_CLIP]` inside the loss.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    DisjointCnn,
    Mlp,
    Fcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierArch {
    pub kind: ClassifierKind,
    pub kernel: usize,
    pub filters: usize,
    pub blocks: usize,
    pub hidden: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::DisjointCnn,
            kernel: 5,
            filters: 32,
            blocks: 2,
            hidden: 64,
        }
    }
}

impl ClassifierArch {
    /// Layers and input shape for `len x channels` windows.
    pub fn build(&self, len: usize, channels: usize) -> Result<(Shape, Vec<LayerSpec>)> {
        match self.kind {
            ClassifierKind::DisjointCnn => {
                build_disjoint_cnn(len, channels, self.kernel, self.filters, self.blocks)
            }
            ClassifierKind::Mlp => build_mlp(len, channels, self.hidden),
            ClassifierKind::Fcn => build_fcn(len, channels, self.filters),
        }
    }
}

fn sigmoid_head(features: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::Dense {
            inputs: features,
            outputs: 1,
        },
        LayerSpec::act(Activation::Sigmoid),
    ]
}

fn validated(input: Shape, layers: Vec<LayerSpec>) -> Result<(Shape, Vec<LayerSpec>)> {
    let net = Network::new(input, layers)?;
    if net.output_shape().size() != 1 {
        return Err(Error::Shape(format!(
            "classifier output {} is not scalar",
            net.output_shape()
        )));
    }
    Ok((input, net.layers().to_vec()))
}

/// `blocks` of [temporal conv (per channel) -> channel-mixing conv -> relu],
/// global mean pool over time, dense head, sigmoid. Input is `(L, C, 1)`.
pub fn build_disjoint_cnn(
    len: usize,
    channels: usize,
    kernel: usize,
    filters: usize,
    blocks: usize,
) -> Result<(Shape, Vec<LayerSpec>)> {
    if kernel == 0 || kernel > len {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} must be in 1..={len}"
        )));
    }
    if filters == 0 || blocks == 0 || channels == 0 {
        return Err(Error::InvalidArgument(
            "filters, blocks and channels must be positive".into(),
        ));
    }
    let mut layers = Vec::new();
    let (mut chans, mut feats) = (channels, 1);
    for _ in 0..blocks {
        layers.push(LayerSpec::TemporalConv {
            kernel,
            inputs: feats,
            outputs: filters,
        });
        layers.push(LayerSpec::ChannelConv {
            channels: chans,
            inputs: filters,
            outputs: filters,
        });
        layers.push(LayerSpec::act(Activation::Relu));
        chans = 1;
        feats = filters;
    }
    layers.push(LayerSpec::GlobalMeanPool);
    layers.extend(sigmoid_head(filters));
    validated(Shape::new(len, channels, 1), layers)
}

/// Flattened window through two relu hidden layers.
pub fn build_mlp(len: usize, channels: usize, hidden: usize) -> Result<(Shape, Vec<LayerSpec>)> {
    if hidden == 0 {
        return Err(Error::InvalidArgument(
            "hidden width must be positive".into(),
        ));
    }
    let layers = vec![
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: len * channels,
            outputs: hidden,
        },
        LayerSpec::act(Activation::Relu),
        LayerSpec::Dense {
            inputs: hidden,
            outputs: hidden,
        },
        LayerSpec::act(Activation::Relu),
    ];
    let mut layers = layers;
    layers.extend(sigmoid_head(hidden));
    validated(Shape::new(len, 1, channels), layers)
}

/// Three temporal convolutions over all channels (kernels 8, 5, 3, clipped to
/// the window length) with relu, global mean pool, dense head.
pub fn build_fcn(len: usize, channels: usize, filters: usize) -> Result<(Shape, Vec<LayerSpec>)> {
    if filters == 0 {
        return Err(Error::InvalidArgument("filters must be positive".into()));
    }
    let mut layers = Vec::new();
    let mut inputs = channels;
    for kernel in [8, 5, 3] {
        layers.push(LayerSpec::TemporalConv {
            kernel: kernel.min(len),
            inputs,
            outputs: filters,
        });
        layers.push(LayerSpec::act(Activation::Relu));
        inputs = filters;
    }
    layers.push(LayerSpec::GlobalMeanPool);
    layers.extend(sigmoid_head(filters));
    validated(Shape::new(len, 1, channels), layers)
}

fn check_probs(y: &[u8], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "{} labels, {} probabilities",
            y.len(),
            y_hat.len()
        )));
    }
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("label {v} is not 0 or 1")));
    }
    Ok(())
}

/// Summed binary cross-entropy over the batch.
pub fn bce_loss(y: &[u8], y_hat: &[f64]) -> Result<f64> {
    check_probs(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&yi, &p)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            if yi == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// Derivative of [`bce_loss`] with respect to each probability, evaluated at
/// the clipped value.
pub fn bce_grad(y: &[u8], y_hat: &[f64]) -> Result<Vec<f64>> {
    check_probs(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&yi, &p)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            if yi == 1 {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTraining {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub validation: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            batch: 64,
            epochs: 30,
            lr: 1e-3,
            validation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean summed-batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub validation_f1: f64,
    pub seed: u64,
    pub arch: ClassifierArch,
    pub hyper: ClassifierTraining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    pub network: Network,
    pub params: ParamSet,
    pub len: usize,
    pub channels: usize,
    pub reference_id: String,
    pub dataset_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierMeta {
    arch: ClassifierArch,
    len: usize,
    channels: usize,
    reference_id: String,
    dataset_id: String,
}

impl ClassifierModel {
    pub fn new(
        arch: ClassifierArch,
        len: usize,
        channels: usize,
        reference_id: impl Into<String>,
        dataset_id: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let (input, layers) = arch.build(len, channels)?;
        let network = Network::new(input, layers)?;
        let params = network.init_params(seed);
        Ok(Self {
            arch,
            network,
            params,
            len,
            channels,
            reference_id: reference_id.into(),
            dataset_id: dataset_id.into(),
        })
    }

    fn input(&self, w: &Window) -> Result<Tensor> {
        if (w.len, w.channels) != (self.len, self.channels) {
            return Err(Error::Shape(format!(
                "window {} is {}x{}, classifier expects {}x{}",
                w.id, w.len, w.channels, self.len, self.channels
            )));
        }
        Tensor::new(self.network.input_shape(), w.values.clone())
    }

    /// Writes the checkpoint and `arch.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = ClassifierMeta {
            arch: self.arch,
            len: self.len,
            channels: self.channels,
            reference_id: self.reference_id.clone(),
            dataset_id: self.dataset_id.clone(),
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::json("classifier meta", e))?;
        nn::save_checkpoint(dir, &self.network, &self.params, meta)?;
        let path = dir.join("arch.json");
        let text = serde_json::to_string_pretty(&self.network.layers())
            .map_err(|e| Error::json("classifier arch", e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = nn::load_checkpoint(dir)?;
        let meta: ClassifierMeta = serde_json::from_value(ck.meta)
            .map_err(|e| Error::json(dir.display().to_string(), e))?;
        Ok(Self {
            arch: meta.arch,
            network: ck.network,
            params: ck.params,
            len: meta.len,
            channels: meta.channels,
            reference_id: meta.reference_id,
            dataset_id: meta.dataset_id,
        })
    }
}

/// `(probability of synthetic, label)`; a probability of exactly 0.5 is
/// labelled synthetic.
pub fn classify(model: &ClassifierModel, window: &Window) -> Result<(f64, u8)> {
    let out = model
        .network
        .predict(&model.params, &model.input(window)?, None)?;
    let p = out.data[0];
    Ok((p, u8::from(p >= 0.5)))
}

pub fn classify_batch(
    model: &ClassifierModel,
    windows: &[Window],
    exec: Exec,
) -> Result<Vec<(f64, u8)>> {
    exec.try_map(windows, |w| classify(model, w))
}

fn sorted_by_id(windows: &[Window]) -> Vec<&Window> {
    let mut v: Vec<&Window> = windows.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Seeded split into `(train, validation)`; validation takes
/// `round(fraction * n)` items but leaves at least one for training.
fn holdout<'a>(
    items: &[&'a Window],
    fraction: f64,
    r: &mut rng::Rng,
) -> (Vec<&'a Window>, Vec<&'a Window>) {
    let mut v = items.to_vec();
    v.shuffle(r);
    let n_val = ((fraction * v.len() as f64).round() as usize).min(v.len() - 1);
    let val = v.split_off(v.len() - n_val);
    (v, val)
}

/// Trains `arch` on real (label 0) versus reference-generator (label 1)
/// windows with class-balanced batches and summed BCE. Every real window must
/// be tagged real and every synthetic window must come from `reference_id`.
/// Inputs are sorted by window id before any seeded shuffling, so storage
/// order does not matter.
#[allow(clippy::too_many_arguments)]
pub fn train_blackbox(
    real: &[Window],
    synth: &[Window],
    arch: ClassifierArch,
    hyper: &ClassifierTraining,
    reference_id: &str,
    seed: u64,
    exec: Exec,
) -> Result<(ClassifierModel, TrainReport)> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Empty(
            "classifier training needs both classes".into(),
        ));
    }
    if let Some(w) = real.iter().find(|w| w.source != Source::Real) {
        return Err(Error::Provenance(format!(
            "window {} in the real pool is {}",
            w.id, w.source
        )));
    }
    let expected = Source::Generator(reference_id.to_string());
    if let Some(w) = synth.iter().find(|w| w.source != expected) {
        return Err(Error::Provenance(format!(
            "window {} in the synthetic pool is {}, expected {expected}",
            w.id, w.source
        )));
    }
    if hyper.batch < 2 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 2".into(),
        ));
    }
    if !(0.0..1.0).contains(&hyper.validation) {
        return Err(Error::InvalidArgument(
            "validation fraction must be in [0, 1)".into(),
        ));
    }
    let (len, channels) = (real[0].len, real[0].channels);
    let mut model = ClassifierModel::new(
        arch,
        len,
        channels,
        reference_id,
        real[0].dataset_id.clone(),
        rng::derive_seed(seed, "classifier-init"),
    )?;
    let mut r = rng::derived(seed, "classifier-train");
    let (real_tr, real_val) = holdout(&sorted_by_id(real), hyper.validation, &mut r);
    let (synth_tr, synth_val) = holdout(&sorted_by_id(synth), hyper.validation, &mut r);
    let mut opt = OptimizerState::new(
        &model.params,
        AdamConfig {
            lr: hyper.lr,
            ..AdamConfig::default()
        },
    );
    let half = hyper.batch / 2;
    let per_epoch = real_tr.len().max(synth_tr.len()).div_ceil(half);
    let mut orders = [real_tr.clone(), synth_tr.clone()];
    let mut cursors = [orders[0].len(), orders[1].len()];
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..per_epoch {
            let mut batch: Vec<(&Window, u8)> = Vec::with_capacity(2 * half);
            for (class, (order, cursor)) in orders.iter_mut().zip(cursors.iter_mut()).enumerate() {
                for _ in 0..half {
                    if *cursor == order.len() {
                        order.shuffle(&mut r);
                        *cursor = 0;
                    }
                    batch.push((order[*cursor], class as u8));
                    *cursor += 1;
                }
            }
            let net = &model.network;
            let params = &model.params;
            let (loss, grads) = nn::accumulate(params, &batch, exec, |(w, y)| {
                let (out, tape) = net.forward(params, &model.input(w)?, None)?;
                let loss = bce_loss(&[*y], &out.data)?;
                let g = bce_grad(&[*y], &out.data)?;
                Ok((
                    loss,
                    net.backward(params, &tape, &Tensor::new(out.shape, g)?)?,
                ))
            })?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    step: epoch * per_epoch + step,
                    message: format!("classifier loss {loss}"),
                });
            }
            adam_step(&mut model.params, &grads, &mut opt)?;
            epoch_loss += loss;
        }
        trace.push(epoch_loss / per_epoch as f64);
    }
    let val: Vec<&Window> = if real_val.is_empty() || synth_val.is_empty() {
        real_tr.iter().chain(&synth_tr).copied().collect()
    } else {
        real_val.iter().chain(&synth_val).copied().collect()
    };
    let owned: Vec<Window> = val.iter().map(|w| (*w).clone()).collect();
    let preds = classify_batch(&model, &owned, exec)?;
    let labels: Vec<u8> = owned.iter().map(|w| w.source.label()).collect();
    let batch = ScoredBatch::new(
        labels,
        preds.iter().map(|p| p.0).collect(),
        Some(preds.iter().map(|p| p.1).collect()),
    )?;
    let (validation_f1, _) = f1_accuracy(&confusion(&batch)?);
    let report = TrainReport {
        loss_trace: trace,
        validation_f1,
        seed,
        arch,
        hyper: *hyper,
    };
    Ok((model, report))
}

/// Writes `window_id,source,probability,label`, one row per window.
pub fn write_predictions_csv(path: &Path, windows: &[Window], preds: &[(f64, u8)]) -> Result<()> {
    if windows.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} windows, {} predictions",
            windows.len(),
            preds.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["window_id", "source", "probability", "label"])
        .map_err(|e| csv_err(path, e))?;
    for (win, (p, y)) in windows.iter().zip(preds) {
        w.write_record([
            win.id.clone(),
            win.source.to_string(),
            p.to_string(),
            y.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sine_windows(
        n: usize,
        len: usize,
        channels: usize,
        source: Source,
        phase: f64,
    ) -> Vec<Window> {
        (0..n)
            .map(|i| {
                let values = (0..len * channels)
                    .map(|k| {
                        let (t, c) = (k / channels, k % channels);
                        let base = (0.3 * t as f64 + 0.7 * i as f64 + c as f64).sin();
                        if source.is_real() {
                            base
                        } else {
                            0.5 * base + phase * ((1.3 * t as f64 + i as f64).cos())
                        }
                    })
                    .collect();
                Window::new(
                    format!("{source}/{i:03}"),
                    len,
                    channels,
                    values,
                    source.clone(),
                    "sine",
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn disjoint_cnn_shape_contract() {
        let (input, layers) = build_disjoint_cnn(32, 2, 5, 16, 2).unwrap();
        let net = Network::new(input, layers).unwrap();
        assert_eq!(net.output_shape(), Shape::new(1, 1, 1));
        assert!(matches!(
            build_disjoint_cnn(4, 2, 5, 16, 2),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_disjoint_cnn(8, 2, 3, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
        for kind in [ClassifierKind::Mlp, ClassifierKind::Fcn] {
            let arch = ClassifierArch {
                kind,
                ..Default::default()
            };
            let (input, layers) = arch.build(32, 3).unwrap();
            assert_eq!(
                Network::new(input, layers).unwrap().output_shape().size(),
                1
            );
        }
    }

    #[test]
    fn identity_like_single_block_is_sigmoid_of_mean() {
        // kernel 3 with only the centre tap, channel weights 1/C, head weight 1:
        // output = sigmoid(mean over time of relu(mean over channels)).
        let (input, layers) = build_disjoint_cnn(3, 2, 3, 1, 1).unwrap();
        let net = Network::new(input, layers).unwrap();
        let mut p = net.init_params(0);
        p.tensors[0].data = vec![0.0, 1.0, 0.0];
        p.tensors[2].data = vec![0.5, 0.5];
        p.tensors[4].data = vec![1.0];
        for t in [1, 3, 5] {
            p.tensors[t].data.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut last = 0.0;
        for shift in [0.0, 0.5, 1.0, 2.0] {
            let x: Vec<f64> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
                .iter()
                .map(|v| v + shift)
                .collect();
            let y = net
                .predict(&p, &Tensor::new(input, x.clone()).unwrap(), None)
                .unwrap()
                .data[0];
            let mean = x.iter().sum::<f64>() / 6.0;
            assert_abs_diff_eq!(y, 1.0 / (1.0 + (-mean).exp()), epsilon = 1e-12);
            assert!(y > last);
            last = y;
        }
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(&[1, 0, 1], &[1.0, 0.0, 1.0]).unwrap() <= 3e-6);
        assert_abs_diff_eq!(bce_loss(&[1], &[0.5]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            bce_loss(&[0, 0], &[0.5, 0.5]).unwrap(),
            2.0 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert!(matches!(bce_loss(&[1, 0], &[0.5]), Err(Error::Shape(_))));
        assert!(bce_loss(&[0, 1, 1], &[0.3, 0.2, 0.9]).unwrap() >= 0.0);
    }

    #[test]
    fn bce_gradient_through_sigmoid_head_matches_finite_differences() {
        let (input, layers) = build_disjoint_cnn(8, 2, 3, 4, 1).unwrap();
        let net = Network::new(input, layers).unwrap();
        let params = net.init_params(11);
        let x = Tensor::new(input, (0..16).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        for y in [0u8, 1] {
            let (out, tape) = net.forward(&params, &x, None).unwrap();
            let g = bce_grad(&[y], &out.data).unwrap();
            let grads = net
                .backward(&params, &tape, &Tensor::new(out.shape, g).unwrap())
                .unwrap();
            let h = 1e-6;
            let loss =
                |p: &ParamSet| bce_loss(&[y], &net.predict(p, &x, None).unwrap().data).unwrap();
            let mut probe = params.clone();
            for k in 0..params.tensors.len() {
                for j in 0..params.tensors[k].data.len() {
                    let orig = params.tensors[k].data[j];
                    probe.tensors[k].data[j] = orig + h;
                    let up = loss(&probe);
                    probe.tensors[k].data[j] = orig - h;
                    let down = loss(&probe);
                    probe.tensors[k].data[j] = orig;
                    let n = (up - down) / (2.0 * h);
                    let a = grads.0[k][j];
                    assert!(
                        (a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-4,
                        "{a} vs {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_head_is_half_and_synthetic() {
        let arch = ClassifierArch {
            filters: 4,
            blocks: 1,
            ..Default::default()
        };
        let mut m = ClassifierModel::new(arch, 8, 2, "g", "d", 0).unwrap();
        let head = m.params.tensors.len() - 2;
        m.params.tensors[head]
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let w = &sine_windows(1, 8, 2, Source::Real, 0.0)[0];
        assert_eq!(classify(&m, w).unwrap(), (0.5, 1));
    }

    #[test]
    fn classify_is_pure_and_ordered() {
        let arch = ClassifierArch {
            filters: 4,
            blocks: 1,
            ..Default::default()
        };
        let m = ClassifierModel::new(arch, 8, 2, "g", "d", 3).unwrap();
        let ws = sine_windows(5, 8, 2, Source::Real, 0.0);
        let batch = classify_batch(&m, &ws, Exec::default()).unwrap();
        for (w, b) in ws.iter().zip(&batch) {
            assert_eq!(classify(&m, w).unwrap(), *b);
            assert_eq!(classify(&m, w).unwrap(), *b);
        }
        let short = Window::new("x", 4, 2, vec![0.0; 8], Source::Real, "d").unwrap();
        assert!(matches!(classify(&m, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn training_separates_and_is_order_invariant() {
        let g = Source::Generator("g".into());
        let real = sine_windows(60, 16, 2, Source::Real, 0.0);
        let synth = sine_windows(60, 16, 2, g, 0.4);
        let arch = ClassifierArch {
            filters: 8,
            ..Default::default()
        };
        let hyper = ClassifierTraining {
            batch: 16,
            epochs: 15,
            lr: 3e-3,
            validation: 0.2,
        };
        let (m1, rep) =
            train_blackbox(&real, &synth, arch, &hyper, "g", 9, Exec::default()).unwrap();
        assert_eq!(rep.loss_trace.len(), 15);
        assert!(rep.loss_trace.iter().all(|l| l.is_finite() && *l >= 0.0));
        assert!(
            rep.validation_f1 >= 0.95,
            "validation F1 {}",
            rep.validation_f1
        );
        let mut rr = real.clone();
        rr.reverse();
        let mut sr = synth.clone();
        sr.rotate_left(7);
        let (m2, _) = train_blackbox(&rr, &sr, arch, &hyper, "g", 9, Exec::Sequential).unwrap();
        assert_eq!(m1.params, m2.params);
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let g = Source::Generator("g".into());
        let real = sine_windows(10, 8, 2, Source::Real, 0.0);
        let synth = sine_windows(10, 8, 2, g, 0.4);
        let arch = ClassifierArch {
            filters: 4,
            blocks: 1,
            ..Default::default()
        };
        let hyper = ClassifierTraining {
            epochs: 0,
            ..Default::default()
        };
        let (m, rep) =
            train_blackbox(&real, &synth, arch, &hyper, "g", 2, Exec::default()).unwrap();
        let fresh = ClassifierModel::new(
            arch,
            8,
            2,
            "g",
            "sine",
            rng::derive_seed(2, "classifier-init"),
        )
        .unwrap();
        assert_eq!(m.params, fresh.params);
        assert!(rep.loss_trace.is_empty());
    }

    #[test]
    fn provenance_is_enforced() {
        let real = sine_windows(4, 8, 2, Source::Real, 0.0);
        let other = sine_windows(4, 8, 2, Source::Generator("h".into()), 0.4);
        let hyper = ClassifierTraining::default();
        let arch = ClassifierArch::default();
        assert!(matches!(
            train_blackbox(&real, &other, arch, &hyper, "g", 0, Exec::default()),
            Err(Error::Provenance(_))
        ));
        // synthetic windows offered as real are rejected, so labels cannot be swapped
        assert!(matches!(
            train_blackbox(&other, &real, arch, &hyper, "h", 0, Exec::default()),
            Err(Error::Provenance(_))
        ));
        assert!(matches!(
            train_blackbox(&[], &other, arch, &hyper, "h", 0, Exec::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_predictions_csv() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ClassifierArch {
            kind: ClassifierKind::Fcn,
            filters: 4,
            ..Default::default()
        };
        let m = ClassifierModel::new(arch, 8, 2, "g", "d", 1).unwrap();
        m.save(dir.path()).unwrap();
        assert!(dir.path().join("arch.json").exists());
        assert_eq!(ClassifierModel::load(dir.path()).unwrap(), m);
        let ws = sine_windows(3, 8, 2, Source::Real, 0.0);
        let preds = classify_batch(&m, &ws, Exec::default()).unwrap();
        let path = dir.path().join("pred.csv");
        write_predictions_csv(&path, &ws, &preds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "window_id,source,probability,label"
        );
        assert_eq!(text.lines().count(), 4);
    }
}

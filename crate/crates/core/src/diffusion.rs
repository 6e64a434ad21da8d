//! Noise schedules, denoiser training, and deterministic DDIM sampling,
//! inversion and reconstruction.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataio::{Source, Window};
use crate::nn::{
    self, adam_step, Activation, AdamConfig, Grads, LayerSpec, Network, OptimizerState, ParamSet,
    Shape, Tensor,
};
use crate::par::Exec;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

/// Persisted as `schedule.json` next to a denoiser checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub spec: ScheduleSpec,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

pub fn make_schedule(spec: ScheduleSpec) -> Result<NoiseSchedule> {
    let t_max = spec.steps;
    if t_max < 2 {
        return Err(Error::InvalidArgument(format!(
            "schedule needs T >= 2, got {t_max}"
        )));
    }
    let beta: Vec<f64> = match spec.kind {
        ScheduleKind::Linear => {
            let (lo, hi) = (spec.beta_start, spec.beta_end);
            if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "linear schedule needs 0 < beta_start <= beta_end < 1, got {lo}, {hi}"
                )));
            }
            (0..t_max)
                .map(|t| lo + (hi - lo) * t as f64 / (t_max - 1) as f64)
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let arg = (t / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (arg * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            let target = |t: usize| f(t as f64 + 1.0) / f(0.0);
            (0..t_max)
                .map(|t| {
                    let prev = if t == 0 { 1.0 } else { target(t - 1) };
                    (1.0 - target(t) / prev).clamp(1e-8, MAX_BETA)
                })
                .collect()
        }
    };
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        spec,
        beta,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar_at(&self, level: Level) -> f64 {
        match level {
            Level::Clean => 1.0,
            Level::Step(t) => self.alpha_bar[t],
        }
    }

    fn check(&self, level: Level) -> Result<()> {
        match level {
            Level::Step(t) if t >= self.steps() => Err(Error::InvalidArgument(format!(
                "timestep {t} outside schedule of {} steps",
                self.steps()
            ))),
            _ => Ok(()),
        }
    }
}

/// Noise level of a diffusion state. `Clean` is the data itself, with the
/// cumulative signal coefficient taken as exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Clean,
    Step(usize),
}

impl Level {
    /// Timestep fed to the noise predictor; the clean state is evaluated at 0.
    pub fn model_step(self) -> usize {
        match self {
            Level::Clean => 0,
            Level::Step(t) => t,
        }
    }
}

/// `x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(Level::Step(t))?;
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!(
            "x0 has {} values, noise has {}",
            x0.len(),
            eps.len()
        )));
    }
    let a = sched.alpha_bar[t];
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// Anything that predicts the noise in a diffusion state.
pub trait NoisePredictor: Sync {
    /// Number of values in one state (`len * channels`).
    fn state_len(&self) -> usize;
    fn predict_noise(&self, x: &[f64], t: usize) -> Result<Vec<f64>>;
}

/// Strictly increasing DDIM timesteps, always containing `0` and `T - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepGrid(Vec<usize>);

impl StepGrid {
    pub fn new(indices: Vec<usize>, steps: usize) -> Result<Self> {
        let ok = indices.first() == Some(&0)
            && indices.last() == Some(&(steps.saturating_sub(1)))
            && indices.windows(2).all(|w| w[0] < w[1])
            && steps >= 2;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "step grid {indices:?} must increase strictly from 0 to {}",
                steps.saturating_sub(1)
            )));
        }
        Ok(Self(indices))
    }

    /// `points` indices spread evenly over `0..steps`, endpoints included.
    pub fn uniform(steps: usize, points: usize) -> Result<Self> {
        if points < 2 || steps < 2 {
            return Err(Error::InvalidArgument(
                "grid needs at least 2 points over T >= 2".into(),
            ));
        }
        let mut idx: Vec<usize> = (0..points)
            .map(|i| ((i * (steps - 1)) as f64 / (points - 1) as f64).round() as usize)
            .collect();
        idx.dedup();
        Self::new(idx, steps)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    fn ascending(&self) -> impl Iterator<Item = (Level, Level)> + '_ {
        std::iter::once((Level::Clean, Level::Step(self.0[0]))).chain(
            self.0
                .windows(2)
                .map(|w| (Level::Step(w[0]), Level::Step(w[1]))),
        )
    }

    fn descending(&self) -> impl Iterator<Item = (Level, Level)> + '_ {
        self.0
            .windows(2)
            .rev()
            .map(|w| (Level::Step(w[1]), Level::Step(w[0])))
            .chain(std::iter::once((Level::Step(self.0[0]), Level::Clean)))
    }
}

/// One deterministic DDIM move between noise levels. Moving to a noisier
/// level is inversion; moving to a cleaner one is denoising.
pub fn ddim_step<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &[f64],
    from: Level,
    to: Level,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    ddim_step_clipped(model, x, from, to, sched, None)
}

/// [`ddim_step`] with the clean-data estimate clamped to `[-clip, clip]`.
pub fn ddim_step_clipped<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &[f64],
    from: Level,
    to: Level,
    sched: &NoiseSchedule,
    clip: Option<f64>,
) -> Result<Vec<f64>> {
    sched.check(from)?;
    sched.check(to)?;
    let a_from = sched.alpha_bar_at(from);
    let a_to = sched.alpha_bar_at(to);
    let eps = model.predict_noise(x, from.model_step())?;
    let (sa_from, sn_from) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (sa_to, sn_to) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    Ok(x.iter()
        .zip(&eps)
        .map(|(&xt, &e)| {
            let mut x0_hat = (xt - sn_from * e) / sa_from;
            if let Some(c) = clip {
                x0_hat = x0_hat.clamp(-c, c);
            }
            sa_to * x0_hat + sn_to * e
        })
        .collect())
}

fn walk<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    moves: impl Iterator<Item = (Level, Level)>,
    x: &[f64],
    clip: Option<f64>,
) -> Result<Vec<f64>> {
    let mut state = x.to_vec();
    for (from, to) in moves {
        state = ddim_step_clipped(model, &state, from, to, sched, clip)?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "DDIM state after step {from:?} -> {to:?}"
            )));
        }
    }
    Ok(state)
}

/// Clean data up the grid to `x_{T-1}`.
pub fn ddim_invert<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    grid: &StepGrid,
    x0: &[f64],
) -> Result<Vec<f64>> {
    walk(model, sched, grid.ascending(), x0, None)
}

/// `x_{T-1}` down the grid to clean data.
pub fn ddim_denoise<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    grid: &StepGrid,
    x_t: &[f64],
) -> Result<Vec<f64>> {
    walk(model, sched, grid.descending(), x_t, None)
}

/// Inversion followed by denoising over the same grid.
pub fn reconstruct<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    grid: &StepGrid,
    x0: &[f64],
) -> Result<Vec<f64>> {
    let x_t = ddim_invert(model, sched, grid, x0)?;
    ddim_denoise(model, sched, grid, &x_t)
}

/// Hyperparameters of the noise-prediction network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserArch {
    pub width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub time_dim: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            width: 32,
            depth: 3,
            kernel: 5,
            time_dim: 16,
        }
    }
}

impl DenoiserArch {
    /// Temporal convolutions with a timestep embedding added after each,
    /// gelu, and a pointwise projection back to the input channels. Input and
    /// output are `(len, 1, channels)`.
    pub fn layers(&self, channels: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut inputs = channels;
        for _ in 0..self.depth.max(1) {
            layers.push(LayerSpec::TemporalConv {
                kernel: self.kernel,
                inputs,
                outputs: self.width,
            });
            layers.push(LayerSpec::TimeEmbedding {
                dim: self.time_dim,
                features: self.width,
            });
            layers.push(LayerSpec::act(Activation::Gelu));
            inputs = self.width;
        }
        layers.push(LayerSpec::Dense {
            inputs: self.width,
            outputs: channels,
        });
        layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTraining {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for DenoiserTraining {
    fn default() -> Self {
        Self {
            batch: 32,
            steps: 1000,
            lr: 1e-3,
        }
    }
}

/// A trained noise predictor together with its schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub id: String,
    pub len: usize,
    pub channels: usize,
    pub network: Network,
    pub params: ParamSet,
    pub schedule: NoiseSchedule,
    pub loss_trace: Vec<f64>,
}

impl NoisePredictor for Denoiser {
    fn state_len(&self) -> usize {
        self.len * self.channels
    }

    fn predict_noise(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let input = Tensor::new(Shape::new(self.len, 1, self.channels), x.to_vec())?;
        Ok(self.network.predict(&self.params, &input, Some(t))?.data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DenoiserMeta {
    id: String,
    len: usize,
    channels: usize,
    schedule: ScheduleSpec,
    final_loss: Option<f64>,
}

impl Denoiser {
    pub fn new(
        id: impl Into<String>,
        len: usize,
        channels: usize,
        arch: &DenoiserArch,
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        let network = Network::new(Shape::new(len, 1, channels), arch.layers(channels))?;
        let params = network.init_params(seed);
        Ok(Self {
            id: id.into(),
            len,
            channels,
            network,
            params,
            schedule,
            loss_trace: Vec::new(),
        })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }

    pub fn source(&self) -> Source {
        Source::Generator(self.id.clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = DenoiserMeta {
            id: self.id.clone(),
            len: self.len,
            channels: self.channels,
            schedule: self.schedule.spec,
            final_loss: self.final_loss(),
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::json("denoiser meta", e))?;
        nn::save_checkpoint(dir, &self.network, &self.params, meta)?;
        let spath = dir.join("schedule.json");
        let text = serde_json::to_string_pretty(&self.schedule.spec)
            .map_err(|e| Error::json("schedule", e))?;
        std::fs::write(&spath, text).map_err(|e| Error::io(&spath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = nn::load_checkpoint(dir)?;
        let meta: DenoiserMeta = serde_json::from_value(ck.meta)
            .map_err(|e| Error::json(dir.display().to_string(), e))?;
        Ok(Self {
            id: meta.id,
            len: meta.len,
            channels: meta.channels,
            network: ck.network,
            params: ck.params,
            schedule: make_schedule(meta.schedule)?,
            loss_trace: meta.final_loss.into_iter().collect(),
        })
    }
}

struct DenoiseSample<'a> {
    x0: &'a [f64],
    t: usize,
    eps: Vec<f64>,
}

/// Trains `model` on the noise-prediction objective
/// `E ||eps - eps_theta(q_sample(x0, t, eps), t)||^2`, averaged over
/// elements and batch. All randomness comes from `seed`; per-sample
/// gradients run through `exec` and are summed in batch order.
pub fn train_denoiser(
    model: &mut Denoiser,
    windows: &[Window],
    hyper: &DenoiserTraining,
    seed: u64,
    exec: Exec,
) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Empty("denoiser training needs windows".into()));
    }
    if let Some(w) = windows
        .iter()
        .find(|w| w.len != model.len || w.channels != model.channels)
    {
        return Err(Error::Shape(format!(
            "window {} is {}x{}, model expects {}x{}",
            w.id, w.len, w.channels, model.len, model.channels
        )));
    }
    if hyper.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut r = rng::derived(seed, "denoiser-train");
    let mut opt = OptimizerState::new(
        &model.params,
        AdamConfig {
            lr: hyper.lr,
            ..AdamConfig::default()
        },
    );
    let shape = Shape::new(model.len, 1, model.channels);
    let n_el = model.len * model.channels;
    let steps_t = model.schedule.steps();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut cursor = order.len();
    for step in 0..hyper.steps {
        let mut batch = Vec::with_capacity(hyper.batch);
        for _ in 0..hyper.batch {
            if cursor == order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            let x0 = windows[order[cursor]].values.as_slice();
            cursor += 1;
            let t = r.random_range(0..steps_t);
            let eps = rng::normals(&mut r, n_el);
            batch.push(DenoiseSample { x0, t, eps });
        }
        let scale = 1.0 / (n_el * hyper.batch) as f64;
        let net = &model.network;
        let params = &model.params;
        let sched = &model.schedule;
        let (loss, grads) = nn::accumulate(params, &batch, exec, |s| {
            let xt = q_sample(s.x0, s.t, &s.eps, sched)?;
            let (out, tape) = net.forward(params, &Tensor::new(shape, xt)?, Some(s.t))?;
            let mut loss = 0.0;
            let g: Vec<f64> = out
                .data
                .iter()
                .zip(&s.eps)
                .map(|(p, e)| {
                    loss += (p - e) * (p - e);
                    2.0 * (p - e) * scale
                })
                .collect();
            let grads: Grads = net.backward(params, &tape, &Tensor::new(shape, g)?)?;
            Ok((loss * scale, grads))
        })?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("denoiser {} loss {loss}", model.id),
            });
        }
        adam_step(&mut model.params, &grads, &mut opt)?;
        model.loss_trace.push(loss);
    }
    Ok(())
}

/// Samples `n` windows: standard Gaussian `x_{T-1}` (seeded per sample)
/// denoised down the grid. Windows are tagged with the model's generator id.
/// `clip` bounds the clean-data estimate at every step; near-zero signal
/// levels at the top of cosine schedules otherwise amplify prediction error.
pub fn ddim_generate(
    model: &Denoiser,
    grid: &StepGrid,
    n: usize,
    seed: u64,
    clip: Option<f64>,
    dataset_id: &str,
    exec: Exec,
) -> Result<Vec<Window>> {
    let n_el = model.state_len();
    exec.map_range(n, |i| {
        let mut r = rng::derived(seed, &format!("{}/sample/{i}", model.id));
        let x_t = rng::normals(&mut r, n_el);
        let x0 = walk(model, &model.schedule, grid.descending(), &x_t, clip)?;
        Window::new(
            format!("{}/{seed}/{i}", model.id),
            model.len,
            model.channels,
            x0,
            model.source(),
            dataset_id,
        )
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) struct ConstNoise {
        pub n: usize,
        pub value: f64,
    }

    impl NoisePredictor for ConstNoise {
        fn state_len(&self) -> usize {
            self.n
        }
        fn predict_noise(&self, x: &[f64], _t: usize) -> Result<Vec<f64>> {
            Ok(vec![self.value; x.len()])
        }
    }

    fn linear(t: usize) -> NoiseSchedule {
        make_schedule(ScheduleSpec {
            steps: t,
            ..ScheduleSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn schedule_cumulative_product() {
        let s = make_schedule(ScheduleSpec {
            kind: ScheduleKind::Linear,
            steps: 2,
            beta_start: 0.1,
            beta_end: 0.1,
        })
        .unwrap();
        assert_abs_diff_eq!(s.alpha_bar[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bar[1], 0.81, epsilon = 1e-15);
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let s = make_schedule(ScheduleSpec {
                kind,
                steps: 100,
                ..Default::default()
            })
            .unwrap();
            let mut acc = 1.0;
            for t in 0..100 {
                acc *= 1.0 - s.beta[t];
                assert_eq!(s.alpha_bar[t], acc);
                assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0);
                assert!(s.alpha_bar[t] > 0.0 && s.alpha_bar[t] < 1.0);
            }
            assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn cosine_endpoints() {
        let s = make_schedule(ScheduleSpec {
            kind: ScheduleKind::Cosine,
            steps: 100,
            ..Default::default()
        })
        .unwrap();
        // f(1)/f(0) with s = 0.008, T = 100
        let f = |t: f64| {
            (((t / 100.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        assert_abs_diff_eq!(s.alpha_bar[0], f(1.0) / f(0.0), epsilon = 1e-12);
        assert!(s.alpha_bar[0] > 0.999);
        assert!(s.alpha_bar[99] < 1e-3);
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        for (start, end, steps) in [
            (0.0, 0.02, 10),
            (0.03, 0.02, 10),
            (0.1, 1.0, 10),
            (1e-4, 0.02, 1),
        ] {
            let spec = ScheduleSpec {
                kind: ScheduleKind::Linear,
                steps,
                beta_start: start,
                beta_end: end,
            };
            assert!(make_schedule(spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn q_sample_closed_form() {
        let s = make_schedule(ScheduleSpec {
            kind: ScheduleKind::Linear,
            steps: 2,
            beta_start: 0.1,
            beta_end: 0.1,
        })
        .unwrap();
        let x = q_sample(&[0.0, 0.0], 1, &[1.0, 1.0], &s).unwrap();
        assert_abs_diff_eq!(x[0], 0.19f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(x[0], 0.43589, epsilon = 1e-5);
        let x = q_sample(&[2.0, -1.0], 0, &[0.0, 0.0], &s).unwrap();
        assert_eq!(x, vec![2.0 * 0.9f64.sqrt(), -(0.9f64.sqrt())]);
        assert!(q_sample(&[0.0], 2, &[0.0], &s).is_err());

        let tiny = linear(100);
        let x0 = [0.3, -0.7, 1.1];
        let eps = [0.5, -2.0, 1.0];
        let x = q_sample(&x0, 0, &eps, &tiny).unwrap();
        let bound = (1.0 - tiny.alpha_bar[0]).sqrt() * 2.0 + 1e-12;
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() <= bound + (1.0 - tiny.alpha_bar[0].sqrt()) * b.abs());
        }
    }

    #[test]
    fn ddim_step_matches_symbolic_update() {
        // abar = (0.9, 0.81); eps == c. Clean -> 0 -> 1 and back.
        let s = make_schedule(ScheduleSpec {
            kind: ScheduleKind::Linear,
            steps: 2,
            beta_start: 0.1,
            beta_end: 0.1,
        })
        .unwrap();
        let c = 0.3;
        let m = ConstNoise { n: 1, value: c };
        let x = 1.5;
        let up0 = ddim_step(&m, &[x], Level::Clean, Level::Step(0), &s).unwrap()[0];
        assert_abs_diff_eq!(up0, 0.9f64.sqrt() * x + 0.1f64.sqrt() * c, epsilon = 1e-15);
        let up1 = ddim_step(&m, &[up0], Level::Step(0), Level::Step(1), &s).unwrap()[0];
        let x0_hat = (up0 - 0.1f64.sqrt() * c) / 0.9f64.sqrt();
        assert_abs_diff_eq!(
            up1,
            0.81f64.sqrt() * x0_hat + 0.19f64.sqrt() * c,
            epsilon = 1e-15
        );
        let down = ddim_step(&m, &[up1], Level::Step(1), Level::Clean, &s).unwrap()[0];
        assert_abs_diff_eq!(
            down,
            (up1 - 0.19f64.sqrt() * c) / 0.81f64.sqrt(),
            epsilon = 1e-15
        );
        // constant noise makes every move exactly reversible
        assert_abs_diff_eq!(down, x, epsilon = 1e-12);
        assert!(ddim_step(&m, &[x], Level::Step(0), Level::Step(2), &s).is_err());
    }

    #[test]
    fn ddim_step_same_level_is_identity() {
        let s = linear(10);
        let m = ConstNoise { n: 2, value: 7.0 };
        let x = [0.25, -3.0];
        let y = ddim_step(&m, &x, Level::Step(4), Level::Step(4), &s).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_noise_round_trip_and_scaling() {
        let s = linear(100);
        let zero = ConstNoise { n: 4, value: 0.0 };
        let x = [0.5, -1.0, 0.25, 2.0];
        for points in [2, 5, 20, 100] {
            let grid = StepGrid::uniform(100, points).unwrap();
            let xt = ddim_invert(&zero, &s, &grid, &x).unwrap();
            for (a, b) in xt.iter().zip(&x) {
                assert_abs_diff_eq!(*a, b * s.alpha_bar[99].sqrt(), epsilon = 1e-12);
            }
            let back = reconstruct(&zero, &s, &grid, &x).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn grids() {
        let g = StepGrid::uniform(100, 20).unwrap();
        assert_eq!(g.indices().len(), 20);
        assert_eq!(g.indices()[0], 0);
        assert_eq!(*g.indices().last().unwrap(), 99);
        assert_eq!(
            StepGrid::uniform(5, 10).unwrap().indices(),
            &[0, 1, 2, 3, 4]
        );
        assert!(StepGrid::new(vec![0, 3, 3, 9], 10).is_err());
        assert!(StepGrid::new(vec![1, 9], 10).is_err());
        assert!(StepGrid::new(vec![0, 8], 10).is_err());
    }

    fn sine_windows(n: usize, len: usize) -> Vec<Window> {
        (0..n)
            .map(|i| {
                let phase = i as f64 * 0.37;
                let values = (0..len)
                    .flat_map(|t| {
                        let a = (t as f64 * 0.4 + phase).sin() * 0.8;
                        [a, -a]
                    })
                    .collect();
                Window::new(format!("s/{i}"), len, 2, values, Source::Real, "sine").unwrap()
            })
            .collect()
    }

    fn small_model(seed: u64) -> Denoiser {
        let arch = DenoiserArch {
            width: 8,
            depth: 2,
            kernel: 3,
            time_dim: 8,
        };
        Denoiser::new("g", 16, 2, &arch, linear(50), seed).unwrap()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = sine_windows(64, 16);
        let hyper = DenoiserTraining {
            batch: 16,
            steps: 300,
            lr: 2e-3,
        };
        let mut a = small_model(1);
        train_denoiser(&mut a, &data, &hyper, 9, Exec::default()).unwrap();
        let tenth = hyper.steps / 10;
        let head: f64 = a.loss_trace[..tenth].iter().sum::<f64>() / tenth as f64;
        let tail: f64 = a.loss_trace[hyper.steps - tenth..].iter().sum::<f64>() / tenth as f64;
        assert!(tail <= head, "tail {tail} head {head}");

        let mut b = small_model(1);
        train_denoiser(&mut b, &data, &hyper, 9, Exec::Sequential).unwrap();
        assert_eq!(a.params, b.params);

        let mut c = small_model(1);
        let init = c.params.clone();
        train_denoiser(
            &mut c,
            &data,
            &DenoiserTraining { steps: 0, ..hyper },
            9,
            Exec::default(),
        )
        .unwrap();
        assert_eq!(c.params, init);
        assert!(train_denoiser(&mut c, &[], &hyper, 9, Exec::default()).is_err());
    }

    #[test]
    fn generation_is_tagged_and_deterministic() {
        let m = small_model(3);
        let grid = StepGrid::uniform(50, 10).unwrap();
        let a = ddim_generate(&m, &grid, 5, 42, None, "d", Exec::Parallel).unwrap();
        let b = ddim_generate(&m, &grid, 5, 42, None, "d", Exec::Sequential).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        assert!(a.iter().all(|w| w.source == Source::Generator("g".into())));
    }

    #[test]
    fn reconstruct_zero_input_finite() {
        let m = small_model(4);
        let grid = StepGrid::uniform(50, 10).unwrap();
        let out = reconstruct(&m, &m.schedule, &grid, &vec![0.0; 32]).unwrap();
        assert_eq!(out.len(), 32);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small_model(5);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Denoiser::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.schedule, m.schedule);
        let spec: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("schedule.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(spec["kind"], "linear");
        assert_eq!(spec["T"], 50);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn q_sample_is_linear(
                x in proptest::collection::vec(-3f64..3.0, 4),
                e in proptest::collection::vec(-3f64..3.0, 4),
                a in -5f64..5.0,
                t in 0usize..100,
            ) {
                let s = make_schedule(ScheduleSpec::default()).unwrap();
                let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
                let ae: Vec<f64> = e.iter().map(|v| a * v).collect();
                let lhs = q_sample(&ax, t, &ae, &s).unwrap();
                let rhs = q_sample(&x, t, &e, &s).unwrap();
                for (l, r) in lhs.iter().zip(&rhs) {
                    prop_assert!((l - a * r).abs() <= 1e-12 * (1.0 + l.abs()));
                }
            }
        }
    }
}

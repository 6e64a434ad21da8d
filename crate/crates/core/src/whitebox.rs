//! Reconstruction-error detection under a reference generator.
//!
//! A window is inverted and denoised by the reference model; the squared
//! residual is the detection cue. Synthetic windows from the reference model
//! reconstruct better than real ones, so low error means synthetic. That
//! direction is fixed rather than learned.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Window;
use crate::diffusion::{reconstruct, NoisePredictor, NoiseSchedule, StepGrid};
use crate::nn::sigmoid;
use crate::par::Exec;
use crate::{rng, Error, Result};

/// Added inside the logarithm of [`Aggregation::LogMean`] and of map features.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
    #[default]
    LogMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRecord {
    pub x0: Window,
    pub x_hat0: Window,
    pub error_map: Vec<f64>,
    pub scalar_error: f64,
    pub reference_id: String,
}

impl ReconstructionRecord {
    pub fn new(
        x0: Window,
        x_hat0: Window,
        aggregation: Aggregation,
        reference_id: impl Into<String>,
    ) -> Result<Self> {
        if (x0.len, x0.channels) != (x_hat0.len, x_hat0.channels) {
            return Err(Error::Shape(format!(
                "window {} is {}x{}, reconstruction is {}x{}",
                x0.id, x0.len, x0.channels, x_hat0.len, x_hat0.channels
            )));
        }
        let error_map = dire_map(&x0.values, &x_hat0.values)?;
        let scalar_error = dire_score(&error_map, aggregation)?;
        Ok(Self {
            x0,
            x_hat0,
            error_map,
            scalar_error,
            reference_id: reference_id.into(),
        })
    }
}

/// Elementwise squared residual.
pub fn dire_map(x0: &[f64], x_hat0: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != x_hat0.len() {
        return Err(Error::Shape(format!(
            "input has {} values, reconstruction {}",
            x0.len(),
            x_hat0.len()
        )));
    }
    let map: Vec<f64> = x0
        .iter()
        .zip(x_hat0)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruction error map".into()));
    }
    Ok(map)
}

pub fn dire_score(map: &[f64], aggregation: Aggregation) -> Result<f64> {
    if map.is_empty() {
        return Err(Error::Empty("error map".into()));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("error map".into()));
    }
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    Ok(match aggregation {
        Aggregation::Mean => mean,
        Aggregation::Max => map.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::LogMean => (mean + LOG_FLOOR).ln(),
    })
}

/// Reconstructs every window under `model` and records its error.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_records<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    windows: &[Window],
    aggregation: Aggregation,
    reference_id: &str,
    exec: Exec,
) -> Result<Vec<ReconstructionRecord>> {
    exec.try_map(windows, |w| {
        let x_hat = reconstruct(model, schedule, grid, &w.values)?;
        ReconstructionRecord::new(w.clone(), w.with_values(x_hat), aggregation, reference_id)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DireMode {
    Threshold,
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DireFeature {
    /// The aggregated scalar error.
    #[default]
    Scalar,
    /// The flattened error map, one feature per entry.
    Map,
}

/// Logistic fit settings; full-batch gradient descent on class-balanced
/// mean cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticFit {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for LogisticFit {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DireConfig {
    pub mode: DireMode,
    pub feature: DireFeature,
    pub aggregation: Aggregation,
    pub fit: LogisticFit,
}

/// Fitted decision model. In threshold mode `threshold` is on the scalar
/// error and `scale` sets the width of the probability squashing. In
/// logistic mode features are `-error` (or `-ln(error + floor)` for maps),
/// standardized with `feature_mean`/`feature_std`, and weights are kept
/// non-negative so higher error always means "more real".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DireDetector {
    pub mode: DireMode,
    pub feature: DireFeature,
    pub aggregation: Aggregation,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub threshold: f64,
    pub scale: f64,
    pub reference_generator_id: String,
}

fn raw_features(
    feature: DireFeature,
    aggregation: Aggregation,
    r: &ReconstructionRecord,
) -> Result<Vec<f64>> {
    Ok(match feature {
        DireFeature::Scalar => vec![-dire_score(&r.error_map, aggregation)?],
        DireFeature::Map => r.error_map.iter().map(|e| -(e + LOG_FLOOR).ln()).collect(),
    })
}

fn mean_std(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std = var
        .into_iter()
        .map(|v| if v.sqrt() > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

/// F1 on `scores` when predicting synthetic for `score <= tau`.
fn threshold_f1(real: &[f64], synth: &[f64], tau: f64) -> f64 {
    let tp = synth.iter().filter(|&&s| s <= tau).count();
    let fp = real.iter().filter(|&&s| s <= tau).count();
    let fn_ = synth.len() - tp;
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn check_records(records: &[ReconstructionRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty(format!("no {what} records")));
    }
    Ok(())
}

pub fn fit_dire_detector(
    real: &[ReconstructionRecord],
    synth: &[ReconstructionRecord],
    config: &DireConfig,
    seed: u64,
) -> Result<DireDetector> {
    check_records(real, "real")?;
    check_records(synth, "synthetic")?;
    let reference = synth[0].reference_id.clone();
    if let Some(r) = real
        .iter()
        .chain(synth)
        .find(|r| r.reference_id != reference)
    {
        return Err(Error::Provenance(format!(
            "record {} reconstructed under {}, expected {reference}",
            r.x0.id, r.reference_id
        )));
    }
    if let Some(r) = real.iter().find(|r| !r.x0.source.is_real()) {
        return Err(Error::Provenance(format!("record {} is not real", r.x0.id)));
    }
    if let Some(r) = synth.iter().find(|r| r.x0.source.is_real()) {
        return Err(Error::Provenance(format!(
            "record {} is not synthetic",
            r.x0.id
        )));
    }
    let mut det = DireDetector {
        mode: config.mode,
        feature: config.feature,
        aggregation: config.aggregation,
        weights: Vec::new(),
        bias: 0.0,
        feature_mean: Vec::new(),
        feature_std: Vec::new(),
        threshold: 0.5,
        scale: 1.0,
        reference_generator_id: reference,
    };
    match config.mode {
        DireMode::Threshold => {
            if config.feature != DireFeature::Scalar {
                return Err(Error::InvalidArgument(
                    "threshold mode needs the scalar feature".into(),
                ));
            }
            let score = |r: &ReconstructionRecord| dire_score(&r.error_map, config.aggregation);
            let rs: Vec<f64> = real.iter().map(score).collect::<Result<_>>()?;
            let ss: Vec<f64> = synth.iter().map(score).collect::<Result<_>>()?;
            let mut all: Vec<f64> = rs.iter().chain(&ss).copied().collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            let mut candidates = vec![all[0] - 1.0];
            candidates.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            candidates.push(all[all.len() - 1]);
            let mut best = (f64::NEG_INFINITY, candidates[0]);
            for &tau in &candidates {
                let f1 = threshold_f1(&rs, &ss, tau);
                if f1 > best.0 {
                    best = (f1, tau);
                }
            }
            det.threshold = best.1;
            let (_, std) = mean_std(&rs.iter().chain(&ss).map(|&s| vec![s]).collect::<Vec<_>>());
            det.scale = std[0];
        }
        DireMode::Logistic => {
            let feats = |rs: &[ReconstructionRecord]| -> Result<Vec<Vec<f64>>> {
                rs.iter()
                    .map(|r| raw_features(config.feature, config.aggregation, r))
                    .collect()
            };
            let fr = feats(real)?;
            let fs = feats(synth)?;
            let d = fr[0].len();
            if let Some(f) = fr.iter().chain(&fs).find(|f| f.len() != d) {
                return Err(Error::Shape(format!("feature length {} vs {d}", f.len())));
            }
            let all: Vec<Vec<f64>> = fr.iter().chain(&fs).cloned().collect();
            let (mean, std) = mean_std(&all);
            let z = |f: &[f64]| -> Vec<f64> {
                f.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            };
            let zr: Vec<Vec<f64>> = fr.iter().map(|f| z(f)).collect();
            let zs: Vec<Vec<f64>> = fs.iter().map(|f| z(f)).collect();
            let mut r = rng::derived(seed, "dire-logistic");
            let mut w: Vec<f64> = rng::normals(&mut r, d)
                .iter()
                .map(|v| 0.01 * v.abs())
                .collect();
            let mut b = 0.0;
            let fit = config.fit;
            for _ in 0..fit.iterations {
                let mut gw = vec![0.0; d];
                let mut gb = 0.0;
                for (rows, y) in [(&zr, 0.0), (&zs, 1.0)] {
                    let k = 0.5 / rows.len() as f64;
                    for x in rows.iter() {
                        let p = sigmoid(dot(&w, x) + b);
                        let g = (p - y) * k;
                        gb += g;
                        for (gi, xi) in gw.iter_mut().zip(x) {
                            *gi += g * xi;
                        }
                    }
                }
                for (wi, gi) in w.iter_mut().zip(&gw) {
                    *wi = (*wi - fit.lr * (gi + fit.l2 * *wi)).max(0.0);
                }
                b -= fit.lr * gb;
            }
            if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
                return Err(Error::NonFinite("logistic weights".into()));
            }
            det.weights = w;
            det.bias = b;
            det.feature_mean = mean;
            det.feature_std = std;
        }
    }
    Ok(det)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(probability of synthetic, label)`. Threshold mode labels synthetic when
/// the scalar error is at most the threshold; logistic mode when the
/// probability is at least 0.5.
pub fn dire_predict(det: &DireDetector, record: &ReconstructionRecord) -> Result<(f64, u8)> {
    match det.mode {
        DireMode::Threshold => {
            let s = dire_score(&record.error_map, det.aggregation)?;
            let p = sigmoid((det.threshold - s) / det.scale);
            Ok((p, u8::from(s <= det.threshold)))
        }
        DireMode::Logistic => {
            let f = raw_features(det.feature, det.aggregation, record)?;
            if f.len() != det.weights.len()
                || f.len() != det.feature_mean.len()
                || f.len() != det.feature_std.len()
            {
                return Err(Error::Shape(format!(
                    "record has {} features, detector expects {}",
                    f.len(),
                    det.weights.len()
                )));
            }
            let z: f64 = f
                .iter()
                .zip(&det.feature_mean)
                .zip(&det.feature_std)
                .zip(&det.weights)
                .map(|(((v, m), s), w)| w * (v - m) / s)
                .sum();
            let p = sigmoid(z + det.bias);
            Ok((p, u8::from(p >= 0.5)))
        }
    }
}

impl DireDetector {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::json("dire detector", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Writes `window_id,source,scalar_error,probability,label`, one row per
/// record.
pub fn write_scores_csv(
    path: &Path,
    records: &[ReconstructionRecord],
    preds: &[(f64, u8)],
) -> Result<()> {
    if records.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} records, {} predictions",
            records.len(),
            preds.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "window_id",
        "source",
        "scalar_error",
        "probability",
        "label",
    ])
    .map_err(|e| csv_err(path, e))?;
    for (r, (p, y)) in records.iter().zip(preds) {
        w.write_record([
            r.x0.id.clone(),
            r.x0.source.to_string(),
            r.scalar_error.to_string(),
            p.to_string(),
            y.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Source;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn window(id: &str, values: Vec<f64>, source: Source) -> Window {
        let n = values.len();
        Window::new(id, n, 1, values, source, "t").unwrap()
    }

    /// A record whose mean squared error is `mse`, spread uniformly.
    fn record(id: &str, mse: f64, source: Source) -> ReconstructionRecord {
        let x0 = window(id, vec![0.0; 4], source);
        let xh = x0.with_values(vec![mse.sqrt(); 4]);
        ReconstructionRecord::new(x0, xh, Aggregation::Mean, "g").unwrap()
    }

    fn synth(id: &str, mse: f64) -> ReconstructionRecord {
        record(id, mse, Source::Generator("g".into()))
    }

    fn real(id: &str, mse: f64) -> ReconstructionRecord {
        record(id, mse, Source::Real)
    }

    fn threshold_config() -> DireConfig {
        DireConfig {
            mode: DireMode::Threshold,
            aggregation: Aggregation::Mean,
            ..DireConfig::default()
        }
    }

    #[test]
    fn map_examples() {
        assert_eq!(dire_map(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(dire_map(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 4.0]);
        assert!(matches!(
            dire_map(&[1.0], &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn score_examples() {
        assert_eq!(dire_score(&[0.0; 6], Aggregation::Mean).unwrap(), 0.0);
        assert_eq!(dire_score(&[1.0, 4.0], Aggregation::Mean).unwrap(), 2.5);
        assert_eq!(dire_score(&[1.0, 4.0], Aggregation::Max).unwrap(), 4.0);
        assert_eq!(
            dire_score(&[0.0; 3], Aggregation::LogMean).unwrap(),
            1e-12f64.ln()
        );
    }

    proptest! {
        #[test]
        fn map_non_negative_and_sign_symmetric(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20)) {
            let a: Vec<f64> = v.iter().map(|p| p.0).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1).collect();
            let m = dire_map(&a, &b).unwrap();
            prop_assert!(m.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(m, dire_map(&b, &a).unwrap());
            prop_assert!(dire_map(&a, &a).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn separable_threshold() {
        let rs: Vec<_> = (0..5).map(|i| real(&format!("r{i}"), 0.9)).collect();
        let ss: Vec<_> = (0..5).map(|i| synth(&format!("s{i}"), 0.1)).collect();
        let det = fit_dire_detector(&rs, &ss, &threshold_config(), 0).unwrap();
        assert!(
            det.threshold > 0.1 && det.threshold < 0.9,
            "{}",
            det.threshold
        );
        let f1 = threshold_f1(&[0.9; 5], &[0.1; 5], det.threshold);
        assert_eq!(f1, 1.0);
        for r in &ss {
            assert_eq!(dire_predict(&det, r).unwrap().1, 1);
        }
        for r in &rs {
            assert_eq!(dire_predict(&det, r).unwrap().1, 0);
        }
    }

    #[test]
    fn identical_distributions_hit_the_two_thirds_floor() {
        let rs: Vec<_> = (0..6).map(|i| real(&format!("r{i}"), 0.5)).collect();
        let ss: Vec<_> = (0..6).map(|i| synth(&format!("s{i}"), 0.5)).collect();
        let det = fit_dire_detector(&rs, &ss, &threshold_config(), 0).unwrap();
        let preds: Vec<u8> = rs
            .iter()
            .chain(&ss)
            .map(|r| dire_predict(&det, r).unwrap().1)
            .collect();
        assert!(preds.iter().all(|&y| y == 1));
        let (tp, fp) = (6.0, 6.0);
        assert_abs_diff_eq!(2.0 * tp / (2.0 * tp + fp), 2.0 / 3.0);
        assert_abs_diff_eq!(threshold_f1(&[0.5; 6], &[0.5; 6], det.threshold), 2.0 / 3.0);
    }

    #[test]
    fn tie_at_threshold_is_synthetic() {
        let mut det = fit_dire_detector(
            &[real("r", 0.9)],
            &[synth("s", 0.1)],
            &threshold_config(),
            0,
        )
        .unwrap();
        det.threshold = 0.25;
        let (p, y) = dire_predict(&det, &synth("x", 0.25)).unwrap();
        assert_eq!(y, 1);
        assert_eq!(p, 0.5);
        assert_eq!(dire_predict(&det, &synth("x", 1e-6)).unwrap().1, 1);
    }

    #[test]
    fn lowering_error_never_flips_to_real() {
        let rs: Vec<_> = (0..8)
            .map(|i| real(&format!("r{i}"), 0.2 + 0.1 * i as f64))
            .collect();
        let ss: Vec<_> = (0..8)
            .map(|i| synth(&format!("s{i}"), 0.05 + 0.1 * i as f64))
            .collect();
        for cfg in [
            threshold_config(),
            DireConfig {
                aggregation: Aggregation::Mean,
                ..Default::default()
            },
        ] {
            let det = fit_dire_detector(&rs, &ss, &cfg, 3).unwrap();
            let mut last = (0.0, 0u8);
            for k in (1..=100).rev() {
                let p = dire_predict(&det, &synth("x", k as f64 * 0.01)).unwrap();
                assert!(p.0 >= last.0 && p.1 >= last.1);
                last = p;
            }
        }
    }

    #[test]
    fn logistic_is_seeded_and_direction_is_fixed() {
        let rs: Vec<_> = (0..10)
            .map(|i| real(&format!("r{i}"), 0.5 + 0.05 * i as f64))
            .collect();
        let ss: Vec<_> = (0..10)
            .map(|i| synth(&format!("s{i}"), 0.01 + 0.01 * i as f64))
            .collect();
        let cfg = DireConfig::default();
        let a = fit_dire_detector(&rs, &ss, &cfg, 5).unwrap();
        let b = fit_dire_detector(&rs, &ss, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.iter().all(|&w| w >= 0.0));
        assert_eq!(dire_predict(&a, &ss[0]).unwrap().1, 1);
        assert_eq!(dire_predict(&a, &rs[9]).unwrap().1, 0);
        // reversed training labels cannot flip the learned direction
        let flipped: Vec<_> = (0..10)
            .map(|i| real(&format!("r{i}"), 0.01 + 0.01 * i as f64))
            .collect();
        let flipped_s: Vec<_> = (0..10)
            .map(|i| synth(&format!("s{i}"), 0.5 + 0.05 * i as f64))
            .collect();
        let c = fit_dire_detector(&flipped, &flipped_s, &cfg, 5).unwrap();
        assert!(c.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn zero_weight_logistic_is_half() {
        let mut det = fit_dire_detector(
            &[real("r", 0.9)],
            &[synth("s", 0.1)],
            &DireConfig::default(),
            0,
        )
        .unwrap();
        det.weights = vec![0.0];
        det.bias = 0.0;
        for mse in [1e-9, 0.3, 40.0] {
            assert_eq!(dire_predict(&det, &synth("x", mse)).unwrap(), (0.5, 1));
        }
    }

    #[test]
    fn map_feature_mismatch_is_an_error() {
        let cfg = DireConfig {
            feature: DireFeature::Map,
            ..DireConfig::default()
        };
        let det = fit_dire_detector(&[real("r", 0.9)], &[synth("s", 0.1)], &cfg, 0).unwrap();
        assert_eq!(det.weights.len(), 4);
        let x0 = window("w", vec![0.0; 3], Source::Real);
        let other = ReconstructionRecord::new(x0.clone(), x0, Aggregation::Mean, "g").unwrap();
        assert!(matches!(dire_predict(&det, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn fit_rejects_empty_classes_and_mixed_references() {
        let cfg = DireConfig::default();
        assert!(matches!(
            fit_dire_detector(&[], &[synth("s", 0.1)], &cfg, 0),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            fit_dire_detector(&[real("r", 0.1)], &[], &cfg, 0),
            Err(Error::Empty(_))
        ));
        let mut other = real("r", 0.5);
        other.reference_id = "h".into();
        assert!(matches!(
            fit_dire_detector(&[other], &[synth("s", 0.1)], &cfg, 0),
            Err(Error::Provenance(_))
        ));
    }

    #[test]
    fn persistence_round_trip_and_scores_csv() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![real("r0", 0.9), real("r1", 0.8)];
        let ss = vec![synth("s0", 0.1), synth("s1", 0.2)];
        let det = fit_dire_detector(&rs, &ss, &DireConfig::default(), 1).unwrap();
        let path = dir.path().join("dire.json");
        det.save(&path).unwrap();
        assert_eq!(DireDetector::load(&path).unwrap(), det);
        let all: Vec<_> = rs.into_iter().chain(ss).collect();
        let preds: Vec<_> = all.iter().map(|r| dire_predict(&det, r).unwrap()).collect();
        let csv_path = dir.path().join("scores.csv");
        write_scores_csv(&csv_path, &all, &preds).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "window_id,source,scalar_error,probability,label");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("s0,gen:g,"));
    }

    #[test]
    fn zero_noise_model_reconstructs_exactly() {
        use crate::diffusion::{make_schedule, ScheduleSpec};
        struct Zero(usize);
        impl NoisePredictor for Zero {
            fn state_len(&self) -> usize {
                self.0
            }
            fn predict_noise(&self, x: &[f64], _t: usize) -> Result<Vec<f64>> {
                Ok(vec![0.0; x.len()])
            }
        }
        let sched = make_schedule(ScheduleSpec::default()).unwrap();
        let grid = StepGrid::uniform(100, 20).unwrap();
        let ws = vec![window("a", vec![0.3, -0.2, 0.7], Source::Real)];
        let recs = reconstruct_records(
            &Zero(3),
            &sched,
            &grid,
            &ws,
            Aggregation::LogMean,
            "z",
            Exec::default(),
        )
        .unwrap();
        assert!(recs[0].error_map.iter().all(|&e| e < 1e-18));
        assert!(recs[0].scalar_error < -20.0);
    }
}

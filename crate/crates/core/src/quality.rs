//! Synthetic-data quality: correlational, discriminative and predictive
//! scores, and their normalized aggregate. Lower raw scores mean higher
//! quality; the aggregate is inverted so higher means better.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::blackbox::{bce_grad, bce_loss, build_mlp};
use crate::dataio::Window;
use crate::nn::{
    self, adam_step, Activation, AdamConfig, LayerSpec, Network, OptimizerState, ParamSet, Shape,
    Tensor,
};
use crate::par::Exec;
use crate::whitebox::csv_err;
use crate::{rng, Error, Result};

/// Pearson correlation matrix over channels, pooling every time step of
/// every window. Channels with zero variance get zero off-diagonal entries
/// and are listed in `degenerate`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub channels: usize,
    pub values: Vec<f64>,
    pub degenerate: Vec<usize>,
}

fn check_pair(real: &[Window], synth: &[Window]) -> Result<(usize, usize)> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Empty(
            "quality scores need real and synthetic windows".into(),
        ));
    }
    let (l, c) = (real[0].len, real[0].channels);
    if let Some(w) = real
        .iter()
        .chain(synth)
        .find(|w| (w.len, w.channels) != (l, c))
    {
        return Err(Error::Shape(format!(
            "window {} is {}x{}, expected {l}x{c}",
            w.id, w.len, w.channels
        )));
    }
    Ok((l, c))
}

pub fn correlation_matrix(windows: &[Window]) -> Result<CorrelationMatrix> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Empty("correlation needs windows".into()))?;
    let c = first.channels;
    let rows: Vec<&[f64]> = windows.iter().flat_map(|w| w.values.chunks(c)).collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; c];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; c * c];
    for r in &rows {
        for i in 0..c {
            let di = r[i] - mean[i];
            for j in i..c {
                cov[i * c + j] += di * (r[j] - mean[j]);
            }
        }
    }
    let degenerate: Vec<usize> = (0..c).filter(|&i| cov[i * c + i] <= 0.0).collect();
    let mut values = vec![0.0; c * c];
    for i in 0..c {
        values[i * c + i] = 1.0;
        for j in i + 1..c {
            let r = if degenerate.contains(&i) || degenerate.contains(&j) {
                0.0
            } else {
                cov[i * c + j] / (cov[i * c + i] * cov[j * c + j]).sqrt()
            };
            values[i * c + j] = r;
            values[j * c + i] = r;
        }
    }
    Ok(CorrelationMatrix {
        channels: c,
        values,
        degenerate,
    })
}

/// Sum of absolute differences between the two correlation matrices over
/// the strict upper triangle.
pub fn correlational_score(real: &[Window], synth: &[Window]) -> Result<f64> {
    check_pair(real, synth)?;
    let a = correlation_matrix(real)?;
    let b = correlation_matrix(synth)?;
    let c = a.channels;
    let mut s = 0.0;
    for i in 0..c {
        for j in i + 1..c {
            s += (a.values[i * c + j] - b.values[i * c + j]).abs();
        }
    }
    Ok(s)
}

/// Architecture and budget of the models trained inside the discriminative
/// and predictive scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 40,
            batch: 32,
            lr: 1e-3,
        }
    }
}

/// Seeded 80/20 split; both parts non-empty.
fn split_80_20<T: Clone>(items: &[T], r: &mut rng::Rng) -> (Vec<T>, Vec<T>) {
    let mut v = items.to_vec();
    v.shuffle(r);
    let n_test = ((0.2 * v.len() as f64).round() as usize).clamp(1, v.len() - 1);
    let test = v.split_off(v.len() - n_test);
    (v, test)
}

/// Mini-batch Adam over `samples`. `input` builds a sample's network input;
/// `loss` returns its loss and the gradient with respect to the output.
fn fit<S, I, L>(
    net: &Network,
    params: &mut ParamSet,
    samples: &[S],
    cfg: &QualityConfig,
    r: &mut rng::Rng,
    input: I,
    loss: L,
) -> Result<()>
where
    S: Sync,
    I: Fn(&S) -> Result<Tensor> + Sync + Send,
    L: Fn(&S, &[f64]) -> Result<(f64, Vec<f64>)> + Sync + Send,
{
    let mut opt = OptimizerState::new(
        params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(r);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&S> = chunk.iter().map(|&i| &samples[i]).collect();
            let p = &*params;
            let scale = 1.0 / batch.len() as f64;
            let (total, grads) = nn::accumulate(p, &batch, Exec::Sequential, |s| {
                let (out, tape) = net.forward(p, &input(s)?, None)?;
                let (l, g) = loss(s, &out.data)?;
                let g = Tensor::new(out.shape, g.iter().map(|v| v * scale).collect())?;
                Ok((l * scale, net.backward(p, &tape, &g)?))
            })?;
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: format!("quality model loss {total}"),
                });
            }
            adam_step(params, &grads, &mut opt)?;
            step += 1;
        }
    }
    Ok(())
}

/// `|accuracy - 0.5|` of a two-layer MLP trained on 80% of each set and
/// tested on the remaining 20%.
pub fn discriminative_score(
    real: &[Window],
    synth: &[Window],
    cfg: &QualityConfig,
    seed: u64,
) -> Result<f64> {
    let (l, c) = check_pair(real, synth)?;
    if real.len() < 5 || synth.len() < 5 {
        return Err(Error::InvalidArgument(
            "discriminative score needs at least 5 windows per class".into(),
        ));
    }
    let mut r = rng::derived(seed, "discriminative");
    let (rt, rv) = split_80_20(&sorted(real), &mut r);
    let (st, sv) = split_80_20(&sorted(synth), &mut r);
    let (input, layers) = build_mlp(l, c, cfg.hidden)?;
    let net = Network::new(input, layers)?;
    let mut params = net.init_params(rng::derive_seed(seed, "discriminative-init"));
    let train: Vec<(&Window, u8)> = rt
        .iter()
        .map(|w| (*w, 0))
        .chain(st.iter().map(|w| (*w, 1)))
        .collect();
    fit(
        &net,
        &mut params,
        &train,
        cfg,
        &mut r,
        |(w, _)| Tensor::new(input, w.values.clone()),
        |(_, y), out| Ok((bce_loss(&[*y], out)?, bce_grad(&[*y], out)?)),
    )?;
    let test: Vec<(&Window, u8)> = rv
        .iter()
        .map(|w| (*w, 0))
        .chain(sv.iter().map(|w| (*w, 1)))
        .collect();
    let mut correct = 0usize;
    for (w, y) in &test {
        let p = net
            .predict(&params, &Tensor::new(input, w.values.clone())?, None)?
            .data[0];
        if u8::from(p >= 0.5) == *y {
            correct += 1;
        }
    }
    Ok((correct as f64 / test.len() as f64 - 0.5).abs())
}

fn sorted(windows: &[Window]) -> Vec<&Window> {
    let mut v: Vec<&Window> = windows.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Dense forecaster from the first `L - 1` steps of all channels to the last
/// step: `(L-1)*C -> hidden -> relu -> C`.
pub fn forecaster(len: usize, channels: usize, hidden: usize) -> Result<(Shape, Network)> {
    if len < 2 {
        return Err(Error::InvalidArgument(
            "forecasting needs windows of at least 2 steps".into(),
        ));
    }
    let input = Shape::new(1, 1, (len - 1) * channels);
    let net = Network::new(
        input,
        vec![
            LayerSpec::Dense {
                inputs: (len - 1) * channels,
                outputs: hidden,
            },
            LayerSpec::act(Activation::Relu),
            LayerSpec::Dense {
                inputs: hidden,
                outputs: channels,
            },
        ],
    )?;
    Ok((input, net))
}

/// Trains a forecaster on `train` with squared error and returns its mean
/// absolute error on `eval`, averaged over windows and channels.
pub fn forecast_mae(
    train: &[Window],
    eval: &[Window],
    cfg: &QualityConfig,
    seed: u64,
) -> Result<f64> {
    let (l, c) = check_pair(eval, train)?;
    let (input, net) = forecaster(l, c, cfg.hidden)?;
    let mut params = net.init_params(rng::derive_seed(seed, "predictive-init"));
    let mut r = rng::derived(seed, "predictive");
    let head = (l - 1) * c;
    let train = sorted(train);
    fit(
        &net,
        &mut params,
        &train,
        cfg,
        &mut r,
        |w| Tensor::new(input, w.values[..head].to_vec()),
        |w, out| {
            let diff: Vec<f64> = out
                .iter()
                .zip(&w.values[head..])
                .map(|(o, t)| o - t)
                .collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / c as f64;
            Ok((loss, diff.iter().map(|d| 2.0 * d / c as f64).collect()))
        },
    )?;
    let mut total = 0.0;
    for w in eval {
        let out = net.predict(
            &params,
            &Tensor::new(input, w.values[..head].to_vec())?,
            None,
        )?;
        total += out
            .data
            .iter()
            .zip(&w.values[head..])
            .map(|(o, t)| (o - t).abs())
            .sum::<f64>()
            / c as f64;
    }
    Ok(total / eval.len() as f64)
}

/// Train on synthetic, test on real.
pub fn predictive_score(
    real: &[Window],
    synth: &[Window],
    cfg: &QualityConfig,
    seed: u64,
) -> Result<f64> {
    forecast_mae(synth, real, cfg, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMetric {
    Correlational,
    Discriminative,
    Predictive,
}

impl QualityMetric {
    pub const ALL: [QualityMetric; 3] = [
        QualityMetric::Correlational,
        QualityMetric::Discriminative,
        QualityMetric::Predictive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityMetric::Correlational => "correlational",
            QualityMetric::Discriminative => "discriminative",
            QualityMetric::Predictive => "predictive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub dataset_id: String,
    pub generator_id: String,
    pub correlational: f64,
    pub discriminative: f64,
    pub predictive: f64,
    pub seed: u64,
}

impl QualityReport {
    pub fn compute(
        dataset_id: &str,
        generator_id: &str,
        real: &[Window],
        synth: &[Window],
        cfg: &QualityConfig,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            generator_id: generator_id.to_string(),
            correlational: correlational_score(real, synth)?,
            discriminative: discriminative_score(real, synth, cfg, seed)?,
            predictive: predictive_score(real, synth, cfg, seed)?,
            seed,
        })
    }

    pub fn get(&self, m: QualityMetric) -> f64 {
        match m {
            QualityMetric::Correlational => self.correlational,
            QualityMetric::Discriminative => self.discriminative,
            QualityMetric::Predictive => self.predictive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateQuality {
    pub generator_id: String,
    pub value: f64,
    /// `(dataset, metric)` cells where every generator scored the same.
    pub degenerate: Vec<(String, QualityMetric)>,
}

/// For each dataset and metric, min-max normalizes the scores across
/// generators and inverts them (`1 - normalized`), then averages each
/// generator's values over metrics and datasets. A cell where all generators
/// tie contributes 0.5. Returned in generator-id order.
pub fn aggregate_quality(reports: &[QualityReport]) -> Result<Vec<AggregateQuality>> {
    if reports.is_empty() {
        return Err(Error::Empty("no quality reports".into()));
    }
    let mut table: BTreeMap<&str, BTreeMap<&str, &QualityReport>> = BTreeMap::new();
    for r in reports {
        if table
            .entry(&r.dataset_id)
            .or_default()
            .insert(&r.generator_id, r)
            .is_some()
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate report for {} on {}",
                r.generator_id, r.dataset_id
            )));
        }
    }
    let generators: Vec<&str> = {
        let mut g: Vec<&str> = reports.iter().map(|r| r.generator_id.as_str()).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    for (ds, row) in &table {
        if row.len() != generators.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset {ds} lacks reports for some generators"
            )));
        }
    }
    if reports
        .iter()
        .any(|r| QualityMetric::ALL.iter().any(|&m| !r.get(m).is_finite()))
    {
        return Err(Error::NonFinite("quality score".into()));
    }
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (ds, row) in &table {
        for m in QualityMetric::ALL {
            let (lo, hi) = row
                .values()
                .map(|r| r.get(m))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v), b.max(v))
                });
            let tied = hi <= lo;
            if tied {
                degenerate.push((ds.to_string(), m));
            }
            for (g, r) in row {
                let v = if tied {
                    0.5
                } else {
                    1.0 - (r.get(m) - lo) / (hi - lo)
                };
                *sums.entry(g).or_default() += v;
            }
        }
    }
    let cells = (table.len() * QualityMetric::ALL.len()) as f64;
    Ok(generators
        .into_iter()
        .map(|g| AggregateQuality {
            generator_id: g.to_string(),
            value: sums[g] / cells,
            degenerate: degenerate.clone(),
        })
        .collect())
}

/// Writes `dataset,generator,metric,value,seed`, three rows per report.
pub fn write_quality_csv(path: &Path, reports: &[QualityReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["dataset", "generator", "metric", "value", "seed"])
        .map_err(|e| csv_err(path, e))?;
    for r in reports {
        for m in QualityMetric::ALL {
            w.write_record([
                r.dataset_id.clone(),
                r.generator_id.clone(),
                m.name().to_string(),
                r.get(m).to_string(),
                r.seed.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Source;
    use approx::assert_abs_diff_eq;

    fn windows(
        n: usize,
        len: usize,
        channels: usize,
        source: Source,
        seed: u64,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Vec<Window> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|i| {
                let z = rng::normals(&mut r, len * channels);
                let values: Vec<f64> = z.chunks(channels).flat_map(&f).collect();
                Window::new(
                    format!("w{i:04}"),
                    len,
                    channels,
                    values,
                    source.clone(),
                    "d",
                )
                .unwrap()
            })
            .collect()
    }

    fn gen() -> Source {
        Source::Generator("g".into())
    }

    /// Textbook two-pass Pearson correlation.
    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn correlational_examples() {
        let a = windows(20, 16, 3, Source::Real, 1, |r| r.to_vec());
        assert_eq!(correlational_score(&a, &a).unwrap(), 0.0);
        let one = windows(10, 16, 1, Source::Real, 2, |r| r.to_vec());
        let one_s = windows(10, 16, 1, gen(), 3, |r| r.to_vec());
        assert_eq!(correlational_score(&one, &one_s).unwrap(), 0.0);
        let perfect = windows(200, 32, 2, Source::Real, 4, |r| {
            vec![r[0], 2.0 * r[0] + 1.0]
        });
        let indep = windows(200, 32, 2, gen(), 5, |r| r.to_vec());
        let xs: Vec<f64> = indep
            .iter()
            .flat_map(|w| w.values.chunks(2).map(|r| r[0]))
            .collect();
        let ys: Vec<f64> = indep
            .iter()
            .flat_map(|w| w.values.chunks(2).map(|r| r[1]))
            .collect();
        let oracle = (1.0 - pearson(&xs, &ys)).abs();
        let s = correlational_score(&perfect, &indep).unwrap();
        assert_abs_diff_eq!(s, oracle, epsilon = 1e-12);
        assert!((s - 1.0).abs() < 0.05, "{s}");
        assert_eq!(s, correlational_score(&indep, &perfect).unwrap());
    }

    #[test]
    fn correlational_is_scale_free_and_flags_constants() {
        let a = windows(30, 16, 3, Source::Real, 6, |r| {
            vec![r[0], r[0] + r[1], r[2] - r[0]]
        });
        let b = windows(30, 16, 3, gen(), 7, |r| r.to_vec());
        let scaled: Vec<Window> = b
            .iter()
            .map(|w| {
                w.with_values(
                    w.values
                        .chunks(3)
                        .flat_map(|r| [3.0 * r[0] - 1.0, 0.5 * r[1], 10.0 * r[2] + 4.0])
                        .collect(),
                )
            })
            .collect();
        assert_abs_diff_eq!(
            correlational_score(&a, &b).unwrap(),
            correlational_score(&a, &scaled).unwrap(),
            epsilon = 1e-12
        );
        let constant = windows(5, 8, 2, Source::Real, 8, |r| vec![r[0], 1.0]);
        let m = correlation_matrix(&constant).unwrap();
        assert_eq!(m.degenerate, vec![1]);
        assert_eq!(m.values[1], 0.0);
    }

    #[test]
    fn discriminative_examples() {
        let cfg = QualityConfig::default();
        let pool = windows(1000, 16, 2, Source::Real, 9, |r| r.to_vec());
        let (a, b) = pool.split_at(500);
        let b: Vec<Window> = b
            .iter()
            .map(|w| Window {
                source: gen(),
                ..w.clone()
            })
            .collect();
        let same = discriminative_score(a, &b, &cfg, 1).unwrap();
        assert!(same <= 0.1, "{same}");
        assert_eq!(same, discriminative_score(a, &b, &cfg, 1).unwrap());
        let shifted: Vec<Window> = b
            .iter()
            .map(|w| w.with_values(w.values.iter().map(|v| v + 10.0).collect()))
            .collect();
        let far = discriminative_score(a, &shifted, &cfg, 1).unwrap();
        assert!(far >= 0.45, "{far}");
        assert!(discriminative_score(&a[..4], &b, &cfg, 1).is_err());
    }

    #[test]
    fn predictive_examples() {
        let cfg = QualityConfig::default();
        let constant = windows(40, 8, 2, Source::Real, 10, |_| vec![0.5, -0.25]);
        let s = predictive_score(&constant, &constant, &cfg, 2).unwrap();
        assert!(s < 0.02, "{s}");
        let ar: Vec<Window> = windows(120, 12, 2, Source::Real, 11, |r| vec![r[0], 0.5 * r[1]])
            .into_iter()
            .map(|w| {
                let mut v = w.values.clone();
                for t in 1..12 {
                    for c in 0..2 {
                        v[t * 2 + c] += 0.8 * v[(t - 1) * 2 + c];
                    }
                }
                w.with_values(v)
            })
            .collect();
        let p = predictive_score(&ar, &ar, &cfg, 3).unwrap();
        assert!(p >= 0.0 && p.is_finite());
        assert_eq!(p, predictive_score(&ar, &ar, &cfg, 3).unwrap());
        let short = windows(5, 1, 2, Source::Real, 12, |r| r.to_vec());
        assert!(predictive_score(&short, &short, &cfg, 0).is_err());
    }

    fn report(ds: &str, g: &str, c: f64, d: f64, p: f64) -> QualityReport {
        QualityReport {
            dataset_id: ds.into(),
            generator_id: g.into(),
            correlational: c,
            discriminative: d,
            predictive: p,
            seed: 0,
        }
    }

    #[test]
    fn aggregate_best_and_worst() {
        let reports = vec![
            report("a", "g1", 0.1, 0.0, 0.2),
            report("a", "g2", 0.5, 0.3, 0.4),
            report("a", "g3", 0.2, 0.1, 0.3),
            report("b", "g1", 1.0, 0.1, 0.1),
            report("b", "g2", 2.0, 0.4, 0.9),
            report("b", "g3", 1.5, 0.2, 0.5),
        ];
        let agg = aggregate_quality(&reports).unwrap();
        assert_eq!(agg[0].generator_id, "g1");
        assert_eq!(agg[0].value, 1.0);
        assert_eq!(agg[1].value, 0.0);
        assert!(agg.iter().all(|a| (0.0..=1.0).contains(&a.value)));
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        // two generators, two datasets: each cell normalizes to 1 (lower) or 0
        // (higher); g1 wins 4 of 6 cells, so 4/6, and g2 gets 2/6.
        let reports = vec![
            report("a", "g1", 0.1, 0.2, 0.5),
            report("a", "g2", 0.3, 0.1, 0.6),
            report("b", "g1", 0.4, 0.05, 0.2),
            report("b", "g2", 0.2, 0.15, 0.3),
        ];
        let agg = aggregate_quality(&reports).unwrap();
        assert_abs_diff_eq!(agg[0].value, 4.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(agg[1].value, 2.0 / 6.0, epsilon = 1e-15);
        // a three-generator cell with an interior value: (0.3 - 0.1) / (0.5 - 0.1) = 0.5
        let three = vec![
            report("a", "g1", 0.1, 0.0, 0.0),
            report("a", "g2", 0.3, 0.0, 0.0),
            report("a", "g3", 0.5, 0.0, 0.0),
        ];
        let agg = aggregate_quality(&three).unwrap();
        assert_abs_diff_eq!(agg[1].value, (0.5 + 0.5 + 0.5) / 3.0, epsilon = 1e-15);
        assert_eq!(agg[1].degenerate.len(), 2);
    }

    #[test]
    fn aggregate_absorbs_affine_rescaling() {
        let reports = vec![
            report("a", "g1", 0.1, 0.2, 0.5),
            report("a", "g2", 0.3, 0.1, 0.6),
            report("a", "g3", 0.25, 0.15, 0.9),
        ];
        let rescaled: Vec<_> = reports
            .iter()
            .map(|r| QualityReport {
                predictive: 7.0 * r.predictive + 3.0,
                ..r.clone()
            })
            .collect();
        let a = aggregate_quality(&reports).unwrap();
        let b = aggregate_quality(&rescaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x.value, y.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn quality_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quality.csv");
        write_quality_csv(&path, &[report("a", "g1", 0.1, 0.2, 0.5)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(1).unwrap(), "a,g1,correlational,0.1,0");
    }
}

//! Series ingestion, windowing, normalization and deterministic splits.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// A multivariate series stored row-major: `values[t * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries {
    values: Vec<f64>,
    rows: usize,
    channels: usize,
    channel_names: Vec<String>,
}

impl MultivariateSeries {
    pub fn new(values: Vec<f64>, rows: usize, channel_names: Vec<String>) -> Result<Self> {
        let channels = channel_names.len();
        if rows == 0 || channels == 0 {
            return Err(Error::Empty(
                "series needs at least one row and one channel".into(),
            ));
        }
        if values.len() != rows * channels {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{channels} series",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {}, channel {}",
                i / channels,
                i % channels
            )));
        }
        Ok(Self {
            values,
            rows,
            channels,
            channel_names,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e))?;
        w.write_record(&self.channel_names)
            .map_err(|e| csv_err(path, 0, e))?;
        for t in 0..self.rows {
            w.write_record(self.row(t).iter().map(|v| format!("{v:?}")))
                .map_err(|e| csv_err(path, t + 1, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, row: usize, e: impl fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

/// Reads a header-plus-numeric-rows CSV. Row numbers in errors count data
/// rows from 1 (the header is row 0).
pub fn load_csv(path: &Path) -> Result<MultivariateSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, 0, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let channels = names.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, row, e))?;
        if record.len() != channels {
            return Err(csv_err(
                path,
                row,
                format!("expected {channels} fields, found {}", record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                csv_err(
                    path,
                    row,
                    format!("non-numeric field {field:?} in column {}", names[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_err(
                    path,
                    row,
                    format!("non-finite value in column {}", names[c]),
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    MultivariateSeries::new(values, rows, names)
}

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Generator(String),
}

impl Source {
    pub fn is_real(&self) -> bool {
        matches!(self, Source::Real)
    }

    /// Detection label: 1 for synthetic, 0 for real.
    pub fn label(&self) -> u8 {
        u8::from(!self.is_real())
    }

    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("gen:") {
            Some(id) => Source::Generator(id.to_string()),
            None => Source::Real,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Real => f.write_str("real"),
            Source::Generator(id) => write!(f, "gen:{id}"),
        }
    }
}

/// One `len x channels` segment, row-major over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub id: String,
    pub len: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub source: Source,
    pub dataset_id: String,
}

impl Window {
    pub fn new(
        id: impl Into<String>,
        len: usize,
        channels: usize,
        values: Vec<f64>,
        source: Source,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != len * channels {
            return Err(Error::Shape(format!(
                "window of {len}x{channels} given {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window values".into()));
        }
        Ok(Self {
            id: id.into(),
            len,
            channels,
            values,
            source,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels + c]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Cuts windows of `len` steps starting at `0, stride, 2*stride, ...`.
pub fn slide_windows(
    series: &MultivariateSeries,
    len: usize,
    stride: usize,
    dataset_id: &str,
) -> Result<Vec<Window>> {
    if len == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window length and stride must be positive".into(),
        ));
    }
    if len > series.rows {
        return Err(Error::InvalidArgument(format!(
            "window length {len} exceeds series length {}",
            series.rows
        )));
    }
    let c = series.channels;
    let count = (series.rows - len) / stride + 1;
    (0..count)
        .map(|k| {
            let start = k * stride;
            Window::new(
                format!("{dataset_id}/{start}"),
                len,
                c,
                series.values[start * c..(start + len) * c].to_vec(),
                Source::Real,
                dataset_id,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScheme {
    #[default]
    Minmax,
    Zscore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Per-channel affine normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scheme: NormScheme,
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.location.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("norm stats", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    fn forward(&self, c: usize, v: f64) -> f64 {
        match self.scheme {
            NormScheme::Minmax => (v - self.location[c]) / self.scale[c] - 1.0,
            NormScheme::Zscore => (v - self.location[c]) / self.scale[c],
        }
    }

    fn inverse(&self, c: usize, v: f64) -> f64 {
        match self.scheme {
            NormScheme::Minmax => (v + 1.0) * self.scale[c] + self.location[c],
            NormScheme::Zscore => v * self.scale[c] + self.location[c],
        }
    }
}

pub fn fit_normalizer(windows: &[Window], scheme: NormScheme) -> Result<NormStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Empty("normalizer needs at least one window".into()))?;
    let channels = first.channels;
    if let Some(w) = windows.iter().find(|w| w.channels != channels) {
        return Err(Error::Shape(format!(
            "window {} has {} channels, expected {channels}",
            w.id, w.channels
        )));
    }
    let mut location = vec![0.0; channels];
    let mut scale = vec![1.0; channels];
    for c in 0..channels {
        let column = windows
            .iter()
            .flat_map(|w| (0..w.len).map(move |t| w.at(t, c)));
        match scheme {
            NormScheme::Minmax => {
                let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
                location[c] = lo;
                let half = (hi - lo) / 2.0;
                scale[c] = if half > 0.0 { half } else { 1.0 };
            }
            NormScheme::Zscore => {
                let values: Vec<f64> = column.collect();
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                location[c] = mean;
                let sd = var.sqrt();
                scale[c] = if sd > 0.0 { sd } else { 1.0 };
            }
        }
    }
    Ok(NormStats {
        scheme,
        location,
        scale,
    })
}

pub fn apply_normalizer(
    windows: &[Window],
    stats: &NormStats,
    direction: Direction,
) -> Result<Vec<Window>> {
    windows
        .iter()
        .map(|w| {
            if w.channels != stats.channels() {
                return Err(Error::Shape(format!(
                    "window {} has {} channels, stats have {}",
                    w.id,
                    w.channels,
                    stats.channels()
                )));
            }
            let values = w
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = i % w.channels;
                    match direction {
                        Direction::Forward => stats.forward(c, v),
                        Direction::Inverse => stats.inverse(c, v),
                    }
                })
                .collect();
            Ok(w.with_values(values))
        })
        .collect()
}

/// Sizes for a three-way split of `n` items. Train and validation sizes are
/// rounded; the test split takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    let ok = [a, b, c].iter().all(|r| r.is_finite() && *r >= 0.0)
        && a > 0.0
        && ((a + b + c) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative, with a positive train share, and sum to 1"
        )));
    }
    let train = ((a * n as f64).round() as usize).min(n);
    let val = ((b * n as f64).round() as usize).min(n - train);
    Ok((train, val, n - train - val))
}

/// Seeded shuffle followed by a train/validation/test cut.
pub fn split<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n_train, n_val, _) = split_sizes(items.len(), ratios)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Parameters of the built-in synthetic dataset: per-channel random-phase
/// sinusoids plus a shared component, with AR(1) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskDataSpec {
    pub length: usize,
    pub channels: usize,
    pub sinusoids: usize,
    pub min_period: f64,
    pub max_period: f64,
    pub ar_coef: f64,
    pub noise_scale: f64,
    pub coupling: f64,
    pub seed: u64,
}

impl Default for DeskDataSpec {
    fn default() -> Self {
        Self {
            length: 40_000,
            channels: 3,
            sinusoids: 3,
            min_period: 8.0,
            max_period: 64.0,
            ar_coef: 0.6,
            noise_scale: 0.1,
            coupling: 0.6,
            seed: 2024,
        }
    }
}

pub fn make_desk_series(spec: &DeskDataSpec) -> Result<MultivariateSeries> {
    if spec.length == 0 || spec.channels == 0 {
        return Err(Error::InvalidArgument(
            "desk data needs positive length and channels".into(),
        ));
    }
    if !(spec.min_period > 0.0 && spec.min_period <= spec.max_period) {
        return Err(Error::InvalidArgument(
            "desk data periods must satisfy 0 < min <= max".into(),
        ));
    }
    let mut r = rng::rng(spec.seed);
    let tau = std::f64::consts::TAU;
    let component = |r: &mut rng::Rng| {
        let period = r.random_range(spec.min_period..=spec.max_period);
        let amp = r.random_range(0.3..1.0);
        let phase = r.random_range(0.0..tau);
        (tau / period, amp, phase)
    };
    let shared: Vec<_> = (0..spec.sinusoids).map(|_| component(&mut r)).collect();
    let own: Vec<Vec<_>> = (0..spec.channels)
        .map(|_| (0..spec.sinusoids).map(|_| component(&mut r)).collect())
        .collect();
    let noise = rng::normals(&mut r, spec.length * spec.channels);
    let mut ar = vec![0.0; spec.channels];
    let mut values = Vec::with_capacity(spec.length * spec.channels);
    for t in 0..spec.length {
        let tf = t as f64;
        let common: f64 = shared.iter().map(|(w, a, p)| a * (w * tf + p).sin()).sum();
        for c in 0..spec.channels {
            let local: f64 = own[c].iter().map(|(w, a, p)| a * (w * tf + p).sin()).sum();
            ar[c] = spec.ar_coef * ar[c] + spec.noise_scale * noise[t * spec.channels + c];
            values.push(spec.coupling * common + (1.0 - spec.coupling) * local + ar[c]);
        }
    }
    let names = (0..spec.channels).map(|c| format!("ch{c}")).collect();
    MultivariateSeries::new(values, spec.length, names)
}

//! End-to-end experiment: data preparation, generator zoo, synthetic pools,
//! detector training on real and reference-generator windows only, scoring,
//! metrics, quality, and report files.
//!
//! Every stage writes its artifacts under the output directory, one
//! subdirectory per `(dataset, window length)` cell, so any single stage can
//! be rerun from the artifacts of the stages before it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::blackbox::{
    classify_batch, train_blackbox, write_predictions_csv, ClassifierArch, ClassifierKind,
    ClassifierModel, ClassifierTraining, TrainReport,
};
use crate::dataio::{
    apply_normalizer, fit_normalizer, load_csv, make_desk_series, slide_windows, split,
    DeskDataSpec, Direction, MultivariateSeries, NormScheme, NormStats, Source, Window,
};
use crate::diffusion::{
    ddim_generate, make_schedule, train_denoiser, Denoiser, DenoiserArch, DenoiserTraining,
    ScheduleKind, ScheduleSpec, StepGrid,
};
use crate::metrics::{evaluate, MetricRow, ScoredBatch};
use crate::par::Exec;
use crate::quality::{
    aggregate_quality, write_quality_csv, AggregateQuality, QualityConfig, QualityReport,
};
use crate::whitebox::{
    csv_err, dire_predict, fit_dire_detector, reconstruct_records, write_scores_csv, DireConfig,
    DireDetector, ReconstructionRecord,
};
use crate::{rng, Error, Result};

/// Name of the white-box detector in reports.
pub const DIRE_ID: &str = "dire";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub id: String,
    /// CSV with a header row; when absent the built-in desk dataset is
    /// generated from `desk`.
    pub path: Option<PathBuf>,
    pub desk: DeskDataSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            id: "desk".into(),
            path: None,
            desk: DeskDataSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for GeneratorTraining {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub id: String,
    pub arch: DenoiserArch,
    pub schedule: ScheduleSpec,
    pub training: GeneratorTraining,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            id: "gstar".into(),
            arch: DenoiserArch::default(),
            schedule: reference_schedule(),
            training: GeneratorTraining::default(),
            seed: 1,
        }
    }
}

fn reference_schedule() -> ScheduleSpec {
    ScheduleSpec {
        kind: ScheduleKind::Linear,
        steps: 100,
        beta_start: 1e-3,
        beta_end: 0.1,
    }
}

/// The shipped four-member zoo; the first member is the reference.
pub fn default_zoo() -> Vec<GeneratorConfig> {
    vec![
        GeneratorConfig::default(),
        GeneratorConfig {
            id: "g1".into(),
            arch: DenoiserArch {
                width: 48,
                depth: 4,
                kernel: 7,
                time_dim: 16,
            },
            schedule: ScheduleSpec {
                kind: ScheduleKind::Cosine,
                steps: 200,
                ..ScheduleSpec::default()
            },
            seed: 2,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            id: "g2".into(),
            arch: DenoiserArch {
                width: 16,
                depth: 2,
                kernel: 3,
                time_dim: 16,
            },
            schedule: ScheduleSpec {
                kind: ScheduleKind::Linear,
                steps: 200,
                beta_start: 5e-4,
                beta_end: 0.1,
            },
            seed: 3,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            id: "g3".into(),
            schedule: ScheduleSpec {
                kind: ScheduleKind::Cosine,
                steps: 100,
                ..ScheduleSpec::default()
            },
            seed: 4,
            ..GeneratorConfig::default()
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub id: String,
    pub arch: ClassifierArch,
    pub training: ClassifierTraining,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            id: "disjoint_cnn".into(),
            arch: ClassifierArch::default(),
            training: ClassifierTraining::default(),
        }
    }
}

pub fn default_classifiers() -> Vec<ClassifierConfig> {
    vec![
        ClassifierConfig::default(),
        ClassifierConfig {
            id: "mlp".into(),
            arch: ClassifierArch {
                kind: ClassifierKind::Mlp,
                ..ClassifierArch::default()
            },
            ..ClassifierConfig::default()
        },
        ClassifierConfig {
            id: "fcn".into(),
            arch: ClassifierArch {
                kind: ClassifierKind::Fcn,
                ..ClassifierArch::default()
            },
            ..ClassifierConfig::default()
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Number of DDIM grid points used for sampling.
    pub points: usize,
    /// Bound on the clean-data estimate during sampling.
    pub clip: Option<f64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            points: 20,
            clip: Some(3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DireSettings {
    #[serde(flatten)]
    pub detector: DireConfig,
    /// Number of DDIM grid points for inversion and reconstruction.
    pub points: usize,
    /// Cap on each class when fitting.
    pub fit_windows: usize,
}

impl Default for DireSettings {
    fn default() -> Self {
        Self {
            detector: DireConfig::default(),
            points: 20,
            fit_windows: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    pub lengths: Vec<usize>,
    /// Train, validation and test shares of the non-overlapping windows.
    pub split: [f64; 3],
    pub normalization: NormScheme,
    /// Stride of the real detector-training windows; `None` means `L / 2`.
    pub detector_stride: Option<usize>,
    pub zoo: Vec<GeneratorConfig>,
    pub reference: String,
    pub generation: GenerationConfig,
    pub dire: DireSettings,
    pub classifiers: Vec<ClassifierConfig>,
    pub quality: QualityConfig,
    /// Metric columns written to `metrics.csv`.
    pub metrics: Vec<String>,
    /// Cap on each class of every test pool.
    pub max_pool: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            datasets: vec![DatasetConfig::default()],
            lengths: vec![32, 64, 128],
            split: [0.7, 0.15, 0.15],
            normalization: NormScheme::Minmax,
            detector_stride: None,
            zoo: default_zoo(),
            reference: "gstar".into(),
            generation: GenerationConfig::default(),
            dire: DireSettings::default(),
            classifiers: default_classifiers(),
            quality: QualityConfig::default(),
            metrics: MetricRow::COLUMNS.iter().map(|s| s.to_string()).collect(),
            max_pool: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.datasets.is_empty() {
            return bad("no datasets".into());
        }
        if self.lengths.is_empty() || self.lengths.iter().any(|&l| l < 2) {
            return bad("window lengths must be given and at least 2".into());
        }
        if self.zoo.len() < 2 {
            return bad("the zoo needs at least two generators".into());
        }
        for (what, ids) in [
            (
                "dataset",
                self.datasets
                    .iter()
                    .map(|d| d.id.as_str())
                    .collect::<Vec<_>>(),
            ),
            (
                "generator",
                self.zoo.iter().map(|g| g.id.as_str()).collect(),
            ),
            (
                "detector",
                std::iter::once(DIRE_ID)
                    .chain(self.classifiers.iter().map(|c| c.id.as_str()))
                    .collect(),
            ),
        ] {
            let unique: BTreeSet<&str> = ids.iter().copied().collect();
            if unique.len() != ids.len() {
                return bad(format!("{what} ids must be unique"));
            }
            if let Some(id) = ids.iter().find(|id| !safe_id(id)) {
                return bad(format!(
                    "{what} id `{id}` must be non-empty and use [A-Za-z0-9_-]"
                ));
            }
        }
        if self.zoo.iter().filter(|g| g.id == self.reference).count() != 1 {
            return bad(format!(
                "reference generator `{}` is not in the zoo",
                self.reference
            ));
        }
        if let Some(m) = self
            .metrics
            .iter()
            .find(|m| !MetricRow::COLUMNS.contains(&m.as_str()))
        {
            return bad(format!("unknown metric `{m}`"));
        }
        if self.metrics.is_empty() {
            return bad("no metrics selected".into());
        }
        if self.max_pool == Some(0) {
            return bad("max_pool must be positive".into());
        }
        Ok(())
    }

    fn reference_config(&self) -> &GeneratorConfig {
        self.zoo
            .iter()
            .find(|g| g.id == self.reference)
            .expect("validated reference")
    }
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    MakeData,
    TrainGenerator,
    Generate,
    TrainDetector,
    Detect,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::MakeData,
        Stage::TrainGenerator,
        Stage::Generate,
        Stage::TrainDetector,
        Stage::Detect,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MakeData => "make-data",
            Stage::TrainGenerator => "train-generator",
            Stage::Generate => "generate",
            Stage::TrainDetector => "train-detector",
            Stage::Detect => "detect",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown stage `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Artifact locations for one `(dataset, length)` cell.
#[derive(Debug, Clone)]
pub struct CellPaths {
    pub root: PathBuf,
}

impl CellPaths {
    pub fn new(out: &Path, dataset: &str, len: usize) -> Self {
        Self {
            root: out.join(dataset).join(format!("L{len}")),
        }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn generator(&self, id: &str) -> PathBuf {
        self.root.join("generators").join(id)
    }

    pub fn pool(&self, name: &str) -> PathBuf {
        self.root.join("pools").join(format!("{name}.json"))
    }

    pub fn detectors(&self) -> PathBuf {
        self.root.join("detectors")
    }

    pub fn dire(&self) -> PathBuf {
        self.detectors().join("dire.json")
    }

    pub fn classifier(&self, id: &str) -> PathBuf {
        self.detectors().join(id)
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation.json")
    }
}

/// Normalized windows of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub dataset_id: String,
    pub len: usize,
    pub channels: usize,
    pub stats: NormStats,
    /// Non-overlapping windows used to train generators.
    pub train: Vec<Window>,
    /// Held-out real windows used to fit the white-box detector.
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    /// Real windows for classifier training: the generator-training windows
    /// plus strided windows lying entirely inside the training rows.
    pub detector_train: Vec<Window>,
}

fn load_series(ds: &DatasetConfig) -> Result<MultivariateSeries> {
    match &ds.path {
        Some(p) => load_csv(p),
        None => make_desk_series(&ds.desk),
    }
}

/// Windows, splits and normalization for one dataset and length.
pub fn prepare_data(
    series: &MultivariateSeries,
    dataset_id: &str,
    len: usize,
    cfg: &ExperimentConfig,
) -> Result<PreparedData> {
    let chunks = slide_windows(series, len, len, dataset_id)?;
    let idx: Vec<usize> = (0..chunks.len()).collect();
    let [a, b, c] = cfg.split;
    let (tr, va, te) = split(
        &idx,
        (a, b, c),
        rng::derive_seed(cfg.seed, &format!("split/{dataset_id}/L{len}")),
    )?;
    if tr.is_empty() || te.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{dataset_id}: {} windows of length {len} leave an empty train or test split",
            chunks.len()
        )));
    }
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.iter().map(|&i| chunks[i].clone()).collect::<Vec<_>>()
    };
    let (train, validation, test) = (pick(&tr), pick(&va), pick(&te));
    let train_rows: BTreeSet<usize> = tr.iter().copied().collect();
    let stride = cfg.detector_stride.unwrap_or(len / 2).max(1);
    let inside_train = |start: usize| {
        let last_row = start + len - 1;
        let (first, last) = (start / len, last_row / len);
        (first..=last).all(|k| train_rows.contains(&k))
    };
    let mut detector_train: Vec<Window> = slide_windows(series, len, stride, dataset_id)?
        .into_iter()
        .enumerate()
        .filter(|(k, _)| inside_train(k * stride))
        .map(|(_, w)| w)
        .collect();
    detector_train.sort_by_key(|w| w.id.clone());
    let stats = fit_normalizer(&train, cfg.normalization)?;
    let norm = |ws: &[Window]| apply_normalizer(ws, &stats, Direction::Forward);
    Ok(PreparedData {
        dataset_id: dataset_id.to_string(),
        len,
        channels: series.channels(),
        train: norm(&train)?,
        validation: norm(&validation)?,
        test: norm(&test)?,
        detector_train: norm(&detector_train)?,
        stats,
    })
}

/// Trains one generator on the cell's training windows. The seed depends on
/// the global seed and the generator's own id and seed only.
pub fn train_generator(
    gen: &GeneratorConfig,
    data: &PreparedData,
    global_seed: u64,
    exec: Exec,
) -> Result<Denoiser> {
    let seed = rng::derive_seed(
        global_seed,
        &format!(
            "generator/{}/{}/{}/L{}",
            gen.id, gen.seed, data.dataset_id, data.len
        ),
    );
    let mut model = Denoiser::new(
        gen.id.clone(),
        data.len,
        data.channels,
        &gen.arch,
        make_schedule(gen.schedule)?,
        rng::derive_seed(seed, "init"),
    )?;
    let steps = gen.training.epochs * data.train.len().div_ceil(gen.training.batch.max(1));
    let hyper = DenoiserTraining {
        batch: gen.training.batch,
        steps,
        lr: gen.training.lr,
    };
    train_denoiser(
        &mut model,
        &data.train,
        &hyper,
        rng::derive_seed(seed, "train"),
        exec,
    )
    .map_err(|e| match e {
        Error::Diverged { step, message } => Error::Diverged {
            step,
            message: format!("generator {}: {message}", gen.id),
        },
        other => other,
    })?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct GeneratorZoo {
    pub reference: String,
    pub models: Vec<Denoiser>,
}

impl GeneratorZoo {
    pub fn reference_model(&self) -> &Denoiser {
        self.models
            .iter()
            .find(|m| m.id == self.reference)
            .expect("zoo holds its reference")
    }
}

/// Trains every zoo member independently (in parallel under `exec`) and
/// persists their checkpoints when `dir` is given.
pub fn build_generator_zoo(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    dir: Option<&CellPaths>,
    exec: Exec,
) -> Result<GeneratorZoo> {
    cfg.validate()?;
    let models = exec.try_map(&cfg.zoo, |g| {
        train_generator(g, data, cfg.seed, Exec::Sequential)
    })?;
    if let Some(paths) = dir {
        for m in &models {
            m.save(&paths.generator(&m.id))?;
        }
    }
    Ok(GeneratorZoo {
        reference: cfg.reference.clone(),
        models,
    })
}

fn pool_seed(cfg: &ExperimentConfig, data: &PreparedData, gen: &str, kind: &str) -> u64 {
    rng::derive_seed(
        cfg.seed,
        &format!("pool/{kind}/{gen}/{}/L{}", data.dataset_id, data.len),
    )
}

fn generate_pool(
    model: &Denoiser,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    kind: &str,
    n: usize,
    exec: Exec,
) -> Result<Vec<Window>> {
    let grid = StepGrid::uniform(model.schedule.steps(), cfg.generation.points)?;
    let seed = pool_seed(cfg, data, &model.id, kind);
    ddim_generate(
        model,
        &grid,
        n,
        seed,
        cfg.generation.clip,
        &data.dataset_id,
        exec,
    )
}

/// Seeded subsample of at most `cap` windows, returned in id order.
fn subsample(windows: &[Window], cap: usize, seed: u64) -> Vec<Window> {
    let mut v = windows.to_vec();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    if v.len() > cap {
        v.shuffle(&mut rng::rng(seed));
        v.truncate(cap);
        v.sort_by(|a, b| a.id.cmp(&b.id));
    }
    v
}

/// Real and reference-generator windows handed to detector training.
#[derive(Debug, Clone)]
pub struct DetectorInputs {
    pub reference: String,
    pub real_train: Vec<Window>,
    pub synth_train: Vec<Window>,
    pub real_fit: Vec<Window>,
    pub synth_fit: Vec<Window>,
}

impl DetectorInputs {
    /// Fails unless every real window is real and every synthetic window
    /// comes from the reference generator.
    pub fn audit(&self) -> Result<()> {
        let expected = Source::Generator(self.reference.clone());
        for w in self.real_train.iter().chain(&self.real_fit) {
            if w.source != Source::Real {
                return Err(Error::Provenance(format!(
                    "{} offered as real is {}",
                    w.id, w.source
                )));
            }
        }
        for w in self.synth_train.iter().chain(&self.synth_fit) {
            if w.source != expected {
                return Err(Error::Provenance(format!(
                    "{} offered as reference output is {}",
                    w.id, w.source
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDetectors {
    pub dire: DireDetector,
    pub classifiers: Vec<(String, ClassifierModel, TrainReport)>,
}

/// Fits the white-box detector and every classifier. Only the reference
/// model and the audited inputs are visible here.
pub fn train_detectors(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    reference: &Denoiser,
    inputs: &DetectorInputs,
    exec: Exec,
) -> Result<TrainedDetectors> {
    inputs.audit()?;
    if reference.id != inputs.reference {
        return Err(Error::Provenance(format!(
            "reconstruction model {} is not the reference {}",
            reference.id, inputs.reference
        )));
    }
    let grid = StepGrid::uniform(reference.schedule.steps(), cfg.dire.points)?;
    let rec = |ws: &[Window]| {
        reconstruct_records(
            reference,
            &reference.schedule,
            &grid,
            ws,
            cfg.dire.detector.aggregation,
            &reference.id,
            exec,
        )
    };
    let real_rec = rec(&inputs.real_fit)?;
    let synth_rec = rec(&inputs.synth_fit)?;
    let cell = format!("{}/L{}", data.dataset_id, data.len);
    let dire = fit_dire_detector(
        &real_rec,
        &synth_rec,
        &cfg.dire.detector,
        rng::derive_seed(cfg.seed, &format!("dire/{cell}")),
    )?;
    let mut classifiers = Vec::new();
    for c in &cfg.classifiers {
        let (model, report) = train_blackbox(
            &inputs.real_train,
            &inputs.synth_train,
            c.arch,
            &c.training,
            &inputs.reference,
            rng::derive_seed(cfg.seed, &format!("classifier/{}/{cell}", c.id)),
            exec,
        )?;
        classifiers.push((c.id.clone(), model, report));
    }
    Ok(TrainedDetectors { dire, classifiers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Id,
    Ood,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Id => "ID",
            Role::Ood => "OOD",
        })
    }
}

/// Per-window output of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_id: String,
    pub source: Source,
    pub probability: f64,
    pub label: u8,
}

/// Reconstruction error of one test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DireError {
    pub dataset: String,
    pub length: usize,
    pub window_id: String,
    pub source: Source,
    pub scalar_error: f64,
}

/// Scores of every test window (real and each generator's pool) under every
/// detector, keyed by detector id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub detectors: BTreeMap<String, Vec<WindowScore>>,
    pub dire_errors: Vec<DireError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub length: usize,
    pub detector: String,
    pub generator: String,
    pub role: Role,
    pub n_real: usize,
    pub n_synthetic: usize,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodAverage {
    pub dataset: String,
    pub length: usize,
    pub detector: String,
    pub generators: Vec<String>,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEvaluation {
    pub rows: Vec<MetricRecord>,
    pub quality: Vec<QualityReport>,
    pub training: Vec<(String, TrainReport)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityPoint {
    pub generator: String,
    pub detector: String,
    pub role: Role,
    pub aggregate_quality: f64,
    /// Mean of the five metric columns, averaged over cells.
    pub aggregate_detectability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<MetricRecord>,
    pub ood_averages: Vec<OodAverage>,
    pub dire_errors: Vec<DireError>,
    pub quality: Vec<QualityReport>,
    pub aggregate_quality: Vec<AggregateQuality>,
    pub detectability: Vec<DetectabilityPoint>,
    pub training: Vec<(String, TrainReport)>,
}

impl ExperimentReport {
    pub fn ood_average(&self, dataset: &str, length: usize, detector: &str) -> Option<&OodAverage> {
        self.ood_averages
            .iter()
            .find(|a| a.dataset == dataset && a.length == length && a.detector == detector)
    }

    pub fn row(
        &self,
        dataset: &str,
        length: usize,
        detector: &str,
        generator: &str,
    ) -> Option<&MetricRecord> {
        self.rows.iter().find(|r| {
            r.dataset == dataset
                && r.length == length
                && r.detector == detector
                && r.generator == generator
        })
    }
}

/// One test pool: real test windows against one generator's windows.
#[derive(Debug, Clone)]
pub struct TestPool {
    pub generator: String,
    pub role: Role,
    pub real: Vec<Window>,
    pub synthetic: Vec<Window>,
}

/// Balances a pool by seeded downsampling of the larger class, then applies
/// the optional per-class cap. Returns `(real, synthetic)` in id order.
pub fn balance(
    real: &[Window],
    synth: &[Window],
    cap: Option<usize>,
    seed: u64,
) -> Result<(Vec<Window>, Vec<Window>)> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Empty(
            "a test pool needs real and synthetic windows".into(),
        ));
    }
    let n = real.len().min(synth.len()).min(cap.unwrap_or(usize::MAX));
    Ok((
        subsample(real, n, rng::derive_seed(seed, "real")),
        subsample(synth, n, rng::derive_seed(seed, "synthetic")),
    ))
}

/// Metric rows for every `(detector, pool)` from per-window scores. Each pool
/// must hold real windows and exactly one generator's windows.
pub fn evaluate_detectors(
    scores: &BTreeMap<String, Vec<WindowScore>>,
    pools: &[TestPool],
    dataset: &str,
    length: usize,
) -> Result<Vec<MetricRecord>> {
    let mut rows = Vec::new();
    for pool in pools {
        if pool.real.is_empty() || pool.synthetic.is_empty() {
            return Err(Error::Empty(format!(
                "pool for {} lacks a class",
                pool.generator
            )));
        }
        let expected = Source::Generator(pool.generator.clone());
        if pool.real.iter().any(|w| !w.source.is_real())
            || pool.synthetic.iter().any(|w| w.source != expected)
        {
            return Err(Error::Provenance(format!(
                "pool for {} mixes sources",
                pool.generator
            )));
        }
        for (detector, ws) in scores {
            let by_id: BTreeMap<(&str, &Source), &WindowScore> = ws
                .iter()
                .map(|s| ((s.window_id.as_str(), &s.source), s))
                .collect();
            let mut labels = Vec::new();
            let mut probs = Vec::new();
            let mut preds = Vec::new();
            for w in pool.real.iter().chain(&pool.synthetic) {
                let s = by_id.get(&(w.id.as_str(), &w.source)).ok_or_else(|| {
                    Error::InvalidArgument(format!("detector {detector} has no score for {}", w.id))
                })?;
                labels.push(w.source.label());
                probs.push(s.probability);
                preds.push(s.label);
            }
            let batch = ScoredBatch::new(labels, probs, Some(preds))?;
            rows.push(MetricRecord {
                dataset: dataset.to_string(),
                length,
                detector: detector.clone(),
                generator: pool.generator.clone(),
                role: pool.role,
                n_real: pool.real.len(),
                n_synthetic: pool.synthetic.len(),
                metrics: evaluate(&batch)?,
            });
        }
    }
    Ok(rows)
}

/// Averages the OOD rows of each `(dataset, length, detector)`.
pub fn ood_averages(rows: &[MetricRecord]) -> Vec<OodAverage> {
    let mut groups: BTreeMap<(String, usize, String), Vec<&MetricRecord>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.role == Role::Ood) {
        groups
            .entry((r.dataset.clone(), r.length, r.detector.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, length, detector), rs)| {
            let metrics: Vec<MetricRow> = rs.iter().map(|r| r.metrics).collect();
            OodAverage {
                dataset,
                length,
                detector,
                generators: rs.iter().map(|r| r.generator.clone()).collect(),
                metrics: MetricRow::average(&metrics).expect("non-empty group"),
            }
        })
        .collect()
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    dataset: &'a DatasetConfig,
    len: usize,
    paths: CellPaths,
    exec: Exec,
}

impl Cell<'_> {
    fn tag(&self) -> String {
        format!("{}/L{}", self.dataset.id, self.len)
    }

    fn seed(&self, label: &str) -> u64 {
        rng::derive_seed(self.cfg.seed, &format!("{label}/{}", self.tag()))
    }

    fn data(&self) -> Result<PreparedData> {
        read_json(&self.paths.data().join("windows.json"))
    }

    fn load_generator(&self, id: &str) -> Result<Denoiser> {
        Denoiser::load(&self.paths.generator(id))
    }

    fn load_pool(&self, name: &str) -> Result<Vec<Window>> {
        read_json(&self.paths.pool(name))
    }

    fn make_data(&self) -> Result<()> {
        let series = load_series(self.dataset)?;
        if self.dataset.path.is_none() {
            let csv_path = self
                .cfg
                .out_dir
                .join("data")
                .join(format!("{}.csv", self.dataset.id));
            std::fs::create_dir_all(csv_path.parent().expect("has parent"))
                .map_err(|e| Error::io(&csv_path, e))?;
            series.write_csv(&csv_path)?;
        }
        let data = prepare_data(&series, &self.dataset.id, self.len, self.cfg)?;
        write_json(&self.paths.data().join("windows.json"), &data)?;
        data.stats.save(&self.paths.data().join("norm_stats.json"))
    }

    fn train_generators(&self) -> Result<()> {
        let data = self.data()?;
        build_generator_zoo(self.cfg, &data, Some(&self.paths), self.exec)?;
        Ok(())
    }

    fn generate(&self) -> Result<()> {
        let data = self.data()?;
        for g in &self.cfg.zoo {
            let model = self.load_generator(&g.id)?;
            let test = generate_pool(&model, self.cfg, &data, "test", data.test.len(), self.exec)?;
            write_json(&self.paths.pool(&format!("{}-test", g.id)), &test)?;
            if g.id == self.cfg.reference {
                let train = generate_pool(
                    &model,
                    self.cfg,
                    &data,
                    "train",
                    data.detector_train.len(),
                    self.exec,
                )?;
                write_json(&self.paths.pool(&format!("{}-train", g.id)), &train)?;
                let n_fit = self.cfg.dire.fit_windows.min(data.validation.len().max(1));
                let fit = generate_pool(&model, self.cfg, &data, "fit", n_fit, self.exec)?;
                write_json(&self.paths.pool(&format!("{}-fit", g.id)), &fit)?;
            }
        }
        Ok(())
    }

    /// Reads only real windows and the reference generator's pools.
    fn detector_inputs(&self, data: &PreparedData) -> Result<DetectorInputs> {
        let reference = &self.cfg.reference;
        let real_fit_source = if data.validation.is_empty() {
            &data.train
        } else {
            &data.validation
        };
        Ok(DetectorInputs {
            reference: reference.clone(),
            real_train: data.detector_train.clone(),
            synth_train: self.load_pool(&format!("{reference}-train"))?,
            real_fit: subsample(
                real_fit_source,
                self.cfg.dire.fit_windows,
                self.seed("dire-fit"),
            ),
            synth_fit: self.load_pool(&format!("{reference}-fit"))?,
        })
    }

    fn train_detectors(&self) -> Result<()> {
        let data = self.data()?;
        let reference = self.load_generator(&self.cfg.reference)?;
        let inputs = self.detector_inputs(&data)?;
        let trained = train_detectors(self.cfg, &data, &reference, &inputs, self.exec)?;
        let dir = self.paths.detectors();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        trained.dire.save(&self.paths.dire())?;
        for (id, model, report) in &trained.classifiers {
            let dir = self.paths.classifier(id);
            model.save(&dir)?;
            write_json(&dir.join("train_report.json"), report)?;
        }
        Ok(())
    }

    /// Real test windows followed by each generator's test pool, in zoo order.
    fn test_windows(&self, data: &PreparedData) -> Result<Vec<Window>> {
        let mut all = data.test.clone();
        for g in &self.cfg.zoo {
            all.extend(self.load_pool(&format!("{}-test", g.id))?);
        }
        Ok(all)
    }

    fn detect(&self) -> Result<()> {
        let data = self.data()?;
        let windows = self.test_windows(&data)?;
        let reference = self.load_generator(&self.cfg.reference)?;
        let dire = DireDetector::load(&self.paths.dire())?;
        let grid = StepGrid::uniform(reference.schedule.steps(), self.cfg.dire.points)?;
        let records: Vec<ReconstructionRecord> = reconstruct_records(
            &reference,
            &reference.schedule,
            &grid,
            &windows,
            dire.aggregation,
            &reference.id,
            self.exec,
        )?;
        let preds: Vec<(f64, u8)> = records
            .iter()
            .map(|r| dire_predict(&dire, r))
            .collect::<Result<_>>()?;
        std::fs::create_dir_all(self.paths.scores())
            .map_err(|e| Error::io(self.paths.scores(), e))?;
        write_scores_csv(
            &self.paths.scores().join(format!("{DIRE_ID}.csv")),
            &records,
            &preds,
        )?;
        let to_scores = |preds: &[(f64, u8)]| -> Vec<WindowScore> {
            windows
                .iter()
                .zip(preds)
                .map(|(w, (p, y))| WindowScore {
                    window_id: w.id.clone(),
                    source: w.source.clone(),
                    probability: *p,
                    label: *y,
                })
                .collect()
        };
        let mut detectors = BTreeMap::new();
        detectors.insert(DIRE_ID.to_string(), to_scores(&preds));
        for c in &self.cfg.classifiers {
            let model = ClassifierModel::load(&self.paths.classifier(&c.id))?;
            let preds = classify_batch(&model, &windows, self.exec)?;
            write_predictions_csv(
                &self.paths.scores().join(format!("{}.csv", c.id)),
                &windows,
                &preds,
            )?;
            detectors.insert(c.id.clone(), to_scores(&preds));
        }
        let dire_errors = records
            .iter()
            .map(|r| DireError {
                dataset: self.dataset.id.clone(),
                length: self.len,
                window_id: r.x0.id.clone(),
                source: r.x0.source.clone(),
                scalar_error: r.scalar_error,
            })
            .collect();
        write_json(
            &self.paths.scores().join("scores.json"),
            &CellScores {
                detectors,
                dire_errors,
            },
        )
    }

    fn evaluate(&self) -> Result<()> {
        let data = self.data()?;
        let scores: CellScores = read_json(&self.paths.scores().join("scores.json"))?;
        let mut pools = Vec::new();
        let mut quality = Vec::new();
        for g in &self.cfg.zoo {
            let synth = self.load_pool(&format!("{}-test", g.id))?;
            let (real, synthetic) = balance(
                &data.test,
                &synth,
                self.cfg.max_pool,
                self.seed(&format!("balance/{}", g.id)),
            )?;
            quality.push(QualityReport::compute(
                &self.tag(),
                &g.id,
                &data.test,
                &synth,
                &self.cfg.quality,
                self.seed(&format!("quality/{}", g.id)),
            )?);
            pools.push(TestPool {
                generator: g.id.clone(),
                role: if g.id == self.cfg.reference {
                    Role::Id
                } else {
                    Role::Ood
                },
                real,
                synthetic,
            });
        }
        let rows = evaluate_detectors(&scores.detectors, &pools, &self.dataset.id, self.len)?;
        let mut training = Vec::new();
        for c in &self.cfg.classifiers {
            let report: TrainReport =
                read_json(&self.paths.classifier(&c.id).join("train_report.json"))?;
            training.push((format!("{}/{}", self.tag(), c.id), report));
        }
        write_json(
            &self.paths.evaluation(),
            &CellEvaluation {
                rows,
                quality,
                training,
            },
        )
    }

    fn run(&self, stage: Stage) -> Result<()> {
        let result = match stage {
            Stage::MakeData => self.make_data(),
            Stage::TrainGenerator => self.train_generators(),
            Stage::Generate => self.generate(),
            Stage::TrainDetector => self.train_detectors(),
            Stage::Detect => self.detect(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => Ok(()),
        };
        result.map_err(|e| Error::Stage {
            stage: format!("{stage} ({})", self.tag()),
            source: Box::new(e),
        })
    }
}

fn cells(cfg: &ExperimentConfig, exec: Exec) -> Vec<Cell<'_>> {
    let mut out = Vec::new();
    for ds in &cfg.datasets {
        for &len in &cfg.lengths {
            out.push(Cell {
                cfg,
                dataset: ds,
                len,
                paths: CellPaths::new(&cfg.out_dir, &ds.id, len),
                exec,
            });
        }
    }
    out
}

/// Collects the per-cell evaluations into a report.
pub fn assemble_report(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    let mut quality = Vec::new();
    let mut dire_errors = Vec::new();
    let mut training = Vec::new();
    for cell in cells(cfg, Exec::Sequential) {
        let ev: CellEvaluation = read_json(&cell.paths.evaluation())?;
        let scores: CellScores = read_json(&cell.paths.scores().join("scores.json"))?;
        rows.extend(ev.rows);
        quality.extend(ev.quality);
        training.extend(ev.training);
        dire_errors.extend(scores.dire_errors);
    }
    let aggregate = aggregate_quality(&quality)?;
    let quality_of: BTreeMap<&str, f64> = aggregate
        .iter()
        .map(|a| (a.generator_id.as_str(), a.value))
        .collect();
    let mut detect: BTreeMap<(String, String, Role), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        detect
            .entry((r.generator.clone(), r.detector.clone(), r.role))
            .or_default()
            .push(r.metrics.mean());
    }
    let detectability = detect
        .into_iter()
        .map(|((generator, detector, role), v)| DetectabilityPoint {
            aggregate_quality: quality_of[generator.as_str()],
            aggregate_detectability: v.iter().sum::<f64>() / v.len() as f64,
            generator,
            detector,
            role,
        })
        .collect();
    Ok(ExperimentReport {
        ood_averages: ood_averages(&rows),
        rows,
        dire_errors,
        quality,
        aggregate_quality: aggregate,
        detectability,
        training,
    })
}

/// Writes `metrics.csv`, `metrics.json`, `dire_errors.csv`, `quality.csv`,
/// `quality_detectability.csv` and `config_resolved.json` into `out`.
pub fn emit_report(report: &ExperimentReport, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let columns: Vec<usize> = cfg
        .metrics
        .iter()
        .map(|m| {
            MetricRow::COLUMNS
                .iter()
                .position(|c| c == m)
                .expect("validated metric")
        })
        .collect();
    let path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut header = vec![
        "dataset",
        "length",
        "detector",
        "generator",
        "role",
        "n_real",
        "n_synthetic",
    ];
    header.extend(columns.iter().map(|&i| MetricRow::COLUMNS[i]));
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for r in &report.rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.length.to_string(),
            r.detector.clone(),
            r.generator.clone(),
            r.role.to_string(),
            r.n_real.to_string(),
            r.n_synthetic.to_string(),
        ];
        let vals = r.metrics.values();
        rec.extend(columns.iter().map(|&i| vals[i].to_string()));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(&out.join("metrics.json"), report)?;

    let path = out.join("dire_errors.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["dataset", "length", "window_id", "source", "scalar_error"])
        .map_err(|e| csv_err(&path, e))?;
    for e in &report.dire_errors {
        w.write_record([
            e.dataset.clone(),
            e.length.to_string(),
            e.window_id.clone(),
            e.source.to_string(),
            e.scalar_error.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_quality_csv(&out.join("quality.csv"), &report.quality)?;

    let path = out.join("quality_detectability.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record([
        "generator",
        "detector",
        "role",
        "aggregate_quality",
        "aggregate_detectability",
    ])
    .map_err(|e| csv_err(&path, e))?;
    for p in &report.detectability {
        w.write_record([
            p.generator.clone(),
            p.detector.clone(),
            p.role.to_string(),
            p.aggregate_quality.to_string(),
            p.aggregate_detectability.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(&out.join("config_resolved.json"), cfg)
}

/// Runs every stage in order, or only `only`, which then reads the
/// artifacts of earlier stages from `cfg.out_dir`. Returns the report when
/// the report stage ran.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    only: Option<Stage>,
    exec: Exec,
) -> Result<Option<ExperimentReport>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join("config_resolved.json"), cfg)?;
    let stages: Vec<Stage> = match only {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    let cells = cells(cfg, exec);
    let mut report = None;
    for stage in stages {
        if stage == Stage::Report {
            let r = assemble_report(cfg)
                .and_then(|r| emit_report(&r, cfg, &cfg.out_dir).map(|_| r))
                .map_err(|e| Error::Stage {
                    stage: stage.to_string(),
                    source: Box::new(e),
                })?;
            report = Some(r);
            continue;
        }
        for cell in &cells {
            cell.run(stage)?;
        }
    }
    Ok(report)
}

/// Paths of every detector checkpoint file in `cfg.out_dir`, sorted.
pub fn detector_files(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for cell in cells(cfg, Exec::Sequential) {
        files.push(cell.paths.dire());
        for c in &cfg.classifiers {
            let dir = cell.paths.classifier(&c.id);
            files.push(dir.join("manifest.json"));
            files.push(dir.join("params.bin"));
            files.push(dir.join("arch.json"));
        }
    }
    Ok(files)
}

/// Reads `metrics.json` of a finished run.
pub fn load_report(out: &Path) -> Result<ExperimentReport> {
    read_json(&out.join("metrics.json"))
}

pub fn reference_id(cfg: &ExperimentConfig) -> &str {
    &cfg.reference_config().id
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tsdetect::blackbox::{ClassifierArch, ClassifierKind, ClassifierTraining};
use tsdetect::dataio::DeskDataSpec;
use tsdetect::diffusion::{DenoiserArch, ScheduleKind, ScheduleSpec};
use tsdetect::harness::{
    ClassifierConfig, DatasetConfig, DireSettings, ExperimentConfig, GenerationConfig,
    GeneratorConfig, GeneratorTraining,
};
use tsdetect::quality::QualityConfig;

fn generator(
    id: &str,
    seed: u64,
    kind: ScheduleKind,
    steps: usize,
    width: usize,
) -> GeneratorConfig {
    GeneratorConfig {
        id: id.into(),
        arch: DenoiserArch {
            width,
            depth: 2,
            kernel: 5,
            time_dim: 8,
        },
        schedule: ScheduleSpec {
            kind,
            steps,
            beta_start: 1e-3,
            beta_end: 0.1,
        },
        training: GeneratorTraining {
            epochs: 3,
            batch: 32,
            lr: 2e-3,
        },
        seed,
    }
}

/// A three-generator experiment that runs end to end in seconds.
pub fn small_config(out: &Path) -> ExperimentConfig {
    let classifier = |id: &str, kind: ClassifierKind| ClassifierConfig {
        id: id.into(),
        arch: ClassifierArch {
            kind,
            filters: 8,
            blocks: 1,
            hidden: 16,
            ..ClassifierArch::default()
        },
        training: ClassifierTraining {
            batch: 32,
            epochs: 3,
            ..ClassifierTraining::default()
        },
    };
    ExperimentConfig {
        seed: 11,
        out_dir: out.to_path_buf(),
        datasets: vec![DatasetConfig {
            id: "desk".into(),
            path: None,
            desk: DeskDataSpec {
                length: 3000,
                ..DeskDataSpec::default()
            },
        }],
        lengths: vec![24],
        zoo: vec![
            generator("gstar", 1, ScheduleKind::Linear, 40, 16),
            generator("g1", 2, ScheduleKind::Cosine, 60, 12),
            generator("g2", 3, ScheduleKind::Linear, 30, 8),
        ],
        reference: "gstar".into(),
        generation: GenerationConfig {
            points: 8,
            clip: Some(3.0),
        },
        dire: DireSettings {
            points: 8,
            fit_windows: 48,
            ..DireSettings::default()
        },
        classifiers: vec![
            classifier("disjoint_cnn", ClassifierKind::DisjointCnn),
            classifier("mlp", ClassifierKind::Mlp),
        ],
        quality: QualityConfig {
            hidden: 8,
            epochs: 3,
            ..QualityConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

/// Every file under `dir`, relative to it, sorted.
pub fn tree_files(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

pub fn sha256_file(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Relative path and digest of every generator and detector checkpoint file.
pub fn checkpoint_digests(out: &Path) -> Vec<(PathBuf, String)> {
    tree_files(out)
        .into_iter()
        .filter(|p| {
            p.components()
                .any(|c| c.as_os_str() == "generators" || c.as_os_str() == "detectors")
        })
        .map(|p| {
            let digest = sha256_file(&out.join(&p));
            (p, digest)
        })
        .collect()
}

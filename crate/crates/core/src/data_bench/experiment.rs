use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loaders::{load_csv, load_idx, IdxError, LabelColumn, LoadError};
use super::{
    accuracy, generate_k_subspaces, generate_two_subspaces, pca_project, sample_classes, CoefficientLaw, LabelledData,
    Sampling,
};
use crate::active::{
    ActiveError, Alpha, ConstraintStore, GroundTruthOracle, QueryMode, RoundDiagnostics, RoundInput, WssrPlus,
    WssrPlusConfig,
};
use crate::geometry::{GeometryError, PointCloud};
use crate::pipeline::{SolveDiagnostics, WssrConfig};
use crate::subspace::KscOptions;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no seeds configured")]
    NoSeeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Table {
    Angles,
    Noise,
    Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSpec {
    TwoSubspaces {
        theta: f64,
        sigma: f64,
        n_per_cluster: usize,
        dims: (usize, usize),
        ambient: usize,
        law: CoefficientLaw,
    },
    KSubspaces {
        clusters: usize,
        q: usize,
        ambient: usize,
        n_per_cluster: usize,
        sigma: f64,
        law: CoefficientLaw,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Number of classes drawn per replication; all when `None`.
        classes: Option<usize>,
        per_class: usize,
        pca_dim: Option<usize>,
    },
    Csv {
        path: PathBuf,
        /// Column name; the last column when `None`.
        label_column: Option<String>,
        has_header: bool,
        per_class: Option<usize>,
        pca_dim: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Query by utility, spread over the rounds.
    Active,
    /// Random labels supplied in a single round.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSpec {
    /// Fraction of points labelled in total.
    pub label_fraction: f64,
    pub rounds: usize,
    pub selection: Selection,
    pub alpha: Alpha,
    pub mode: QueryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSpec,
    /// `clusters` is overwritten with the class count of each replication.
    pub wssr: WssrConfig,
    pub ksc: KscOptions,
    pub seeds: Vec<u64>,
    pub active: Option<ActiveSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Final accuracy (after constrained rounds when configured).
    pub accuracy: f64,
    /// Accuracy of plain WSSR on the same replication.
    pub wssr_accuracy: f64,
    pub runtime_seconds: f64,
    pub solves: SolveDiagnostics,
    pub rounds: Vec<RoundDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedResult>,
    pub median: f64,
    pub std: f64,
    pub wssr_median: f64,
    pub runtime_seconds: f64,
    pub build: String,
}

impl ExperimentResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.accuracy).collect()
    }

    /// Writes `<name>.json` and `<name>.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf), ExperimentError> {
        fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.config.name));
        fs::write(&json, serde_json::to_string_pretty(self)?)?;
        let csv_path = dir.join(format!("{}.csv", self.config.name));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["seed", "accuracy", "wssr_accuracy", "runtime_seconds", "non_converged", "max_kkt_residual"])?;
        for s in &self.per_seed {
            w.write_record([
                s.seed.to_string(),
                s.accuracy.to_string(),
                s.wssr_accuracy.to_string(),
                s.runtime_seconds.to_string(),
                s.solves.non_converged.to_string(),
                s.solves.max_kkt_residual.to_string(),
            ])?;
        }
        w.flush()?;
        Ok((json, csv_path))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sample standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn build_id() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| env!("CARGO_PKG_VERSION").to_string())
}

/// Real datasets are read once and resampled per seed.
enum Source {
    Synthetic,
    Loaded(LabelledData),
}

fn load_source(spec: &DataSpec) -> Result<Source, ExperimentError> {
    Ok(match spec {
        DataSpec::Idx { images, labels, .. } => Source::Loaded(load_idx(images, labels)?),
        DataSpec::Csv {
            path,
            label_column,
            has_header,
            ..
        } => {
            let column = label_column.clone().map_or(LabelColumn::Last, LabelColumn::Name);
            Source::Loaded(load_csv(path, &column, *has_header)?)
        }
        _ => Source::Synthetic,
    })
}

/// The replication's data for one seed.
pub fn replicate(spec: &DataSpec, loaded: Option<&LabelledData>, seed: u64) -> LabelledData {
    let sampling = |n_per_cluster, sigma, law| Sampling {
        n_per_cluster,
        sigma,
        law,
        seed,
    };
    let project = |d: LabelledData, dim: &Option<usize>| match dim {
        Some(t) if *t < d.dim() => LabelledData {
            points: pca_project(&d.points, *t).0,
            labels: d.labels,
        },
        _ => d,
    };
    match spec {
        DataSpec::TwoSubspaces {
            theta,
            sigma,
            n_per_cluster,
            dims,
            ambient,
            law,
        } => generate_two_subspaces(*theta, *dims, *ambient, sampling(*n_per_cluster, *sigma, *law)).0,
        DataSpec::KSubspaces {
            clusters,
            q,
            ambient,
            n_per_cluster,
            sigma,
            law,
        } => generate_k_subspaces(*clusters, *q, *ambient, sampling(*n_per_cluster, *sigma, *law)).0,
        DataSpec::Idx {
            classes,
            per_class,
            pca_dim,
            ..
        } => {
            let data = loaded.expect("dataset loaded");
            project(sample_classes(data, *classes, *per_class, seed), pca_dim)
        }
        DataSpec::Csv { per_class, pca_dim, .. } => {
            let data = loaded.expect("dataset loaded");
            let sampled = match per_class {
                Some(m) => sample_classes(data, None, *m, seed),
                None => data.clone(),
            };
            project(sampled, pca_dim)
        }
    }
}

fn run_seed(config: &ExperimentConfig, loaded: Option<&LabelledData>, seed: u64) -> Result<SeedResult, ExperimentError> {
    let start = Instant::now();
    let data = replicate(&config.data, loaded, seed);
    let truth = data.dense_labels();
    let clusters = data.classes().len().max(2);
    let cloud = PointCloud::from_columns(data.points)?;
    let mut wssr = config.wssr.clone();
    wssr.clusters = clusters;
    wssr.spectral.seed = seed;
    let plus_config = WssrPlusConfig {
        wssr,
        ksc: config.ksc.clone(),
        mode: config.active.as_ref().map_or(QueryMode::Approx, |a| a.mode),
    };
    let mut driver = WssrPlus::new(&cloud, plus_config, Some(&truth))?;
    let (mut state, solves) = driver.initial_state()?;
    let wssr_accuracy = accuracy(&state.assignment.labels, &truth);
    let mut rounds = Vec::new();
    if let Some(spec) = &config.active {
        let n = cloud.len();
        let total = ((spec.label_fraction * n as f64).round() as usize).min(n);
        let rounds_wanted = spec.rounds.max(1);
        let per_round = total.div_ceil(rounds_wanted).max(1);
        let mut store = ConstraintStore::new(spec.alpha, per_round)?;
        match spec.selection {
            Selection::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe1);
                let picks: Vec<(usize, usize)> = sample(&mut rng, n, total)
                    .into_iter()
                    .map(|i| (i, truth[i]))
                    .collect();
                let (next, diag) = driver.round(&mut store, &state, RoundInput::Labels(picks))?;
                state = next;
                rounds.push(diag);
            }
            Selection::Active => {
                let mut oracle = GroundTruthOracle(&truth);
                let mut remaining = total;
                while remaining > 0 {
                    let budget = per_round.min(remaining);
                    let (next, diag) = driver.round(
                        &mut store,
                        &state,
                        RoundInput::Active {
                            oracle: &mut oracle,
                            budget,
                        },
                    )?;
                    state = next;
                    rounds.push(diag);
                    remaining -= budget;
                }
            }
        }
    }
    Ok(SeedResult {
        seed,
        accuracy: accuracy(&state.assignment.labels, &truth),
        wssr_accuracy,
        runtime_seconds: start.elapsed().as_secs_f64(),
        solves,
        rounds,
    })
}

/// Runs every seed (in parallel) and aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    if config.seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let start = Instant::now();
    let source = load_source(&config.data)?;
    let loaded = match &source {
        Source::Loaded(d) => Some(d),
        Source::Synthetic => None,
    };
    let per_seed: Vec<SeedResult> = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, loaded, s))
        .collect::<Result<_, _>>()?;
    let acc: Vec<f64> = per_seed.iter().map(|s| s.accuracy).collect();
    let base: Vec<f64> = per_seed.iter().map(|s| s.wssr_accuracy).collect();
    Ok(ExperimentResult {
        config: config.clone(),
        median: median(&acc),
        std: std_dev(&acc),
        wssr_median: median(&base),
        per_seed,
        runtime_seconds: start.elapsed().as_secs_f64(),
        build: build_id(),
    })
}

/// Points per cluster in the varying-dimension experiments.
pub const DIMS_POINTS_PER_CLUSTER: usize = 300;

/// Coefficient law of the synthetic experiment grids.
pub const SYNTHETIC_LAW: CoefficientLaw = CoefficientLaw::Gaussian;

/// The synthetic experiment grids.
pub fn table_configs(table: Table, seeds: &[u64]) -> Vec<ExperimentConfig> {
    let base = |name: String, data: DataSpec, knn: usize, q: usize| ExperimentConfig {
        name,
        data,
        wssr: WssrConfig {
            knn,
            ..WssrConfig::default()
        },
        ksc: KscOptions {
            q,
            ..KscOptions::default()
        },
        seeds: seeds.to_vec(),
        active: None,
    };
    match table {
        Table::Angles => [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
            .iter()
            .map(|&theta| {
                let data = DataSpec::TwoSubspaces {
                    theta,
                    sigma: 0.01,
                    n_per_cluster: 200,
                    dims: (1, 1),
                    ambient: 3,
                    law: SYNTHETIC_LAW,
                };
                base(format!("angles_theta{theta}"), data, 10, 1)
            })
            .collect(),
        Table::Noise => [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .map(|&sigma| {
                let data = DataSpec::TwoSubspaces {
                    theta: 60.0,
                    sigma,
                    n_per_cluster: 200,
                    dims: (1, 2),
                    ambient: 3,
                    law: SYNTHETIC_LAW,
                };
                let mut config = base(format!("noise_sigma{sigma}"), data, 10, 2);
                config.ksc.class_dims = [(0, 1), (1, 2)].into_iter().collect();
                config
            })
            .collect(),
        Table::Dims => [2, 4, 6, 8, 10, 12, 14, 16]
            .iter()
            .map(|&q| {
                let data = DataSpec::KSubspaces {
                    clusters: 4,
                    q,
                    ambient: 20,
                    n_per_cluster: DIMS_POINTS_PER_CLUSTER,
                    sigma: 0.01,
                    law: SYNTHETIC_LAW,
                };
                base(format!("dims_q{q}"), data, 50, q)
            })
            .collect(),
    }
}

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use wssr::active::{
    ActiveError, Alpha, ConstraintStore, GroundTruthOracle, LabelOracle, PromptOracle, QueryMode, RoundInput,
    WssrPlus, WssrPlusConfig,
};
use wssr::data_bench::{
    accuracy, load_csv, load_idx, median, pca_project, run_experiment, std_dev, table_configs, ExperimentError,
    LabelColumn, LabelledData, Table,
};
use wssr::geometry::PointCloud;
use wssr::pipeline::{run_wssr, PipelineError, WssrConfig};
use wssr::simplex_qp::QpError;
use wssr::subspace::KscOptions;

#[derive(Parser)]
#[command(name = "wssr", version, about = "Weighted sparse simplex representation subspace clustering")]
struct Cli {
    /// Plain-text `key = value` or JSON file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a dataset with WSSR.
    Cluster {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the synthetic experiment grids.
    BenchSynthetic {
        #[arg(long, value_enum)]
        table: TableArg,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Constrained clustering with labels from an oracle.
    ActiveLoop {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "ground-truth")]
        oracle: OracleArg,
        /// Percentage of points labelled in total.
        #[arg(long)]
        budget_pct: Option<f64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// `auto` or a number in [0, 1].
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Per-round JSON records go here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    /// CSV file, or IDX image file (with --labels).
    #[arg(long)]
    input: PathBuf,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// CSV label column name (last column by default).
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    pca_dim: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Number of clusters (defaults to the number of classes in the labels).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    q: Option<usize>,
    /// Subspace dimension per known class, e.g. `0:1,1:2`.
    #[arg(long)]
    class_dims: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Fail instead of keeping the best iterate of a solve that hits max_iter.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Angles,
    Noise,
    Dims,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    GroundTruth,
    Prompt,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Approx,
    Exact,
}

#[derive(Debug)]
enum Failure {
    Data(String),
    NotConverged(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::NotConverged(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Data(m) | Failure::NotConverged(m) | Failure::Other(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Solve {
                source: QpError::NotConverged { .. },
                ..
            } => Failure::NotConverged(e.to_string()),
            PipelineError::Geometry(_) => Failure::Data(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<ActiveError> for Failure {
    fn from(e: ActiveError) -> Self {
        match e {
            ActiveError::Pipeline(p) => p.into(),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Active(a) => a.into(),
            ExperimentError::Idx(_) | ExperimentError::Load(_) | ExperimentError::Geometry(_) => {
                Failure::Data(e.to_string())
            }
            other => Failure::Other(other.to_string()),
        }
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

/// Settings read from `--config`, keyed by flag name (dashes or underscores).
#[derive(Default)]
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let mut map = HashMap::new();
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let obj = value
                .as_object()
                .ok_or_else(|| Failure::Data("config JSON must be an object".into()))?;
            for (k, v) in obj {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                map.insert(k.replace('-', "_"), s);
            }
        } else {
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Failure::Data(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
                map.insert(k.trim().replace('-', "_"), v.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, Failure> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Failure::Data(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

fn load_input(input: &InputArgs, file: &FileConfig) -> Result<LabelledData, Failure> {
    let labels = match &input.labels {
        Some(l) => Some(l.clone()),
        None => file.get::<String>("labels")?.map(PathBuf::from),
    };
    let data = match labels {
        Some(labels) => load_idx(&input.input, &labels).map_err(|e| Failure::Data(e.to_string()))?,
        None => {
            let column = match input.label_column.clone().or(file.get("label_column")?) {
                Some(name) => LabelColumn::Name(name),
                None => LabelColumn::Last,
            };
            let header = !(input.no_header || file.get::<bool>("no_header")?.unwrap_or(false));
            load_csv(&input.input, &column, header).map_err(|e| Failure::Data(e.to_string()))?
        }
    };
    match file.pick(input.pca_dim, "pca_dim")? {
        Some(t) if t < data.dim() => Ok(LabelledData {
            points: pca_project(&data.points, t).0,
            labels: data.labels,
        }),
        _ => Ok(data),
    }
}

fn model_config(model: &ModelArgs, file: &FileConfig, classes: usize) -> Result<(WssrConfig, KscOptions), Failure> {
    let mut cfg = WssrConfig::default();
    cfg.clusters = file.pick(model.k, "k")?.unwrap_or(classes.max(2));
    if let Some(v) = file.pick(model.knn, "knn")? {
        cfg.knn = v;
    }
    if let Some(v) = file.pick(model.rho, "rho")? {
        cfg.rho = v;
    }
    if let Some(v) = file.pick(model.xi, "xi")? {
        cfg.xi = v;
    }
    if let Some(v) = file.pick(model.seed, "seed")? {
        cfg.spectral.seed = v;
    }
    if let Some(v) = file.pick(model.restarts, "restarts")? {
        cfg.spectral.restarts = v;
    }
    if let Some(v) = file.pick(model.max_iter, "max_iter")? {
        cfg.solver.max_iter = v;
    }
    if let Some(v) = file.pick(model.tol, "tol")? {
        cfg.solver.tol = v;
    }
    let strict = model.strict || file.get::<bool>("strict")?.unwrap_or(false);
    cfg.accept_nonconverged = !strict;
    let mut ksc = KscOptions::default();
    if let Some(q) = file.pick(model.q, "q")? {
        ksc.q = q;
    }
    if let Some(c) = file.get::<bool>("center")? {
        ksc.center = c;
    }
    if let Some(spec) = file.pick(model.class_dims.clone(), "class_dims")? {
        ksc.class_dims = parse_class_dims(&spec)?;
    }
    Ok((cfg, ksc))
}

fn parse_class_dims(spec: &str) -> Result<BTreeMap<usize, usize>, Failure> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let parsed = pair
                .split_once(':')
                .and_then(|(c, q)| Some((c.trim().parse().ok()?, q.trim().parse().ok()?)));
            match parsed {
                Some((c, q)) if q >= 1 => Ok((c, q)),
                _ => Err(Failure::Data(format!("class dims: expected class:q, got {pair:?}"))),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct ClusterReport {
    labels: Vec<usize>,
    clusters: usize,
    accuracy: Option<f64>,
    components: usize,
    disconnected_excess: bool,
    solves: wssr::pipeline::SolveDiagnostics,
    accepted: bool,
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(io_failure)?;
    match path {
        Some(p) => fs::write(p, text + "\n").map_err(io_failure),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cluster(input: &InputArgs, model: &ModelArgs, out: Option<&Path>, file: &FileConfig) -> Result<(), Failure> {
    let data = load_input(input, file)?;
    let truth = data.dense_labels();
    let (cfg, _) = model_config(model, file, data.classes().len())?;
    let cloud = PointCloud::from_columns(data.points).map_err(|e| Failure::Data(e.to_string()))?;
    let output = run_wssr(&cloud, &cfg)?;
    let labels = output.spectral.assignment.labels.clone();
    let report = ClusterReport {
        accuracy: (truth.len() == labels.len()).then(|| accuracy(&labels, &truth)),
        labels,
        clusters: cfg.clusters,
        components: output.spectral.components,
        disconnected_excess: output.spectral.disconnected_excess,
        accepted: output.diagnostics.non_converged == 0 || cfg.accept_nonconverged,
        solves: output.diagnostics,
    };
    if let Some(a) = report.accuracy {
        eprintln!("accuracy {a:.4}");
    }
    write_json(out, &report)
}

fn bench(table: TableArg, seeds: Option<usize>, out: &Path, file: &FileConfig) -> Result<(), Failure> {
    let count = file.pick(seeds, "seeds")?.unwrap_or(10);
    let seeds: Vec<u64> = (0..count as u64).collect();
    let table = match table {
        TableArg::Angles => Table::Angles,
        TableArg::Noise => Table::Noise,
        TableArg::Dims => Table::Dims,
    };
    let mut summary = Vec::new();
    for config in table_configs(table, &seeds) {
        let result = run_experiment(&config)?;
        result.save(out)?;
        eprintln!(
            "{:<20} median {:.3}  std {:.3}  ({:.1}s)",
            config.name, result.median, result.std, result.runtime_seconds
        );
        summary.push(serde_json::json!({
            "name": config.name,
            "median": result.median,
            "std": result.std,
            "runtime_seconds": result.runtime_seconds,
        }));
    }
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).map_err(io_failure)?)
        .map_err(io_failure)
}

#[allow(clippy::too_many_arguments)]
fn active_loop(
    input: &InputArgs,
    model: &ModelArgs,
    oracle_kind: OracleArg,
    budget_pct: Option<f64>,
    rounds: Option<usize>,
    alpha: Option<String>,
    mode: Option<ModeArg>,
    out: Option<&Path>,
    file: &FileConfig,
) -> Result<(), Failure> {
    let data = load_input(input, file)?;
    let truth = data.dense_labels();
    let (cfg, ksc) = model_config(model, file, data.classes().len())?;
    let pct = file.pick(budget_pct, "budget_pct")?.unwrap_or(10.0);
    let rounds = file.pick(rounds, "rounds")?.unwrap_or(10).max(1);
    let alpha = match file.pick(alpha, "alpha")?.as_deref() {
        None | Some("auto") => Alpha::Auto,
        Some(v) => Alpha::Fixed(v.parse().map_err(|_| Failure::Data(format!("alpha: cannot parse {v:?}")))?),
    };
    let mode = match mode {
        Some(ModeArg::Exact) => QueryMode::Exact,
        Some(ModeArg::Approx) => QueryMode::Approx,
        None => match file.get::<String>("mode")?.as_deref() {
            Some("exact") => QueryMode::Exact,
            _ => QueryMode::Approx,
        },
    };
    let cloud = PointCloud::from_columns(data.points).map_err(|e| Failure::Data(e.to_string()))?;
    let n = cloud.len();
    let total = ((pct / 100.0 * n as f64).round() as usize).min(n);
    let per_round = total.div_ceil(rounds).max(1);
    let plus = WssrPlusConfig { wssr: cfg, ksc, mode };
    let have_truth = matches!(oracle_kind, OracleArg::GroundTruth);
    let mut driver = WssrPlus::new(&cloud, plus, have_truth.then_some(truth.as_slice()))?;
    let (mut state, _) = driver.initial_state()?;
    let mut store = ConstraintStore::new(alpha, per_round)?;

    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).map_err(io_failure)?),
        None => Box::new(io::stdout()),
    };
    let mut truth_oracle = GroundTruthOracle(&truth);
    let stdin = io::stdin();
    let mut prompt = PromptOracle {
        input: stdin.lock(),
        output: io::stderr(),
    };
    let oracle: &mut dyn LabelOracle = match oracle_kind {
        OracleArg::GroundTruth => &mut truth_oracle,
        OracleArg::Prompt => &mut prompt,
    };
    let mut accuracies = Vec::new();
    let mut remaining = total;
    while remaining > 0 {
        let budget = per_round.min(remaining);
        let (next, diag) = driver.round(&mut store, &state, RoundInput::Active { oracle, budget })?;
        state = next;
        remaining -= budget;
        if let Some(a) = diag.accuracy {
            accuracies.push(a);
        }
        writeln!(sink, "{}", serde_json::to_string(&diag).map_err(io_failure)?).map_err(io_failure)?;
    }
    if !accuracies.is_empty() {
        eprintln!(
            "final accuracy {:.4} (median over rounds {:.4}, std {:.4})",
            accuracies[accuracies.len() - 1],
            median(&accuracies),
            std_dev(&accuracies)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Cluster { input, model, out } => cluster(&input, &model, out.as_deref(), &file),
        Command::BenchSynthetic { table, seeds, out } => bench(table, seeds, &out, &file),
        Command::ActiveLoop {
            input,
            model,
            oracle,
            budget_pct,
            rounds,
            alpha,
            mode,
            out,
        } => active_loop(&input, &model, oracle, budget_pct, rounds, alpha, mode, out.as_deref(), &file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

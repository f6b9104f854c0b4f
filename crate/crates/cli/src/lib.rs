//! Command implementations behind the `graphweight` binary.
//!
//! Each `cmd_*` function reads its inputs, writes its artifacts into an output
//! directory and returns an in-memory summary, so the commands can be driven
//! from tests without spawning a process.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use graphweight::evaluation::{
    build_report, cross_validate, sweep, EvaluationReport, FoldResult, SubcohortReport, SweepCell,
    DEFAULT_C_GRID, DEFAULT_K_GRID,
};
use graphweight::graph::{factor_basis, FactorGraph, SpectralBasis};
use graphweight::io::{self, Checkpoint};
use graphweight::linalg::DenseMatrix;
use graphweight::synth::{self, SynthCohort, SynthSpec};
use graphweight::{CohortDataset, FactorTable, MSelection, Scheme, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] graphweight::Error),
    #[error("report file: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(graphweight::Error::InvalidArgument(_)) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Training settings plus the fold count. Built from defaults, then a
/// `key = value` file, then flags of the same names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            folds: 5,
        }
    }
}

impl RunConfig {
    /// Applies one setting. Keys accept `-` or `_` as separator.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
            value
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad value '{value}' for {key}")))
        }
        let t = &mut self.train;
        match key.trim().replace('_', "-").as_str() {
            "scheme" => t.scheme = value.parse()?,
            "k" => t.k_neighbors = parse(key, value)?,
            "c" => t.centering_c = parse(key, value)?,
            "m" => t.m_basis = value.parse()?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr-model" => t.lr_model = parse(key, value)?,
            "lr-a" => t.lr_a = parse(key, value)?,
            "batch" => t.batch_size = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "jtt-lambda" => t.jtt_lambda = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "hidden2" => t.hidden2 = parse(key, value)?,
            other => return Err(CliError::Usage(format!("unknown setting '{other}'"))),
        }
        Ok(())
    }

    /// Defaults, then `config` file entries, then `overrides` in order.
    pub fn build(config: Option<&Path>, overrides: &[(&str, String)]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config {
            for (k, v) in io::parse_pairs(&fs::read_to_string(path)?)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        if cfg.folds < 2 {
            return Err(CliError::Usage("folds must be at least 2".into()));
        }
        Ok(cfg)
    }
}

fn create_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_matrix(path: &Path, m: &DenseMatrix) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub const COHORT_FILE: &str = "cohort.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Writes `cohort.csv` and `ground_truth.csv` for `spec`.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> CliResult<SynthCohort> {
    let cohort = synth::generate(spec)?;
    create_dir(out)?;
    io::write_cohort_file(&out.join(COHORT_FILE), &cohort.dataset, &cohort.factors)?;
    io::write_ground_truth(
        BufWriter::new(File::create(out.join(GROUND_TRUTH_FILE))?),
        &cohort.dataset,
        &cohort.noise_groups,
    )?;
    Ok(cohort)
}

/// Reads a synth spec file; `seed` replaces the file's seed when given.
pub fn load_synth_spec(path: Option<&Path>, seed: Option<u64>) -> CliResult<SynthSpec> {
    let mut pairs = match path {
        Some(p) => io::parse_pairs(&fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    if let Some(s) = seed {
        pairs.insert("seed".into(), s.to_string());
    }
    Ok(SynthSpec::from_pairs(&pairs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n_samples: usize,
    pub k_neighbors: usize,
    pub m_selection: MSelection,
    pub m_used: usize,
    pub null_dim: usize,
    pub eigenvalues: Vec<f64>,
}

impl GraphSummary {
    pub fn warning(&self) -> Option<String> {
        (self.null_dim > 1).then(|| {
            format!(
                "graph has {} connected components; their indicator directions are not in the basis",
                self.null_dim
            )
        })
    }
}

fn write_spectrum(path: &Path, basis: &SpectralBasis) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "eigenvalue", "null", "selected"])?;
    for (i, l) in basis.spectrum.iter().enumerate() {
        let null = i < basis.null_dim;
        let selected = !null && i - basis.null_dim < basis.m_count();
        w.write_record([
            i.to_string(),
            l.to_string(),
            null.to_string(),
            selected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn dump_graph(out: &Path, graph: &FactorGraph, basis: &SpectralBasis) -> CliResult<()> {
    write_matrix(&out.join("adjacency.csv"), &graph.adjacency)?;
    write_matrix(
        &out.join("laplacian.csv"),
        &graphweight::graph::laplacian(graph),
    )?;
    write_matrix(&out.join("basis.csv"), &basis.basis)?;
    let mut w = csv::Writer::from_path(out.join("eigenvalues.csv"))?;
    w.write_record(["j", "eigenvalue"])?;
    for (j, l) in basis.eigenvalues.iter().enumerate() {
        w.write_record([j.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn check_k(k: usize, n: usize) -> CliResult<()> {
    if k == 0 || k >= n {
        return Err(CliError::Usage(format!("k = {k} must lie in [1, {n})")));
    }
    Ok(())
}

/// Builds the factor graph and basis; writes `eigenspectrum.csv` and
/// `graph.json`, plus the raw matrices when `dump` is set.
pub fn cmd_graph(
    cohort: &Path,
    k: usize,
    m: MSelection,
    out: &Path,
    dump: bool,
) -> CliResult<GraphSummary> {
    let (_, factors) = io::read_cohort_file(cohort)?;
    check_k(k, factors.n_samples())?;
    let (graph, basis) = factor_basis(&factors, k, m)?;
    create_dir(out)?;
    write_spectrum(&out.join("eigenspectrum.csv"), &basis)?;
    if dump {
        dump_graph(out, &graph, &basis)?;
    }
    let summary = GraphSummary {
        n_samples: factors.n_samples(),
        k_neighbors: k,
        m_selection: m,
        m_used: basis.m_count(),
        null_dim: basis.null_dim,
        eigenvalues: basis.eigenvalues.clone(),
    };
    write_json(&out.join("graph.json"), &summary)?;
    Ok(summary)
}

/// Everything `cmd_report` needs, written by `cmd_train` as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub cohort: PathBuf,
    pub factor_names: Vec<String>,
    /// One row per subject, in cohort order.
    pub factor_values: Vec<Vec<f64>>,
    pub m_used: usize,
    pub folds: Vec<FoldResult>,
}

impl RunRecord {
    pub fn factor_table(&self) -> CliResult<FactorTable> {
        Ok(FactorTable::new(
            self.factor_names.clone(),
            DenseMatrix::from_rows(&self.factor_values).or_else(|e| {
                if self.factor_values.is_empty() {
                    Ok(DenseMatrix::zeros(0, self.factor_names.len()))
                } else {
                    Err(e)
                }
            })?,
        )?)
    }
}

pub const RUN_FILE: &str = "run.json";

fn load_cohort(path: &Path) -> CliResult<(CohortDataset, FactorTable)> {
    Ok(io::read_cohort_file(path)?)
}

/// Cross-validated training. Writes `weights.csv`, `predictions.csv`,
/// `manifest_fold<k>.json`, `model_fold<k>.bin` and `run.json`.
pub fn cmd_train(cohort: &Path, cfg: &RunConfig, out: &Path) -> CliResult<RunRecord> {
    let (data, factors) = load_cohort(cohort)?;
    let t = &cfg.train;
    let basis = if t.scheme.uses_graph() {
        check_k(t.k_neighbors, data.len())?;
        let (_, b) = factor_basis(&factors, t.k_neighbors, t.m_basis)?;
        Some(Arc::new(b))
    } else {
        None
    };
    let runs = cross_validate(
        &data,
        basis.clone(),
        t,
        cfg.folds,
        t.recurrent_init(data.feature_width()),
    )?;
    create_dir(out)?;
    if let Some(b) = &basis {
        write_spectrum(&out.join("eigenspectrum.csv"), b)?;
    }

    let mut weights = csv::Writer::from_path(out.join("weights.csv"))?;
    weights.write_record(["subject_id", "fold", "split", "weight"])?;
    let mut preds = csv::Writer::from_path(out.join("predictions.csv"))?;
    preds.write_record(["subject_id", "fold", "label", "probability"])?;
    for run in &runs {
        for s in &run.result.samples {
            let w = s.weight.map(|w| w.to_string()).unwrap_or_default();
            weights.write_record([
                s.subject_id.as_str(),
                &s.fold.to_string(),
                s.split.as_str(),
                &w,
            ])?;
            if let Some(p) = s.probability {
                preds.write_record([
                    s.subject_id.clone(),
                    s.fold.to_string(),
                    s.label.to_string(),
                    p.to_string(),
                ])?;
            }
        }
        write_json(
            &out.join(format!("manifest_fold{}.json", run.result.fold)),
            &run.manifest,
        )?;
        io::write_checkpoint(
            BufWriter::new(File::create(
                out.join(format!("model_fold{}.bin", run.result.fold)),
            )?),
            &Checkpoint::Recurrent(run.outcome.model.clone()),
        )?;
    }
    weights.flush()?;
    preds.flush()?;

    let record = RunRecord {
        config: cfg.clone(),
        cohort: cohort.to_path_buf(),
        factor_names: factors.names.clone(),
        factor_values: (0..factors.n_samples())
            .map(|i| factors.values.row(i).to_vec())
            .collect(),
        m_used: basis.as_ref().map_or(0, |b| b.m_count()),
        folds: runs.into_iter().map(|r| r.result).collect(),
    };
    write_json(&out.join(RUN_FILE), &record)?;
    Ok(record)
}

fn write_subcohort_csv(path: &Path, table: &SubcohortReport) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "lower", "upper", "n", "mean_weight", "bacc"])?;
    for g in &table.groups {
        w.write_record([
            g.group.clone(),
            g.lower.to_string(),
            g.upper.to_string(),
            g.n.to_string(),
            g.mean_weight.map(|w| w.to_string()).unwrap_or_default(),
            g.bacc.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `run.json` from `run_dir`; writes `report.json` and one
/// `subcohorts_<factor>.csv` per factor.
pub fn cmd_report(run_dir: &Path) -> CliResult<EvaluationReport> {
    let record: RunRecord = read_json(&run_dir.join(RUN_FILE))?;
    let factors = record.factor_table()?;
    let report = build_report(record.config.train.scheme, &record.folds, Some(&factors))?;
    write_json(&run_dir.join("report.json"), &report)?;
    for table in &report.subcohorts {
        write_subcohort_csv(
            &run_dir.join(format!("subcohorts_{}.csv", table.factor)),
            table,
        )?;
    }
    Ok(report)
}

/// Spectral cross-validation over the `ks × cs` grid; writes `sweep_grid.csv`.
pub fn cmd_sweep(
    cohort: &Path,
    ks: &[usize],
    cs: &[f64],
    cfg: &RunConfig,
    out: &Path,
) -> CliResult<Vec<SweepCell>> {
    let (data, factors) = load_cohort(cohort)?;
    for &k in ks {
        check_k(k, data.len())?;
    }
    let t = TrainConfig {
        scheme: Scheme::Spectral,
        ..cfg.train.clone()
    };
    let cells = sweep(
        &data,
        &factors,
        ks,
        cs,
        &t,
        cfg.folds,
        t.recurrent_init(data.feature_width()),
    )?;
    create_dir(out)?;
    let mut w = csv::Writer::from_path(out.join("sweep_grid.csv"))?;
    w.write_record([
        "k",
        "c",
        "seed",
        "m_used",
        "gap_percent",
        "gap_points",
        "degenerate",
        "bacc_mean",
    ])?;
    for cell in &cells {
        w.write_record([
            cell.k.to_string(),
            cell.c.to_string(),
            cell.seed.to_string(),
            cell.m_used.to_string(),
            cell.gap_percent.to_string(),
            cell.gap_points.to_string(),
            cell.degenerate.to_string(),
            cell.bacc_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(cells)
}

/// Comma-separated list; empty input yields `default`.
pub fn parse_list<T: std::str::FromStr + Copy>(
    text: Option<&str>,
    default: &[T],
    name: &str,
) -> CliResult<Vec<T>> {
    match text {
        None => Ok(default.to_vec()),
        Some(s) => s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad {name} entry '{x}'")))
            })
            .collect(),
    }
}

pub fn default_k_grid() -> Vec<usize> {
    DEFAULT_K_GRID.to_vec()
}

pub fn default_c_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}

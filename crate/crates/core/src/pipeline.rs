//! File-based pipeline stages behind the `cocoon` binary.
//!
//! Every stage reads its inputs from, and writes its outputs to, one output
//! directory:
//!
//! | stage     | reads                                   | writes                                   |
//! |-----------|-----------------------------------------|------------------------------------------|
//! | `synth`   |                                         | `events.csv`, `ground_truth.csv`, `categories.csv`, `genres.csv`, `covariates.csv` |
//! | `ingest`  | event log, category tables, covariates  | `corpus.bin`                             |
//! | `train`   | `corpus.bin`                            | `space.tsv`, `train_log.csv`             |
//! | `metrics` | `corpus.bin`, `space.tsv`               | `metrics.csv`, `projection.csv`          |
//! | `null`    | `corpus.bin`                            | `null_ensemble/`                         |
//! | `test`    | `metrics.csv`, `null_ensemble/`         | `cocoon_test.json`, `radius_hist.csv`    |
//! | `regress` | `metrics.csv`                           | `regression.csv`                         |
//! | `report`  | `metrics.csv`, `cocoon_test.json`, `regression.csv` | `summary.json`               |

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_category_map, load_covariates, parse_event_log, write_category_map, Corpus, LogFormat};
use crate::embedding::{normalize_space, train_model, EmbeddingSpace, TrainingConfig};
use crate::error::{Error, Result};
use crate::geometry::{compute_metrics, project, write_metrics_csv, Distance, MetricOptions};
use crate::nullmodel::{build_null_ensemble, cocoon_report, write_radius_histogram, CocoonReport, NullConfig};
use crate::stats::{describe, ols_fit};
use crate::synth::{generate_corpus, write_covariates, SynthParams};

pub const EVENTS: &str = "events.csv";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const CATEGORIES: &str = "categories.csv";
pub const GENRES: &str = "genres.csv";
pub const COVARIATES: &str = "covariates.csv";
pub const CORPUS: &str = "corpus.bin";
pub const SPACE: &str = "space.tsv";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS: &str = "metrics.csv";
pub const PROJECTION: &str = "projection.csv";
pub const NULL_DIR: &str = "null_ensemble";
pub const EXPECTED: &str = "expected.csv";
pub const NULL_MANIFEST: &str = "manifest.json";
pub const COCOON_TEST: &str = "cocoon_test.json";
pub const RADIUS_HIST: &str = "radius_hist.csv";
pub const REGRESSION: &str = "regression.csv";
pub const SUMMARY: &str = "summary.json";

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "COCOON_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Train,
    Metrics,
    Null,
    Test,
    Regress,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Train,
        Stage::Metrics,
        Stage::Null,
        Stage::Test,
        Stage::Regress,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Metrics => "metrics",
            Stage::Null => "null",
            Stage::Test => "test",
            Stage::Regress => "regress",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand `{s}`")))
    }
}

/// Synthetic corpus recipes available to the `synth` stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SynthPreset {
    #[default]
    Cocoon,
    TwoBlock,
}

impl FromStr for SynthPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cocoon" => Ok(SynthPreset::Cocoon),
            "two_block" => Ok(SynthPreset::TwoBlock),
            other => Err(Error::Config(format!("unknown synth preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Event log; defaults to `events.csv` in the output directory.
    pub events: Option<PathBuf>,
    /// `item_id,category`; defaults to `categories.csv` in the output directory when present.
    pub categories: Option<PathBuf>,
    /// `category,is_entertainment`; defaults to `genres.csv` in the output directory when present.
    pub genres: Option<PathBuf>,
    /// `user_id,<name>...`; defaults to `covariates.csv` in the output directory when present.
    pub covariates: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub training: TrainingConfig,
    /// Null-model repetitions.
    pub reps: usize,
    pub distance: Distance,
    pub consumed_only: bool,
    pub synth_preset: SynthPreset,
    /// Histogram bins for `radius_hist.csv`.
    pub bins: usize,
    pub dv: String,
    pub iv: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            events: None,
            categories: None,
            genres: None,
            covariates: None,
            output_dir: PathBuf::from("cocoon_out"),
            training: TrainingConfig::default(),
            reps: NullConfig::default().reps,
            distance: Distance::Euclidean,
            consumed_only: false,
            synth_preset: SynthPreset::Cocoon,
            bins: 20,
            dv: "range".into(),
            iv: vec!["class_proxy".into()],
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("invalid value `{value}` for `{key}`: {e}")))
        }
        let t = &mut self.training;
        match key {
            "events" => self.events = Some(value.into()),
            "categories" => self.categories = Some(value.into()),
            "genres" => self.genres = Some(value.into()),
            "covariates" => self.covariates = Some(value.into()),
            "output_dir" | "out" => self.output_dir = value.into(),
            "dim" => t.dim = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "min_count" => t.min_count = parse(key, value)?,
            "negative" => t.negative = parse(key, value)?,
            "window" => t.window = parse(key, value)?,
            "lr_start" => t.lr_start = parse(key, value)?,
            "lr_end" => t.lr_end = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "workers" => t.workers = parse(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "distance" => self.distance = parse(key, value)?,
            "consumed_only" => self.consumed_only = parse(key, value)?,
            "synth_preset" => self.synth_preset = parse(key, value)?,
            "bins" => self.bins = parse(key, value)?,
            "dv" => self.dv = value.to_owned(),
            "iv" => self.iv = split_list(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies the seed from [`SEED_ENV`] when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            self.training.seed = value
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}=`{value}`: {e}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.bins < 1 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions { distance: self.distance, consumed_only: self.consumed_only }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Comma-separated names, blanks dropped.
pub fn split_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

/// Runs one stage and returns the files it wrote.
pub fn run(stage: Stage, config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    match stage {
        Stage::Synth => synth(config),
        Stage::Ingest => ingest(config),
        Stage::Train => train(config),
        Stage::Metrics => metrics(config),
        Stage::Null => null(config),
        Stage::Test => test(config),
        Stage::Regress => regress(config),
        Stage::Report => report(config),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_owned())),
        Err(e) => Err(e.into()),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(path.to_owned())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Uses `configured` when given, else `name` in the output directory if it
/// exists.
fn optional_input(config: &PipelineConfig, configured: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    configured.clone().or_else(|| Some(config.path(name)).filter(|p| p.exists()))
}

fn load_corpus(config: &PipelineConfig) -> Result<Corpus> {
    Corpus::read_binary(open(&config.path(CORPUS))?)
}

fn load_space(config: &PipelineConfig) -> Result<EmbeddingSpace> {
    EmbeddingSpace::read_tsv(open(&config.path(SPACE))?)
}

fn synth(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let seed = config.training.seed;
    let params = match config.synth_preset {
        SynthPreset::Cocoon => SynthParams::cocoon(seed),
        SynthPreset::TwoBlock => SynthParams::two_block(seed),
    };
    let (corpus, truth) = generate_corpus(&params)?;
    let mut out = Vec::new();
    out.push(write_file(&config.path(EVENTS), |w| crate::corpus::write_event_log(w, corpus.events()))?);
    out.push(write_file(&config.path(GROUND_TRUTH), |w| truth.write_csv(w))?);
    let categories = config.path(CATEGORIES);
    let genres = config.path(GENRES);
    write_category_map(
        &corpus.category_map,
        BufWriter::new(File::create(&categories)?),
        BufWriter::new(File::create(&genres)?),
    )?;
    out.push(categories);
    out.push(genres);
    out.push(write_file(&config.path(COVARIATES), |w| write_covariates(w, &corpus))?);
    Ok(out)
}

fn ingest(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let events = config.events.clone().unwrap_or_else(|| config.path(EVENTS));
    let format = if events.extension().is_some_and(|e| e == "jsonl" || e == "json") {
        LogFormat::Jsonl
    } else {
        LogFormat::Csv
    };
    let mut corpus = parse_event_log(open(&events)?, format)?;
    let categories = optional_input(config, &config.categories, CATEGORIES);
    let genres = optional_input(config, &config.genres, GENRES);
    match (categories, genres) {
        (Some(c), Some(g)) => corpus.set_category_map(load_category_map(open(&c)?, open(&g)?)?),
        // Categories may come from the event rows alone.
        (None, Some(g)) => corpus.set_category_map(load_category_map("item_id,category\n".as_bytes(), open(&g)?)?),
        (Some(c), None) => return Err(Error::MissingArtifact(config.genres.clone().unwrap_or_else(|| c.with_file_name(GENRES)))),
        (None, None) => {}
    }
    if let Some(path) = optional_input(config, &config.covariates, COVARIATES) {
        corpus.set_covariates(load_covariates(open(&path)?)?);
    }
    let path = config.path(CORPUS);
    Ok(vec![write_file(&path, |w| corpus.write_binary(w))?])
}

fn train(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(config)?;
    let trained = train_model(&corpus, &config.training)?;
    let space = trained.space();
    let mut out = vec![write_file(&config.path(SPACE), |w| space.write_tsv(w))?];
    out.push(write_file(&config.path(TRAIN_LOG), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "mean_loss"])?;
        for (e, loss) in trained.epoch_losses.iter().enumerate() {
            csv.write_record([(e + 1).to_string(), format!("{loss:.10}")])?;
        }
        csv.flush()?;
        Ok(())
    })?);
    Ok(out)
}

fn metrics(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(config)?;
    let space = normalize_space(&load_space(config)?)?;
    let metrics = compute_metrics(&corpus, &space, config.metric_options())?;
    let mut out = vec![write_file(&config.path(METRICS), |w| write_metrics_csv(w, &metrics))?];
    out.push(write_file(&config.path(PROJECTION), |w| project(&space, 2)?.write_csv(w))?);
    Ok(out)
}

/// Written next to the ensemble spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullManifest {
    #[serde(rename = "R")]
    pub reps: usize,
    pub seed: u64,
    pub infeasible_count: usize,
    pub fallback_shuffles: usize,
    pub mean_coefficient_of_variation: Option<f64>,
    pub spaces: Vec<String>,
}

fn null(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(config)?;
    let null_config = NullConfig { reps: config.reps, seed: config.training.seed, metrics: config.metric_options() };
    let ensemble = build_null_ensemble(&corpus, &config.training, &null_config)?;
    let dir = config.path(NULL_DIR);
    fs::create_dir_all(&dir)?;
    let mut out = Vec::new();
    let mut names = Vec::new();
    for (r, space) in ensemble.spaces.iter().enumerate() {
        let name = format!("space_{r:03}.tsv");
        out.push(write_file(&dir.join(&name), |w| space.write_tsv(w))?);
        names.push(name);
    }
    out.push(write_file(&dir.join(EXPECTED), |w| ensemble.write_expected_csv(w))?);
    let manifest = NullManifest {
        reps: ensemble.reps(),
        seed: null_config.seed,
        infeasible_count: ensemble.infeasible_count(),
        fallback_shuffles: ensemble.fallback_shuffles,
        mean_coefficient_of_variation: ensemble.mean_coefficient_of_variation(),
        spaces: names,
    };
    out.push(write_json(&dir.join(NULL_MANIFEST), &manifest)?);
    Ok(out)
}

fn test(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let metrics = NumericTable::read(open(&config.path(METRICS))?)?;
    let radius = metrics.column("r_g")?;
    let observed: HashMap<String, f64> = metrics
        .ids
        .iter()
        .zip(radius)
        .filter_map(|(id, r)| r.map(|r| (id.clone(), r)))
        .collect();
    let dir = config.path(NULL_DIR);
    let manifest: NullManifest = serde_json::from_reader(open(&dir.join(NULL_MANIFEST))?)?;
    let (ids, expected) = read_expected(open(&dir.join(EXPECTED))?)?;
    let (report, obs, exp) = cocoon_report(&observed, &ids, &expected, manifest.reps)?;
    let mut out = vec![write_json(&config.path(COCOON_TEST), &report)?];
    out.push(write_file(&config.path(RADIUS_HIST), |w| write_radius_histogram(w, &obs, &exp, config.bins))?);
    Ok(out)
}

fn read_expected<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Option<f64>>)> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    let mut expected = Vec::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        ids.push(row.get(0).unwrap_or("").to_owned());
        let cell = row.get(1).unwrap_or("");
        expected.push(if cell.is_empty() {
            None
        } else {
            Some(cell.parse().map_err(|e| Error::Malformed { line, message: format!("expected_r_g: {e}") })?)
        });
    }
    Ok((ids, expected))
}

fn regress(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if config.iv.is_empty() {
        return Err(Error::Config("regression needs at least one independent variable".into()));
    }
    let table = NumericTable::read(open(&config.path(METRICS))?)?;
    let y = table.column(&config.dv)?;
    let xs: Vec<&[Option<f64>]> = config.iv.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    // Listwise deletion of rows with a missing cell.
    let mut design = Vec::new();
    let mut response = Vec::new();
    for (r, yv) in y.iter().enumerate() {
        let row: Option<Vec<f64>> = xs.iter().map(|col| col[r]).collect();
        if let (Some(yv), Some(row)) = (yv, row) {
            design.push(row);
            response.push(*yv);
        }
    }
    let names: Vec<&str> = config.iv.iter().map(String::as_str).collect();
    let fit = ols_fit(&design, &response, &names)?;
    Ok(vec![write_file(&config.path(REGRESSION), |w| fit.write_table(w))?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub variable: String,
    #[serde(rename = "B")]
    pub estimate: f64,
    #[serde(rename = "SE")]
    pub std_error: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub users: usize,
    pub metrics: BTreeMap<String, ColumnSummary>,
    pub cocoon_test: CocoonReport,
    pub regression: Vec<RegressionRow>,
    #[serde(rename = "regression_N")]
    pub regression_n: Option<usize>,
    #[serde(rename = "regression_R2")]
    pub regression_r2: Option<f64>,
}

fn report(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let table = NumericTable::read(open(&config.path(METRICS))?)?;
    let cocoon_test: CocoonReport = serde_json::from_reader(open(&config.path(COCOON_TEST))?)?;
    let mut csv = csv::Reader::from_reader(open(&config.path(REGRESSION))?);
    let mut regression = Vec::new();
    let (mut n, mut r2) = (None, None);
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::Malformed { line, message: format!("regression table: {e}") })
        };
        regression.push(RegressionRow {
            variable: row.get(0).unwrap_or("").to_owned(),
            estimate: num(1)?,
            std_error: num(2)?,
            stars: row.get(3).unwrap_or("").to_owned(),
        });
        n = Some(num(4)? as usize);
        r2 = Some(num(5)?);
    }
    let mut metrics = BTreeMap::new();
    for (c, name) in table.headers.iter().enumerate() {
        let values: Vec<f64> = table.rows.iter().filter_map(|r| r[c]).collect();
        if let Ok(d) = describe(&values) {
            metrics.insert(name.clone(), ColumnSummary { n: d.n, mean: d.mean, sd: d.sd });
        }
    }
    let summary = Summary {
        users: table.ids.len(),
        metrics,
        cocoon_test,
        regression,
        regression_n: n,
        regression_r2: r2,
    };
    Ok(vec![write_json(&config.path(SUMMARY), &summary)?])
}

/// A CSV table keyed by its first column, with numeric (or empty) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub ids: Vec<String>,
    /// Names of the numeric columns (the id column excluded).
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    columns: Vec<Vec<Option<f64>>>,
}

impl NumericTable {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers: Vec<String> = csv.headers()?.iter().skip(1).map(str::to_owned).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for row in csv.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            ids.push(row.get(0).unwrap_or("").to_owned());
            let values = row
                .iter()
                .skip(1)
                .zip(&headers)
                .map(|(cell, name)| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::Malformed { line, message: format!("column `{name}`: {e}") })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(values);
        }
        let columns = (0..headers.len())
            .map(|c| rows.iter().map(|r| r.get(c).copied().flatten()).collect())
            .collect();
        Ok(Self { ids, headers, rows, columns })
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|c| self.columns[c].as_slice())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no column `{name}`; available: {}", self.headers.join(", ")))
            })
    }
}

//! Command-line front end: one subcommand per pipeline stage. Stages hand
//! off through files with fixed names under `--out`.

mod config;

pub use config::{EvalSection, ModelSection, PathsConfig, RunConfig};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::data_io::{
    load_manifest, split_cohort, CohortManifest, CohortSplit, Modality, MANIFEST_FILE,
};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, ErrorClass, Result};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::phenotype::{score_cohort, DiseaseVector, ScoreTable};
use crate::pipeline::{derive_vectors, embed_modality, train_modality};
use crate::report::{render_report_card, report_from_scores};
use crate::scalar::{Precision, Scalar};
use crate::ssl::{LossReport, TrainOptions, TRAIN_LOG_HEADER};
use crate::stats::{evaluate_grid, odds_ratio_csv, odds_ratio_report, GridOptions, PredictorSet};
use crate::synth::write_cohort;

pub const THREADS_ENV: &str = "PSGP_THREADS";
pub const SPLIT_FILE: &str = "split.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const ODDS_RATIO_FILE: &str = "odds_ratios.csv";
pub const VECTOR_DIR: &str = "vectors";

pub fn checkpoint_file(m: Modality) -> String {
    format!("checkpoint_{m}.psgm")
}

pub fn embeddings_file(m: Modality) -> String {
    format!("embeddings_{m}.psge")
}

pub fn vector_file(outcome: &str, m: Modality) -> String {
    format!("{outcome}_{m}.txt")
}

pub fn report_file(subject: &str) -> String {
    format!("report_{subject}.txt")
}

#[derive(Debug, Parser)]
#[command(
    name = "psgrisk",
    version,
    about = "Self-supervised PSG embeddings and disease risk scores"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seeds the split, the synthetic cohort and training
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Cohort directory with manifest.csv and signals/ (default: --out).
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Worker threads for data-parallel sections (fallback: PSGP_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Comma-separated modalities, e.g. ECG,RESP.
    #[arg(long, global = true, value_delimiter = ',')]
    pub modalities: Option<Vec<Modality>>,
    /// Comma-separated outcomes (default: all in the manifest).
    #[arg(long, global = true, value_delimiter = ',')]
    pub outcomes: Option<Vec<String>>,
    /// Z-score logistic predictors before fitting.
    #[arg(long, global = true)]
    pub standardize: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with planted signatures.
    Synth,
    /// Self-supervised training of one backbone per modality.
    Train,
    /// Embed every segment with the trained backbones.
    Embed,
    /// Derive disease vectors from training-split embeddings.
    Vectors,
    /// Project embeddings onto disease vectors and score subjects.
    Score,
    /// Adjusted odds ratios of each score on the test split.
    Fit,
    /// AUC grid of the standard predictor sets.
    Eval,
    /// Risk card for one subject.
    Report {
        #[arg(long)]
        subject: String,
        #[arg(long, default_value = "ECG")]
        modality: Modality,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Embed => "embed",
            Command::Vectors => "vectors",
            Command::Score => "score",
            Command::Fit => "fit",
            Command::Eval => "eval",
            Command::Report { .. } => "report",
        }
    }
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

/// Parses argv, runs the subcommand and returns the process exit code.
/// Failures print one `psgrisk: error[<class>]: <message>` line to stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!(
                "psgrisk: error[usage]: {}",
                first.trim_start_matches("error: ")
            );
            return exit_code(ErrorClass::Usage);
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            eprintln!(
                "psgrisk: error[{}]: {}",
                class_name(class),
                config::one_line(&e.to_string())
            );
            exit_code(class)
        }
    }
}

/// File config, then flags, then the environment thread fallback.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Some(data) = &cli.data {
        cfg.paths.data = Some(data.clone());
    }
    if let Some(m) = &cli.modalities {
        cfg.modalities = m.clone();
    }
    if let Some(o) = &cli.outcomes {
        cfg.outcomes = o.clone();
    }
    if cli.standardize {
        cfg.eval.standardize = true;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    } else if let Ok(v) = std::env::var(THREADS_ENV) {
        let t = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        cfg.threads = Some(t);
    }
    cfg.ssl.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
    cfg.modalities.sort();
    cfg.modalities.dedup();
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let Some(out) = cfg.paths.out.clone() else {
        return Err(Error::InvalidArgument("--out is required".into()));
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let ctx = Context { cfg, out };
    pool.install(|| ctx.dispatch(&cli.command))
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
}

/// Rejects names that would escape their directory when used in a file name.
fn file_component(name: &str) -> Result<&str> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::InvalidArgument(format!(
            "{name:?} cannot be used in a file name"
        )));
    }
    Ok(name)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput(path))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Context {
    fn dispatch(&self, command: &Command) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        match command {
            Command::Synth => self.synth()?,
            Command::Train => self.by_precision(Self::train::<f32>, Self::train::<f64>)?,
            Command::Embed => self.by_precision(Self::embed::<f32>, Self::embed::<f64>)?,
            Command::Vectors => self.by_precision(Self::vectors::<f32>, Self::vectors::<f64>)?,
            Command::Score => self.by_precision(Self::score::<f32>, Self::score::<f64>)?,
            Command::Fit => self.fit()?,
            Command::Eval => self.eval()?,
            Command::Report { subject, modality } => self.report(subject, *modality)?,
        }
        let snapshot = self.out.join(format!("config_{}.toml", command.name()));
        write_text(&snapshot, &self.cfg.to_toml()?)
    }

    fn by_precision(
        &self,
        single: fn(&Self) -> Result<()>,
        double: fn(&Self) -> Result<()>,
    ) -> Result<()> {
        match self.cfg.model.precision()? {
            Precision::F32 => single(self),
            Precision::F64 => double(self),
        }
    }

    fn data_dir(&self) -> &Path {
        self.cfg.paths.data.as_deref().unwrap_or(&self.out)
    }

    fn manifest(&self) -> Result<CohortManifest> {
        load_manifest(require(self.data_dir().join(MANIFEST_FILE))?)
    }

    fn split(&self) -> Result<CohortSplit> {
        let path = require(self.out.join(SPLIT_FILE))?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        CohortSplit::parse_csv(&text, self.cfg.seed)
    }

    fn outcomes(&self, manifest: &CohortManifest) -> Result<Vec<String>> {
        if self.cfg.outcomes.is_empty() {
            return Ok(manifest.outcomes().to_vec());
        }
        for o in &self.cfg.outcomes {
            if manifest.outcome_index(o).is_none() {
                return Err(Error::UnknownOutcome(o.clone()));
            }
        }
        Ok(self.cfg.outcomes.clone())
    }

    fn checkpoint_path(&self, m: Modality) -> PathBuf {
        self.cfg
            .paths
            .checkpoint
            .as_deref()
            .unwrap_or(&self.out)
            .join(checkpoint_file(m))
    }

    fn vector_dir(&self) -> PathBuf {
        self.cfg
            .paths
            .vectors
            .clone()
            .unwrap_or_else(|| self.out.join(VECTOR_DIR))
    }

    fn scores_path(&self) -> PathBuf {
        self.cfg
            .paths
            .scores
            .clone()
            .unwrap_or_else(|| self.out.join(SCORES_FILE))
    }

    fn scores(&self) -> Result<ScoreTable<f64>> {
        ScoreTable::load(require(self.scores_path())?)
    }

    fn grid_options(&self) -> GridOptions {
        GridOptions {
            standardize: self.cfg.eval.standardize,
            ..GridOptions::default()
        }
    }

    fn synth(&self) -> Result<()> {
        let mut synth = self.cfg.synth.clone();
        synth.modalities = self.cfg.modalities.clone();
        write_cohort(&synth, &self.out)?;
        Ok(())
    }

    fn train<T: Scalar>(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let split = split_cohort(&manifest, self.cfg.eval.train_ratio, self.cfg.seed)?;
        write_text(&self.out.join(SPLIT_FILE), &split.to_csv_string())?;
        for &m in &self.cfg.modalities {
            let config = self.cfg.model.model_config(m)?;
            let start = Instant::now();
            let mut log = format!("{TRAIN_LOG_HEADER}\n");
            let mut on_step = |r: &LossReport| {
                log.push_str(&r.log_line(start.elapsed().as_millis()));
                log.push('\n');
            };
            let options = TrainOptions {
                failure_checkpoint: Some(self.out.join(format!("checkpoint_{m}.failed.psgm"))),
                init: None,
                on_step: Some(&mut on_step),
            };
            let result =
                train_modality::<T>(self.data_dir(), &split, &config, &self.cfg.ssl, options);
            write_text(&self.out.join(format!("train_log_{m}.csv")), &log)?;
            save_checkpoint(&result?.params, &config, self.out.join(checkpoint_file(m)))?;
        }
        Ok(())
    }

    fn embed<T: Scalar>(&self) -> Result<()> {
        let manifest = self.manifest()?;
        for &m in &self.cfg.modalities {
            let (params, config) = load_checkpoint::<T>(require(self.checkpoint_path(m))?)?;
            if config.modality != m {
                return Err(Error::Schema(format!(
                    "{} holds a {} model",
                    checkpoint_file(m),
                    config.modality
                )));
            }
            let store = embed_modality(self.data_dir(), &manifest, &params, &config)?;
            store.save(self.out.join(embeddings_file(m)))?;
        }
        Ok(())
    }

    fn vectors<T: Scalar>(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let split = self.split()?;
        let outcomes = self.outcomes(&manifest)?;
        let dir = self.out.join(VECTOR_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for &m in &self.cfg.modalities {
            let store = EmbeddingStore::<T>::load(require(self.out.join(embeddings_file(m)))?)?;
            for v in derive_vectors(&store, &manifest, &split.train_ids, &outcomes, m)? {
                v.save(dir.join(vector_file(file_component(&v.outcome)?, m)))?;
            }
        }
        Ok(())
    }

    fn score<T: Scalar>(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let outcomes = self.outcomes(&manifest)?;
        let mut store: Option<EmbeddingStore<T>> = None;
        for &m in &self.cfg.modalities {
            let s = EmbeddingStore::<T>::load(require(self.out.join(embeddings_file(m)))?)?;
            match &mut store {
                Some(all) => all.extend(s)?,
                None => store = Some(s),
            }
        }
        let store = store.expect("at least one modality");
        let dir = self.vector_dir();
        let mut vectors = Vec::new();
        for o in &outcomes {
            for &m in &self.cfg.modalities {
                let path = require(dir.join(vector_file(file_component(o)?, m)))?;
                let v = DiseaseVector::<T>::load(&path)?;
                if v.outcome != *o || v.modality != m {
                    return Err(Error::Schema(format!(
                        "{} holds the {} / {} vector",
                        path.display(),
                        v.outcome,
                        v.modality
                    )));
                }
                vectors.push(v);
            }
        }
        score_cohort(&store, &vectors, &manifest)?.save(self.out.join(SCORES_FILE))
    }

    fn fit(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let split = self.split()?;
        let outcomes = self.outcomes(&manifest)?;
        let rows = odds_ratio_report(
            &self.scores()?,
            &manifest,
            &split.test_ids,
            &outcomes,
            &self.cfg.modalities,
            self.grid_options(),
        )?;
        write_text(&self.out.join(ODDS_RATIO_FILE), &odds_ratio_csv(&rows))
    }

    fn eval(&self) -> Result<()> {
        for &m in &self.cfg.modalities {
            require(self.checkpoint_path(m))?;
        }
        let scores = self.scores()?;
        let manifest = self.manifest()?;
        let split = self.split()?;
        let outcomes = self.outcomes(&manifest)?;
        let grid = evaluate_grid(
            &scores,
            &manifest,
            &split,
            &PredictorSet::standard(),
            &outcomes,
            self.grid_options(),
        )?;
        grid.save(self.out.join(GRID_FILE))
    }

    fn report(&self, subject: &str, modality: Modality) -> Result<()> {
        let manifest = self.manifest()?;
        let split = self.split()?;
        let outcomes = self.outcomes(&manifest)?;
        let card = report_from_scores(
            &self.scores()?,
            &manifest,
            &split.train_ids,
            subject,
            modality,
            &outcomes,
        )?;
        let text = render_report_card(&card);
        write_text(&self.out.join(report_file(file_component(subject)?)), &text)?;
        print!("{text}");
        Ok(())
    }
}

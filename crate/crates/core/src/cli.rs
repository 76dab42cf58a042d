//! Command-line pipeline: simulate, generate, sample, baseline, score, report.
//!
//! Every stage draws its seed from the global seed as
//! `derive_seed(seed, "<stage>")`, so a stage can be rerun on its own and
//! still reproduce the artifact of a full run. Global flags can also be set
//! through `ORBENCH_SEED`, `ORBENCH_THREADS` and `ORBENCH_CONFIG`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::distill::{crop_weights, distill_loss, distill_loss_grad, LogitMatrix, Matrix};
use crate::domain::{derive_seed, TaskKind};
use crate::ingest::{simulate_procedures, write_annotations, AnnotationReader, SimulatorConfig};
use crate::io::{read_predictions, read_qa_file, write_predictions, QaHeader, QaReader, QaWriter};
use crate::memory::{render_memory, MemoryTracker};
use crate::qagen::{generate_stream, GenConfig};
use crate::sampler::{Allocation, FrequencyTable, SampleSpec, Sampler, Split};
use crate::scorer::{score_benchmark, BaselinePredictor, Hierarchy, Prediction, ScoreOptions, ScoreReport, Stat};

/// Structured error written to stderr as one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub stage: String,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            stage: stage.to_string(),
            message: e.to_string(),
        })
    }
}

fn with_path<T, E: std::fmt::Display>(r: Result<T, E>, stage: &str, path: &Path) -> Result<T, CliError> {
    r.map_err(|e| CliError {
        stage: stage.to_string(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Scorer settings in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub hierarchy: Hierarchy,
    pub n_resamples: usize,
    pub level: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let d = ScoreOptions::default();
        Self {
            hierarchy: d.hierarchy,
            n_resamples: d.n_resamples,
            level: d.level,
        }
    }
}

/// Whole-pipeline configuration. Stage `seed` fields are replaced by seeds
/// derived from the global one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub simulator: SimulatorConfig,
    pub generation: GenConfig,
    pub sampling: SampleSpec,
    pub scoring: ScoringConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = with_path(fs::read_to_string(path), "config", path)?;
        with_path(serde_json::from_str(&text), "config", path)
    }

    /// Push stage-derived seeds into every stage config.
    pub fn seeded(mut self) -> Self {
        self.simulator.seed = derive_seed(self.seed, "simulate");
        self.generation.seed = derive_seed(self.seed, "generate");
        self.sampling.seed = derive_seed(self.seed, "sample");
        self
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            hierarchy: self.scoring.hierarchy,
            n_resamples: self.scoring.n_resamples,
            level: self.scoring.level,
            seed: derive_seed(self.seed, "score"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "orbench", version, about = "Operating-room QA benchmark toolkit")]
pub struct Cli {
    /// Global seed; every stage derives its own from it.
    #[arg(long, global = true, env = "ORBENCH_SEED")]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true, env = "ORBENCH_THREADS")]
    pub threads: Option<usize>,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true, env = "ORBENCH_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic annotation file.
    Simulate(SimulateArgs),
    /// Generate QA pairs from annotation files.
    Generate(GenerateArgs),
    /// Diversity-sample a QA file into train/val/test.
    Sample(SampleArgs),
    /// Fit the most-frequent-answer baseline and predict a benchmark.
    Baseline(BaselineArgs),
    /// Score predictions against a benchmark.
    Score(ScoreArgs),
    /// Render a score file as a per-task table.
    Report(ReportArgs),
    /// Distillation loss between teacher and student logit matrices.
    DistillLoss(DistillArgs),
    /// Top-left crop of a weight matrix.
    Crop(CropArgs),
    /// Full pipeline into one directory.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_clips: Option<usize>,
    #[arg(long)]
    pub timepoints: Option<usize>,
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long = "annotations", required = true, num_args = 1..)]
    pub annotations: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Attach rendered memory with this short-term length as context.
    #[arg(long)]
    pub memory_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub train: Option<u64>,
    #[arg(long)]
    pub val: Option<u64>,
    #[arg(long)]
    pub test: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub allocation: Option<AllocationArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AllocationArg {
    EqualPerGroup,
    Proportional,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub hierarchy: Option<HierarchyArg>,
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HierarchyArg {
    Equal,
    Flat,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub score: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
    /// Standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Also write the gradient with respect to the student logits.
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    Ok(cfg.seeded())
}

/// Parse arguments, run, and return the process exit code. Errors go to
/// stderr as `{"error": {"stage", "message"}}`.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let record = serde_json::json!({ "error": e });
            eprintln!("{record}");
            1
        }
    }
}

pub fn run_cli(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if let Some(n) = cfg.threads {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => {
            let mut sim = cfg.simulator.clone();
            if let Some(n) = a.n_clips {
                sim.n_clips = n;
            }
            if let Some(n) = a.timepoints {
                sim.timepoints_per_clip = n;
            }
            if let Some(d) = &a.dataset {
                sim.dataset = d.clone();
            }
            cmd_simulate(&sim, &a.out).map(|_| ())
        }
        Command::Generate(a) => {
            let k = a.memory_k.or(cfg.memory_k);
            cmd_generate(&a.annotations, &a.out, &cfg.generation, k).map(|_| ())
        }
        Command::Sample(a) => {
            let mut spec = cfg.sampling.clone();
            if let Some(v) = a.train {
                spec.train = v;
            }
            if let Some(v) = a.val {
                spec.val = v;
            }
            if let Some(v) = a.test {
                spec.test = v;
            }
            if let Some(v) = a.alpha {
                spec.alpha = v;
            }
            if let Some(v) = a.beta {
                spec.beta = v;
            }
            if let Some(v) = a.allocation {
                spec.allocation = match v {
                    AllocationArg::EqualPerGroup => Allocation::EqualPerGroup,
                    AllocationArg::Proportional => Allocation::Proportional,
                };
            }
            cmd_sample(&a.pairs, &a.out_dir, &spec).map(|_| ())
        }
        Command::Baseline(a) => cmd_baseline(&a.train, &a.test, &a.out),
        Command::Score(a) => {
            let mut opts = cfg.score_options();
            if let Some(h) = a.hierarchy {
                opts.hierarchy = match h {
                    HierarchyArg::Equal => Hierarchy::Equal,
                    HierarchyArg::Flat => Hierarchy::Flat,
                };
            }
            if let Some(n) = a.resamples {
                opts.n_resamples = n;
            }
            cmd_score(&a.benchmark, &a.predictions, &a.out, &opts).map(|_| ())
        }
        Command::Report(a) => {
            let text = cmd_report(&a.score, a.format)?;
            match &a.out {
                Some(p) => with_path(fs::write(p, text), "report", p),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::DistillLoss(a) => {
            let loss = cmd_distill_loss(&a.teacher, &a.student, a.temperature, a.grad_out.as_deref())?;
            println!("{}", serde_json::json!({ "loss": loss, "temperature": a.temperature }));
            Ok(())
        }
        Command::Crop(a) => cmd_crop(&a.weights, a.rows, a.cols, &a.out),
        Command::Run(a) => cmd_run(&cfg, &a.out_dir).map(|_| ()),
    }
}

/// Returns the number of records written.
pub fn cmd_simulate(cfg: &SimulatorConfig, out: &Path) -> Result<usize, CliError> {
    let file = simulate_procedures(cfg).stage("simulate")?;
    with_path(write_annotations(&file, out), "simulate", out)?;
    Ok(file.records.len())
}

/// Streams every annotation file through the generator. Returns the number
/// of pairs written.
pub fn cmd_generate(annotations: &[PathBuf], out: &Path, cfg: &GenConfig, memory_k: Option<usize>) -> Result<usize, CliError> {
    cfg.validate().stage("generate")?;
    let file = with_path(File::create(out), "generate", out)?;
    let mut writer = QaWriter::new(BufWriter::new(file), &QaHeader::default()).stage("generate")?;
    let mut tracker = memory_k.map(MemoryTracker::new).transpose().stage("generate")?;
    let mut total = 0;
    for path in annotations {
        let reader = with_path(AnnotationReader::open(path), "ingest", path)?;
        let records = reader.map(|r| r.map_err(|e| format!("{}: {e}", path.display())));
        total += generate_stream(records, cfg, 256, |record, pairs| {
            let context = tracker.as_mut().map(|t| render_memory(t.push(record)));
            for mut p in pairs {
                p.context = context.clone();
                writer.write(&p).map_err(|e| e.to_string())?;
            }
            Ok(())
        })
        .map_err(|message| CliError {
            stage: "generate".into(),
            message,
        })?;
    }
    writer.finish().stage("generate")?;
    Ok(total)
}

const COUNT_CHUNK: usize = 1 << 16;

/// Two streaming passes over `pairs`; writes `train.jsonl`, `val.jsonl` and
/// `test.jsonl` into `out_dir`.
pub fn cmd_sample(pairs: &Path, out_dir: &Path, spec: &SampleSpec) -> Result<FrequencyTable, CliError> {
    spec.validate().stage("sample")?;
    let mut table = FrequencyTable::default();
    let mut buf = Vec::with_capacity(COUNT_CHUNK);
    for p in with_path(QaReader::open(pairs), "sample", pairs)? {
        buf.push(with_path(p, "sample", pairs)?);
        if buf.len() == COUNT_CHUNK {
            table.merge(crate::sampler::count_frequencies_par(&buf));
            buf.clear();
        }
    }
    table.merge(crate::sampler::count_frequencies_par(&buf));
    buf.clear();

    let mut sampler = Sampler::new(&table, spec).stage("sample")?;
    for p in with_path(QaReader::open(pairs), "sample", pairs)? {
        buf.push(with_path(p, "sample", pairs)?);
        if buf.len() == COUNT_CHUNK {
            sampler.offer_chunk(std::mem::take(&mut buf)).stage("sample")?;
        }
    }
    sampler.offer_chunk(buf).stage("sample")?;
    let splits = sampler.finish();

    with_path(fs::create_dir_all(out_dir), "sample", out_dir)?;
    let digest = table.digest();
    for s in Split::ALL {
        let header = QaHeader {
            split: Some(s.name().into()),
            sample_spec: Some(spec.clone()),
            table_digest: Some(digest.clone()),
            ..QaHeader::default()
        };
        let path = out_dir.join(format!("{}.jsonl", s.name()));
        with_path(crate::io::write_qa_file(&path, &header, splits.get(s)), "sample", &path)?;
    }
    Ok(table)
}

pub fn cmd_baseline(train: &Path, test: &Path, out: &Path) -> Result<(), CliError> {
    let (_, train_pairs) = with_path(read_qa_file(train), "baseline", train)?;
    let (_, test_pairs) = with_path(read_qa_file(test), "baseline", test)?;
    let model = BaselinePredictor::fit(&train_pairs);
    let preds: Vec<Prediction> = test_pairs
        .iter()
        .map(|q| Prediction {
            qa_id: q.id.clone(),
            answer: model.predict(q),
        })
        .collect();
    with_path(write_predictions(out, &preds), "baseline", out)
}

pub fn cmd_score(benchmark: &Path, predictions: &Path, out: &Path, opts: &ScoreOptions) -> Result<ScoreReport, CliError> {
    let (_, bench) = with_path(read_qa_file(benchmark), "score", benchmark)?;
    let preds = with_path(read_predictions(predictions), "score", predictions)?;
    let report = score_benchmark(&bench, &preds, opts).stage("score")?;
    let mut text = serde_json::to_string_pretty(&report).stage("score")?;
    text.push('\n');
    with_path(fs::write(out, text), "score", out)?;
    Ok(report)
}

fn fmt_ci(s: &Stat) -> (String, String) {
    match s.ci95 {
        Some((lo, hi)) => (format!("{lo:.4}"), format!("{hi:.4}")),
        None => (String::new(), String::new()),
    }
}

/// Per-task table, tasks in taxonomy order, then datasets and overall.
pub fn render_report(report: &ScoreReport, format: ReportFormat) -> String {
    let mut rows: Vec<(&str, String, &Stat)> = Vec::new();
    for t in TaskKind::ALL {
        if let Some(s) = report.per_task.get(t.name()) {
            rows.push(("task", t.name().to_string(), s));
        }
    }
    for (d, s) in &report.per_dataset {
        rows.push(("dataset", d.clone(), s));
    }
    rows.push(("overall", "overall".into(), &report.overall));

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("scope,name,mean,ci_low,ci_high,n\n");
            for (scope, name, s) in rows {
                let (lo, hi) = fmt_ci(s);
                let _ = writeln!(out, "{scope},{name},{:.4},{lo},{hi},{}", s.mean, s.n);
            }
        }
        ReportFormat::Text => {
            let _ = writeln!(
                out,
                "samples {}  missing {}  unparseable {}  templates v{}  rules v{}",
                report.n_samples, report.n_missing, report.n_unparseable, report.template_version, report.rules_version
            );
            let _ = writeln!(out, "{:<8} {:<36} {:>7} {:>17} {:>8}", "scope", "name", "score", "95% CI", "n");
            for (scope, name, s) in rows {
                let (lo, hi) = fmt_ci(s);
                let ci = if lo.is_empty() { "-".to_string() } else { format!("[{lo}, {hi}]") };
                let _ = writeln!(out, "{scope:<8} {name:<36} {:>7.4} {ci:>17} {:>8}", s.mean, s.n);
            }
        }
    }
    out
}

pub fn cmd_report(score: &Path, format: ReportFormat) -> Result<String, CliError> {
    let text = with_path(fs::read_to_string(score), "report", score)?;
    let report: ScoreReport = with_path(serde_json::from_str(&text), "report", score)?;
    Ok(render_report(&report, format))
}

fn read_matrix(path: &Path, stage: &str) -> Result<Matrix, CliError> {
    let file = with_path(File::open(path), stage, path)?;
    with_path(Matrix::read_text(BufReader::new(file)), stage, path)
}

fn write_matrix(m: &Matrix, path: &Path, stage: &str) -> Result<(), CliError> {
    let file = with_path(File::create(path), stage, path)?;
    let mut w = BufWriter::new(file);
    with_path(m.write_text(&mut w).and_then(|_| w.flush()), stage, path)
}

pub fn cmd_distill_loss(teacher: &Path, student: &Path, temperature: f64, grad_out: Option<&Path>) -> Result<f64, CliError> {
    let t = LogitMatrix::new(read_matrix(teacher, "distill")?).stage("distill")?;
    let s = LogitMatrix::new(read_matrix(student, "distill")?).stage("distill")?;
    let loss = distill_loss(&t, &s, temperature).stage("distill")?;
    if let Some(p) = grad_out {
        let g = distill_loss_grad(&t, &s, temperature).stage("distill")?;
        write_matrix(&g, p, "distill")?;
    }
    Ok(loss)
}

pub fn cmd_crop(weights: &Path, rows: usize, cols: usize, out: &Path) -> Result<(), CliError> {
    let w = read_matrix(weights, "crop")?;
    let c = crop_weights(&w, rows, cols).stage("crop")?;
    write_matrix(&c, out, "crop")
}

/// Artifacts of a full run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub annotations: PathBuf,
    pub pairs: PathBuf,
    pub predictions: PathBuf,
    pub score: PathBuf,
    pub report_text: PathBuf,
    pub report_csv: PathBuf,
    pub report: ScoreReport,
}

/// simulate, generate, sample, baseline on train, score on test, report.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutputs, CliError> {
    with_path(fs::create_dir_all(out_dir), "run", out_dir)?;
    let annotations = out_dir.join("annotations.jsonl");
    let pairs = out_dir.join("qa_all.jsonl");
    let predictions = out_dir.join("baseline_predictions.jsonl");
    let score = out_dir.join("score.json");
    let report_text = out_dir.join("report.txt");
    let report_csv = out_dir.join("report.csv");

    cmd_simulate(&cfg.simulator, &annotations)?;
    cmd_generate(std::slice::from_ref(&annotations), &pairs, &cfg.generation, cfg.memory_k)?;
    cmd_sample(&pairs, out_dir, &cfg.sampling)?;
    cmd_baseline(&out_dir.join("train.jsonl"), &out_dir.join("test.jsonl"), &predictions)?;
    let report = cmd_score(&out_dir.join("test.jsonl"), &predictions, &score, &cfg.score_options())?;
    with_path(fs::write(&report_text, render_report(&report, ReportFormat::Text)), "report", &report_text)?;
    with_path(fs::write(&report_csv, render_report(&report, ReportFormat::Csv)), "report", &report_csv)?;
    Ok(RunOutputs {
        annotations,
        pairs,
        predictions,
        score,
        report_text,
        report_csv,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["orbench", "--seed", "7", "generate", "--annotations", "a", "b", "--out", "o"]).unwrap();
        assert_eq!(cli.seed, Some(7));
        match cli.command {
            Command::Generate(g) => assert_eq!(g.annotations.len(), 2),
            _ => panic!(),
        }
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = RunConfig { seed: 3, ..RunConfig::default() }.seeded();
        assert_ne!(cfg.simulator.seed, cfg.sampling.seed);
        assert_eq!(cfg.simulator.seed, derive_seed(3, "simulate"));
    }

    #[test]
    fn config_partial_document() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 5, "simulator": {"n_clips": 2}}"#).unwrap();
        assert_eq!(cfg.simulator.n_clips, 2);
        assert_eq!(cfg.simulator.timepoints_per_clip, SimulatorConfig::default().timepoints_per_clip);
        assert_eq!(cfg.sampling, SampleSpec::default());
    }
}

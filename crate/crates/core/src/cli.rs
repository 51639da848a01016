//! The `forge` command line: one subcommand per pipeline stage, a shared TOML
//! config, and a provenance sidecar next to every output file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datamodel::{self, DataError, Source};
use crate::decontam::{self, DecontamConfig, DecontamError, ThresholdMode, Verdict};
use crate::evalharness::{self, EvalConfig, EvalError, EvalReport, Layout, ReportError, TableFormat};
use crate::generator::{self, Checkpoint, DistillConfig, GenerationConfig, GeneratorError, MiningConfig};
use crate::llmclient::{script_mock, BackendConfig, Client, ClientError, ManualClock, MockScript};
use crate::mas::{self, Difficulty, MasClients, MasConfig, MasError, RuntimeRow};
use crate::merge::{self, MergeError, MergeSpec, ParameterMap};
use crate::taxonomy::{self, sha256_hex, Taxonomy, TaxonomyError};
use crate::template::{PromptTemplate, TemplateError};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Synthetic nursing MCQ pipeline")]
pub struct Cli {
    /// Parallel workers inside a stage.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for every random choice the stage makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a taxonomy CSV and print its level counts.
    Taxonomy(TaxonomyArgs),
    /// Generate synthetic MCQs for every concept.
    Generate(GenerateArgs),
    /// Build the one-question-per-concept benchmark.
    Benchmark(BenchmarkArgs),
    /// Keep the nursing-relevant items of a benchmark.
    Mine(MineArgs),
    /// Drop generated items that overlap test sets or each other.
    Decontam(DecontamArgs),
    /// Zero-shot accuracy of one backend on one benchmark.
    Eval(EvalArgs),
    /// Answer a benchmark with the multi-agent system.
    Mas(MasArgs),
    /// Collect reasoning traces and keep those that agree with the key.
    Distill(DistillArgs),
    /// DARE-merge a fine-tuned parameter file into its base.
    Merge(MergeArgs),
    /// Tabulate evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Drop repeated paths instead of failing on them.
    #[arg(long)]
    pub skip_duplicates: bool,
    /// Also write the counts as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Backend id from the config, or `mock:<script.toml>`.
    #[arg(long)]
    pub backend: Option<String>,
    /// MCQs per concept.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub schema_retries: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Append-only progress file; rerunning with it resumes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecontamArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Test benchmarks to screen against.
    #[arg(long, required = true, num_args = 1..)]
    pub tests: Vec<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Reject only scores strictly above the threshold.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub decisions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long)]
    pub backend: Option<String>,
    /// Name recorded in the report; defaults to the file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MasArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long)]
    pub orchestrator: Option<String>,
    #[arg(long)]
    pub experts: Option<String>,
    #[arg(long)]
    pub moderator: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Seconds of one plain call, for the runtime comparison.
    #[arg(long)]
    pub baseline: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub backend: Option<String>,
    /// Draw this many items (seeded) before distilling.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Kept samples.
    #[arg(long)]
    pub out: PathBuf,
    /// Rejected samples, for inspection.
    #[arg(long)]
    pub rejected: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub ft: PathBuf,
    /// Drop rate.
    #[arg(long)]
    pub p: Option<f64>,
    /// Delta weight.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    PerBenchmark,
    PerCategory,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "per-benchmark")]
    pub layout: LayoutArg,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: FormatArg,
    /// Fixed row order, comma separated model ids.
    #[arg(long, value_delimiter = ',')]
    pub rows: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// The shared TOML config. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub backend: Vec<BackendConfig>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub benchmark: StageBackend,
    #[serde(default)]
    pub mine: StageBackend,
    #[serde(default)]
    pub decontam: DecontamSection,
    #[serde(default)]
    pub eval: StageBackend,
    #[serde(default)]
    pub mas: MasSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub merge: MergeSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub taxonomy: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Directory holding `<name>.txt` template overrides.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBackend {
    pub backend: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub backend: Option<String>,
    pub per_concept: Option<usize>,
    pub schema_retries: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecontamSection {
    pub threshold: Option<f64>,
    pub mode: Option<ThresholdMode>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasSection {
    pub orchestrator: Option<String>,
    pub experts: Option<String>,
    pub moderator: Option<String>,
    pub k: Option<usize>,
    pub rounds: Option<usize>,
    pub single_baseline_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub backend: Option<String>,
    pub sample: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeSection {
    pub p: Option<f64>,
    pub w: Option<f64>,
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// A failed run: usage problems exit 2, stage failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Stage { category: String, message: String },
}

impl CliError {
    fn stage(category: &str, message: impl fmt::Display) -> Self {
        CliError::Stage {
            category: category.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: category=usage message={}", one_line(m)),
            CliError::Stage { category, message } => {
                write!(f, "error: category={category} message={}", one_line(message))
            }
        }
    }
}

macro_rules! stage_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::stage(e.category(), &e)
            }
        }
    )*};
}

stage_error_from!(GeneratorError, MasError, MergeError, ClientError);

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        let cat = match e {
            TaxonomyError::MalformedRecord { .. } => "malformed_record",
            TaxonomyError::DuplicatePath { .. } => "duplicate_path",
            TaxonomyError::InvalidPath(_) => "invalid_path",
            TaxonomyError::Io(_) => "io",
        };
        CliError::stage(cat, &e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let cat = match e {
            DataError::SchemaViolation { .. } => "schema_violation",
            DataError::NOutOfRange { .. } => "n_out_of_range",
            DataError::MissingConceptPath(_) => "missing_concept_path",
            DataError::Io(_) => "io",
        };
        CliError::stage(cat, &e)
    }
}

impl From<DecontamError> for CliError {
    fn from(e: DecontamError) -> Self {
        match e {
            DecontamError::InvalidThreshold(_) => CliError::Usage(e.to_string()),
            DecontamError::MissingConceptPath(_) => CliError::stage("missing_concept_path", &e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let cat = match e {
            EvalError::EmptyBenchmark(_) => "empty_benchmark",
            EvalError::LetterScheme { .. } => "letter_scheme",
            EvalError::Template(_) => "template",
            EvalError::Io(_) => "io",
        };
        CliError::stage(cat, &e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let cat = match e {
            ReportError::CategoryMismatch { .. } => "category_mismatch",
            ReportError::DuplicateCell { .. } => "duplicate_cell",
            ReportError::Empty => "empty",
        };
        CliError::stage(cat, &e)
    }
}

impl From<TemplateError> for CliError {
    fn from(e: TemplateError) -> Self {
        CliError::stage("template", &e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::stage("io", &e)
    }
}

/// What was run and with which inputs, written as `<output>.provenance.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub argv: Vec<String>,
    pub config_digest: Option<String>,
    pub seed: u64,
    pub workers: usize,
    pub backend_ids: Vec<String>,
    /// Input path to sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub wall_s: f64,
    pub stats: serde_json::Value,
}

pub fn provenance_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    output.with_file_name(name)
}

struct Ctx {
    argv: Vec<String>,
    config: PipelineConfig,
    config_dir: PathBuf,
    config_digest: Option<String>,
    seed: u64,
    workers: usize,
    backends_used: Vec<String>,
    inputs: BTreeMap<String, String>,
    started: Instant,
    started_unix: f64,
}

impl Ctx {
    fn new(cli: &Cli, argv: Vec<String>) -> Result<Self, CliError> {
        let (config, config_dir, config_digest) = match &cli.config {
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|e| missing(path, e))?;
                let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::stage("config", "not UTF-8"))?;
                let config = PipelineConfig::from_toml_str(&text).map_err(|e| CliError::stage("config", e))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, dir, Some(sha256_hex(&bytes)))
            }
            None => (PipelineConfig::default(), PathBuf::new(), None),
        };
        let seed = cli.seed.or(config.seed).unwrap_or(0);
        let workers = cli.workers.or(config.workers).unwrap_or(1).max(1);
        Ok(Ctx {
            argv,
            config,
            config_dir,
            config_digest,
            seed,
            workers,
            backends_used: Vec::new(),
            inputs: BTreeMap::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    /// A CLI path is taken as given; a config path is relative to the config.
    fn pick_path(&self, flag: Option<&PathBuf>, from_config: Option<&PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        match (flag, from_config) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(CliError::Usage(format!("--{what} is required (or set it in the config)"))),
        }
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| missing(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn client(&mut self, flag: Option<&str>, from_config: Option<&str>, role: &str) -> Result<Client, CliError> {
        let id = match flag.or(from_config) {
            Some(id) => id.to_string(),
            None if self.config.backend.len() == 1 => self.config.backend[0].id.clone(),
            None => return Err(CliError::Usage(format!("no backend chosen for {role}; pass --{role} <id>"))),
        };
        let client = if let Some(script) = id.strip_prefix("mock:") {
            let path = PathBuf::from(script);
            self.input(&path)?;
            let script = MockScript::load(&path).map_err(|e| CliError::stage("config", e))?;
            let mock = script_mock("mock", script).map_err(|e| CliError::stage("config", e))?;
            Client::new(std::sync::Arc::new(mock), std::sync::Arc::new(ManualClock::new())).with_jitter_seed(self.seed)
        } else {
            let cfg = self
                .config
                .backend
                .iter()
                .find(|b| b.id == id)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("unknown backend `{id}`")))?;
            if let Some(script) = &cfg.script {
                self.input(&self.resolve(Path::new(script)))?;
            }
            cfg.build(&self.config_dir, self.seed)?
        };
        if !self.backends_used.contains(&id) {
            self.backends_used.push(id);
        }
        Ok(client)
    }

    fn template(&mut self, flag: Option<&PathBuf>, builtin: PromptTemplate) -> Result<PromptTemplate, CliError> {
        let path = match (flag, &self.config.paths.templates) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(dir)) => {
                let p = self.resolve(dir).join(format!("{}.txt", builtin.name));
                p.exists().then_some(p)
            }
            (None, None) => None,
        };
        match path {
            Some(p) => {
                self.input(&p)?;
                Ok(PromptTemplate::load(&p)?)
            }
            None => Ok(builtin),
        }
    }

    fn provenance(&self, stage: &str, outputs: &[&Path], stats: serde_json::Value) -> Provenance {
        Provenance {
            tool: "forge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            argv: self.argv.clone(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            workers: self.workers,
            backend_ids: self.backends_used.clone(),
            inputs: self.inputs.clone(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_s: self.started_unix,
            wall_s: self.started.elapsed().as_secs_f64(),
            stats,
        }
    }

    /// Writes one sidecar per output.
    fn finish(&self, stage: &str, outputs: &[&Path], stats: serde_json::Value) -> Result<(), CliError> {
        let record = self.provenance(stage, outputs, stats);
        let text = serde_json::to_string_pretty(&record).expect("json") + "\n";
        for out in outputs {
            std::fs::write(provenance_path(out), &text)?;
        }
        Ok(())
    }
}

fn missing(path: &Path, e: std::io::Error) -> CliError {
    CliError::stage("missing_input", format!("{}: {e}", path.display()))
}

fn need_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::stage("missing_input", format!("{} does not exist", path.display())))
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    let mut ctx = Ctx::new(&cli, argv)?;
    match cli.command {
        Command::Taxonomy(a) => cmd_taxonomy(&mut ctx, a),
        Command::Generate(a) => cmd_generate(&mut ctx, a),
        Command::Benchmark(a) => cmd_benchmark(&mut ctx, a),
        Command::Mine(a) => cmd_mine(&mut ctx, a),
        Command::Decontam(a) => cmd_decontam(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Mas(a) => cmd_mas(&mut ctx, a),
        Command::Distill(a) => cmd_distill(&mut ctx, a),
        Command::Merge(a) => cmd_merge(&mut ctx, a),
        Command::Report(a) => cmd_report(&mut ctx, a),
    }
}

fn load_taxonomy(ctx: &mut Ctx, flag: Option<&PathBuf>) -> Result<Taxonomy, CliError> {
    let path = ctx.pick_path(flag, ctx.config.paths.taxonomy.as_ref(), "taxonomy")?;
    ctx.input(&path)?;
    Ok(taxonomy::load_taxonomy(&path)?)
}

fn cmd_taxonomy(ctx: &mut Ctx, a: TaxonomyArgs) -> Result<(), CliError> {
    let path = ctx.pick_path(a.input.as_ref(), ctx.config.paths.taxonomy.as_ref(), "in")?;
    ctx.input(&path)?;
    let (tax, skipped) = if a.skip_duplicates {
        taxonomy::load_taxonomy_skipping_duplicates(&path)?
    } else {
        (taxonomy::load_taxonomy(&path)?, Vec::new())
    };
    let counts = tax.summarize();
    println!("{counts}");
    for s in &skipped {
        eprintln!("skipped duplicate at line {} (first seen at line {})", s.line, s.first_line);
    }
    let stats = json!({ "counts": counts, "skipped_duplicates": skipped.len() });
    match &a.out {
        Some(out) => {
            std::fs::write(out, serde_json::to_string_pretty(&stats).expect("json") + "\n")?;
            ctx.finish("taxonomy", &[out], stats)
        }
        None => {
            let record = ctx.provenance("taxonomy", &[], stats);
            eprintln!("provenance: {}", serde_json::to_string(&record).expect("json"));
            Ok(())
        }
    }
}

fn cmd_generate(ctx: &mut Ctx, a: GenerateArgs) -> Result<(), CliError> {
    let out = a.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let tax = load_taxonomy(ctx, a.taxonomy.as_ref())?;
    let section = ctx.config.generate.clone();
    let client = ctx.client(a.backend.as_deref(), section.backend.as_deref(), "backend")?;
    let config = GenerationConfig {
        template: ctx.template(a.template.as_ref(), crate::template::builtin::generation())?,
        schema_retries: a
            .schema_retries
            .or(section.schema_retries)
            .unwrap_or(generator::DEFAULT_SCHEMA_RETRIES),
        workers: ctx.workers,
        ..Default::default()
    };
    let n = a.n.or(section.per_concept).unwrap_or(1);
    let (items, stats) = generator::generate_corpus(&client, &tax, n, &config)?;
    datamodel::write_items(&items, &out)?;
    println!(
        "generated {} items ({} malformed replies discarded, {} calls)",
        stats.emitted, stats.malformed, stats.calls
    );
    ctx.finish("generate", &[&out], json!(stats))
}

fn cmd_benchmark(ctx: &mut Ctx, a: BenchmarkArgs) -> Result<(), CliError> {
    let out = ctx.pick_path(a.out.as_ref(), ctx.config.paths.benchmark.as_ref(), "out")?;
    let tax = load_taxonomy(ctx, a.taxonomy.as_ref())?;
    let backend = ctx.config.benchmark.backend.clone();
    let client = ctx.client(a.backend.as_deref(), backend.as_deref(), "backend")?;
    let config = GenerationConfig {
        template: ctx.template(a.template.as_ref(), crate::template::builtin::generation())?,
        workers: ctx.workers,
        ..Default::default()
    };
    let checkpoint_path = a
        .checkpoint
        .clone()
        .or_else(|| ctx.config.paths.checkpoint.as_ref().map(|p| ctx.resolve(p)));
    let checkpoint = checkpoint_path.as_ref().map(Checkpoint::open).transpose()?;
    let resumed = checkpoint.as_ref().map_or(0, Checkpoint::len);
    let (bench, stats) = generator::generate_benchmark(&client, &tax, &config, checkpoint.as_ref())?;
    datamodel::write_benchmark(&bench, &out)?;
    println!("benchmark {} with {} items ({} resumed from checkpoint)", bench.name, bench.len(), resumed);
    ctx.finish("benchmark", &[&out], json!({ "generation": stats, "resumed": resumed }))
}

fn cmd_mine(ctx: &mut Ctx, a: MineArgs) -> Result<(), CliError> {
    let input = ctx.pick_path(a.input.as_ref(), None, "in")?;
    let out = ctx.pick_path(a.out.as_ref(), None, "out")?;
    ctx.input(&input)?;
    let bench = datamodel::read_benchmark(&input, Some(Source::Multimedqa))?;
    let backend = ctx.config.mine.backend.clone();
    let client = ctx.client(a.backend.as_deref(), backend.as_deref(), "backend")?;
    let config = MiningConfig {
        template: ctx.template(a.template.as_ref(), crate::template::builtin::nursing_classifier())?,
        workers: ctx.workers,
        ..Default::default()
    };
    let (subset, stats) = generator::mine_nursing_subset(&client, &bench, &config)?;
    datamodel::write_benchmark(&subset, &out)?;
    println!(
        "kept {} of {} items ({} unreadable labels)",
        stats.kept, stats.total, stats.unparseable
    );
    ctx.finish("mine", &[&out], json!(stats))
}

fn cmd_decontam(ctx: &mut Ctx, a: DecontamArgs) -> Result<(), CliError> {
    need_file(&a.input)?;
    ctx.input(&a.input)?;
    let corpus = datamodel::read_corpus(&a.input)?;
    let mut tests = Vec::new();
    for t in &a.tests {
        need_file(t)?;
        ctx.input(t)?;
        tests.push(datamodel::read_benchmark(t, Some(Source::NclexTest))?);
    }
    let section = &ctx.config.decontam;
    let mode = if a.strict {
        ThresholdMode::Exceeds
    } else {
        section.mode.unwrap_or_default()
    };
    let config = DecontamConfig {
        threshold: a.threshold.or(section.threshold).unwrap_or(decontam::DEFAULT_THRESHOLD),
        mode,
    };
    config.validate()?;
    let (kept, decisions) = decontam::decontaminate(&corpus, &tests, &config)?;
    datamodel::write_corpus(&kept, &a.out)?;
    let count = |v: Verdict| decisions.iter().filter(|d| d.verdict == v).count();
    let stats = json!({
        "threshold": config.threshold,
        "mode": config.mode,
        "total": decisions.len(),
        "kept": count(Verdict::Kept),
        "rejected_testset": count(Verdict::RejectedTestset),
        "rejected_pool": count(Verdict::RejectedPool),
    });
    println!(
        "kept {} of {} (test-set hits {}, same-concept duplicates {})",
        stats["kept"], stats["total"], stats["rejected_testset"], stats["rejected_pool"]
    );
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(d) = &a.decisions {
        datamodel::write_jsonl(&decisions, d)?;
        outputs.push(d);
    }
    ctx.finish("decontam", &outputs, stats)
}

fn cmd_eval(ctx: &mut Ctx, a: EvalArgs) -> Result<(), CliError> {
    need_file(&a.bench)?;
    ctx.input(&a.bench)?;
    let mut bench = datamodel::read_benchmark(&a.bench, Some(Source::NclexTest))?;
    if let Some(name) = &a.name {
        bench.name = name.clone();
    }
    let backend = ctx.config.eval.backend.clone();
    let client = ctx.client(a.backend.as_deref(), backend.as_deref(), "backend")?;
    let config = EvalConfig {
        template: ctx.template(a.template.as_ref(), crate::template::builtin::evaluation())?,
        workers: ctx.workers,
        ..Default::default()
    };
    let report = evalharness::evaluate(&client, &bench, &config)?;
    report.save(&a.out)?;
    println!(
        "{} on {}: {}/{} correct ({}%), {} unparsed",
        report.model_id,
        report.benchmark_name,
        report.n_correct,
        report.n_total,
        evalharness::percent(report.accuracy),
        report.n_unparsed
    );
    ctx.finish(
        "eval",
        &[&a.out],
        json!({ "accuracy": report.accuracy, "n_total": report.n_total, "n_unparsed": report.n_unparsed }),
    )
}

fn cmd_mas(ctx: &mut Ctx, a: MasArgs) -> Result<(), CliError> {
    need_file(&a.bench)?;
    ctx.input(&a.bench)?;
    let bench = datamodel::read_benchmark(&a.bench, Some(Source::NclexTest))?;
    let section = ctx.config.mas.clone();
    let orchestrator = ctx.client(a.orchestrator.as_deref(), section.orchestrator.as_deref(), "orchestrator")?;
    let experts = ctx.client(a.experts.as_deref(), section.experts.as_deref(), "experts")?;
    let moderator = ctx.client(a.moderator.as_deref(), section.moderator.as_deref(), "moderator")?;
    let config = MasConfig {
        k: a.k.or(section.k).unwrap_or(5),
        rounds: a.rounds.or(section.rounds).unwrap_or(1),
        single_baseline: a.baseline.or(section.single_baseline_s),
        workers: ctx.workers,
        ..Default::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let clients = MasClients {
        orchestrator: &orchestrator,
        experts: &experts,
        moderator: &moderator,
    };

    std::fs::create_dir_all(&a.out)?;
    let mut transcripts = Vec::with_capacity(bench.len());
    let mut correct = 0usize;
    let mut runtimes: BTreeMap<Difficulty, Vec<f64>> = BTreeMap::new();
    for item in &bench.items {
        let outcome = mas::solve(clients, item, &config)?;
        correct += usize::from(outcome.answer == item.answer);
        runtimes
            .entry(outcome.transcript.difficulty)
            .or_default()
            .push(outcome.ledger.total);
        transcripts.push(outcome.transcript);
    }
    let transcripts_path = a.out.join("transcripts.jsonl");
    datamodel::write_jsonl(&transcripts, &transcripts_path)?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut summary = json!({
        "benchmark": bench.name,
        "n_total": bench.len(),
        "n_correct": correct,
        "accuracy": correct as f64 / bench.len() as f64,
        "n_easy": runtimes.get(&Difficulty::Easy).map_or(0, Vec::len),
        "n_hard": runtimes.get(&Difficulty::Hard).map_or(0, Vec::len),
    });
    let mut outputs: Vec<PathBuf> = vec![transcripts_path];
    if let Some(baseline) = config.single_baseline {
        let mut rows = vec![RuntimeRow::new("Single-LLM", baseline, baseline)];
        for (d, label) in [(Difficulty::Easy, "MAS-easy"), (Difficulty::Hard, "MAS-hard")] {
            if let Some(v) = runtimes.get(&d) {
                rows.push(RuntimeRow::new(label, mean(v), baseline));
            }
        }
        let table_path = a.out.join("runtime.md");
        std::fs::write(&table_path, mas::runtime_table(&rows))?;
        summary["runtime"] = json!(rows);
        outputs.push(table_path);
    }
    let summary_path = a.out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    outputs.push(summary_path);
    println!(
        "MAS answered {}/{} correctly ({}%)",
        correct,
        bench.len(),
        evalharness::percent(summary["accuracy"].as_f64().unwrap_or(0.0))
    );
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.finish("mas", &refs, summary)
}

fn cmd_distill(ctx: &mut Ctx, a: DistillArgs) -> Result<(), CliError> {
    need_file(&a.input)?;
    ctx.input(&a.input)?;
    let corpus = datamodel::read_corpus(&a.input)?;
    let section = ctx.config.distill.clone();
    let corpus = match a.sample.or(section.sample) {
        Some(n) => datamodel::subsample(&corpus, n, ctx.seed)?,
        None => corpus,
    };
    let client = ctx.client(a.backend.as_deref(), section.backend.as_deref(), "backend")?;
    let config = DistillConfig {
        template: ctx.template(a.template.as_ref(), crate::template::builtin::reasoning())?,
        workers: ctx.workers,
        ..Default::default()
    };
    let outcome = generator::distill_reasoning(&client, corpus.items(), &config)?;
    datamodel::write_jsonl(&outcome.kept, &a.out)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(r) = &a.rejected {
        datamodel::write_jsonl(&outcome.rejected, r)?;
        outputs.push(r);
    }
    println!("retention: {}", outcome.stats);
    ctx.finish(
        "distill",
        &outputs,
        json!({ "total": outcome.stats.total, "kept": outcome.stats.kept, "retention": outcome.stats.rate() }),
    )
}

fn cmd_merge(ctx: &mut Ctx, a: MergeArgs) -> Result<(), CliError> {
    for p in [&a.base, &a.ft] {
        need_file(p)?;
        ctx.input(p)?;
    }
    let section = &ctx.config.merge;
    let defaults = MergeSpec::default();
    let spec = MergeSpec {
        drop_rate: a.p.or(section.p).unwrap_or(defaults.drop_rate),
        weight: a.w.or(section.w).unwrap_or(defaults.weight),
        seed: section.seed.unwrap_or(ctx.seed),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let base = ParameterMap::load(&a.base)?;
    let ft = ParameterMap::load(&a.ft)?;
    let merged = merge::dare_merge(&base, &ft, &spec)?;
    merged.save(&a.out)?;
    println!(
        "merged {} arrays ({} values) with p={} w={} seed={}",
        merged.len(),
        merged.num_values(),
        spec.drop_rate,
        spec.weight,
        spec.seed
    );
    ctx.finish("merge", &[&a.out], json!(spec))
}

fn cmd_report(ctx: &mut Ctx, a: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for p in &a.reports {
        need_file(p)?;
        ctx.input(p)?;
        reports.push(EvalReport::load(p)?);
    }
    let layout = match a.layout {
        LayoutArg::PerBenchmark => Layout::PerBenchmark,
        LayoutArg::PerCategory => Layout::PerCategory,
    };
    let format = match a.format {
        FormatArg::Markdown => TableFormat::Markdown,
        FormatArg::Csv => TableFormat::Csv,
    };
    let rows = (!a.rows.is_empty()).then_some(a.rows.as_slice());
    let table = evalharness::format_report(&reports, layout, rows, None)?;
    let text = table.render(format);
    std::fs::write(&a.out, &text)?;
    print!("{text}");
    ctx.finish("report", &[&a.out], json!({ "rows": table.rows.len(), "columns": table.columns }))
}

/// Parses `argv` (program name first), runs the stage, and returns the exit
/// code. Errors go to stderr as one `error: category=...` line.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `forge --help` for usage");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(dispatch(["forge", "frobnicate"]), 2);
        assert_eq!(dispatch(["forge"]), 2);
    }

    #[test]
    fn decontam_requires_tests() {
        assert_eq!(dispatch(["forge", "decontam", "--in", "a.jsonl", "--out", "b.jsonl"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(dispatch(["forge", "--help"]), 0);
    }

    #[test]
    fn config_parses() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
seed = 7
[[backend]]
id = "gen"
kind = "mock"
script = "gen.toml"
[decontam]
threshold = 0.7
mode = "exceeds"
[mas]
k = 3
single_baseline_s = 5.6
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.backend[0].id, "gen");
        assert_eq!(cfg.decontam.mode, Some(ThresholdMode::Exceeds));
        assert_eq!(cfg.mas.k, Some(3));
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn error_line_is_single_line() {
        let e = CliError::stage("io", "first\nsecond");
        assert_eq!(e.to_string(), "error: category=io message=first second");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            provenance_path(Path::new("out/kept.jsonl")),
            PathBuf::from("out/kept.jsonl.provenance.json")
        );
    }
}

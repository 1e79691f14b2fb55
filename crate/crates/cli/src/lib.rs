//! Library side of the `alignkit` command: argument definitions, the run
//! configuration, and one function per subcommand.

mod analysis;
mod config;
mod error;
mod output;
mod prompts;
mod score;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use analysis::{agreement, correlate, order, reliable};
pub use config::{ImageEntry, RunConfig};
pub use error::{CliError, Failure};
pub use prompts::{gen_prompts, resample, tag};
pub use score::score;

#[derive(Debug, Parser)]
#[command(
    name = "alignkit",
    version,
    about = "Text-to-image alignment evaluation toolkit"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score (prompt, image) pairs with one or more metrics.
    Score(ScoreArgs),
    /// Correlate metric scores with aggregated human ratings.
    Correlate(CorrelateArgs),
    /// Inter-annotator agreement per model and template.
    Agreement(AgreementArgs),
    /// List prompts whose rater disagreement stays low everywhere.
    Reliable(ReliableArgs),
    /// Pairwise model ordering by human templates and metrics.
    Order(OrderArgs),
    /// Tag prompts with skills using the generation backend.
    Tag(TagArgs),
    /// Draw a skill-weighted subset of a prompt set.
    Resample(ResampleArgs),
    /// Generate sub-skill prompts from a few-shot template.
    GenPrompts(GenPromptsArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Check a prompt set or an annotation file against its schema.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Gecko,
    Tifa,
    Embed,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Gecko => "gecko",
            MetricKind::Tifa => "tifa",
            MetricKind::Embed => "embed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scoring {
    Eq1,
    Eq2,
    Nll,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    /// JSONL of `{prompt_id, image_id, uri, model_id}`.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory; one `<metric>.jsonl` per metric.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "metric", value_enum, default_values_t = [MetricKind::Gecko])]
    pub metrics: Vec<MetricKind>,
    /// Overrides `metric.scoring_mode` from the config.
    #[arg(long, value_enum)]
    pub scoring: Option<Scoring>,
    #[arg(long)]
    pub nli_threshold: Option<f64>,
    #[arg(long)]
    pub no_nli_filter: bool,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    /// Metric result files (repeatable).
    #[arg(long = "metrics", required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Restrict to the prompt ids listed in this file, one per line.
    #[arg(long)]
    pub prompt_ids: Option<PathBuf>,
    /// Metric score differences at or below this count as a tie in side-by-side accuracy.
    #[arg(long, default_value_t = 0.0)]
    pub tie_epsilon: f64,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AgreementArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReliableArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Keep prompts below this fraction of the maximum disagreement.
    #[arg(long, default_value_t = 0.5)]
    pub factor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long = "metrics")]
    pub metrics: Vec<PathBuf>,
    /// Image manifest, used to find the model behind each metric score.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub prompt_ids: Option<PathBuf>,
    #[arg(long, default_value_t = 0.001)]
    pub p_threshold: f64,
    /// Output directory for `relations.csv` and `ordering_success.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TagArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub prompts: PathBuf,
    /// TOML file with `default = <w>` and a `[weights]` table keyed by skill.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenPromptsArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// A bundled template name (`caption_text_rendering`) or a template file.
    #[arg(long)]
    pub template: String,
    /// Conditioning value, `key=value` (repeatable).
    #[arg(long = "set", value_parser = parse_key_value)]
    pub conditioning: Vec<(String, String)>,
    #[arg(long, default_value_t = 1)]
    pub count: u32,
    #[arg(long)]
    pub skill: String,
    #[arg(long)]
    pub sub_skill: String,
    #[arg(long, default_value = "gen")]
    pub id_prefix: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score(a) => score(&a),
        Command::Correlate(a) => correlate(&a),
        Command::Agreement(a) => agreement(&a),
        Command::Reliable(a) => reliable(&a),
        Command::Order(a) => order(&a),
        Command::Tag(a) => tag(&a),
        Command::Resample(a) => resample(&a),
        Command::GenPrompts(a) => gen_prompts(&a),
        Command::Serve(a) => serve(&a),
        Command::Validate(a) => validate(&a),
    }
}

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let (cfg, base) = RunConfig::load(&args.config)?;
    let service = cfg
        .service
        .ok_or_else(|| {
            CliError::input(anyhow::anyhow!(
                "{} has no [service] section",
                args.config.display()
            ))
        })?
        .resolve_paths(&base);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::input(e.into()))?;
    rt.block_on(alignkit_service::serve(service))
        .map_err(|e| match e {
            alignkit_service::ServiceError::Store(s) => CliError::validation(s.into()),
            other => CliError::input(other.into()),
        })
}

fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    use alignkit_core::records;
    let prompts = args
        .prompts
        .as_deref()
        .map(records::load_prompt_set)
        .transpose()
        .map_err(error::record_error)?;
    if let Some(p) = &prompts {
        println!("{}", serde_json::json!({ "prompts": p.len() }));
    }
    let Some(path) = &args.annotations else {
        if prompts.is_none() {
            return Err(CliError::input(anyhow::anyhow!(
                "nothing to validate: pass --prompts and/or --annotations"
            )));
        }
        return Ok(());
    };
    let report =
        records::validate_annotation_file(path, prompts.as_deref()).map_err(error::record_error)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::validation(anyhow::anyhow!(
            "{}: {} schema violation(s)",
            path.display(),
            report.violations.len()
        )))
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "reelcrowd",
    version,
    about = "Simulate audience comments for a video and score comment corpora"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use offline mock backends and a fixed clock.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Base directory for default run and data locations.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Process a video end to end.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Manage persona files and indexes.
    #[command(subcommand)]
    Persona(PersonaCommand),
    /// Generate another comment batch for a processed video.
    Generate(GenerateArgs),
    /// Score labeled comment corpora.
    Eval(EvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Write a synthetic video and persona file for trying things out.
    Fixture(FixtureArgs),
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct PersonaSource {
    /// Persona file (one per line, or JSON lines).
    #[arg(long)]
    pub personas: Option<PathBuf>,
    /// Persona index; built from --personas and saved here when missing.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub title: String,
    #[arg(long, default_value = "")]
    pub description: String,
    #[arg(long, default_value = "")]
    pub author: String,
    #[arg(long)]
    pub thumbnail: Option<PathBuf>,
    /// WAV track for videos without embedded audio.
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Ablation mode: generate without personas.
    #[arg(long)]
    pub no_persona: bool,
    #[command(flatten)]
    pub source: PersonaSource,
    /// Artifact directory; defaults to <workdir>/runs/<video id>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PersonaCommand {
    /// Normalize a persona file into JSON lines with stable ids.
    Import {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every persona and save the index.
    Index {
        #[arg(long)]
        personas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank indexed personas against keywords.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        keywords: Vec<String>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        min_score: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Artifact directory of a processed video.
    #[arg(long, conflicts_with = "video", required_unless_present = "video")]
    pub artifacts: Option<PathBuf>,
    /// Video id under <workdir>/runs.
    #[arg(long)]
    pub video: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Batch number; defaults to the first unused one.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub no_persona: bool,
    #[command(flatten)]
    pub source: PersonaSource,
    /// Output file; defaults to comments-batch-<n>.json in the artifact directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled corpus as label=path; repeat for each corpus.
    #[arg(long = "corpus", required = true)]
    pub corpora: Vec<String>,
    /// Video summary for relevance metrics, as text or summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Report path; .csv writes CSV, anything else JSON. Stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip metrics that call the embedding or judge backends.
    #[arg(long)]
    pub lexical_only: bool,
    #[arg(long)]
    pub self_bleu_subsample: Option<usize>,
    #[arg(long)]
    pub judge_sample: Option<usize>,
    #[arg(long)]
    pub max_pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    /// Data directory; defaults to <workdir>/data.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub seconds: u32,
    #[arg(long, default_value_t = 60)]
    pub personas: usize,
}

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use reelcrowd_core::clock::{Clock, FixedClock, SystemClock};
use reelcrowd_core::comments::{Comment, CommentKind};
use reelcrowd_core::config::AppConfig;
use reelcrowd_core::fixture;
use reelcrowd_core::fsutil::{write_atomic, write_json_atomic};
use reelcrowd_core::gateway::{build_embedder, CallLog, Embedder};
use reelcrowd_core::hashing::{sha256_hex, short_hash};
use reelcrowd_core::metrics::{
    evaluate, load_summary_text, report_to_csv, report_to_json, CommentCorpus, EvalConfig,
};
use reelcrowd_core::persona::{
    build_index, load_personas, rank_personas, PersonaIndex, RankingOptions,
};
use reelcrowd_core::pipeline::{
    load_asset, load_context, ArtifactDir, Pipeline, PipelineSettings, Stage,
};
use reelcrowd_core::video::{VideoAsset, VideoMetadata};
use reelcrowd_core::{Error, Result};
use reelcrowd_service::{Service, ServiceOptions};
use serde_json::json;

use crate::args::{
    Command, EvalArgs, FixtureArgs, GenerateArgs, GlobalArgs, PersonaCommand, PersonaSource,
    PipelineCommand, RunArgs, ServeArgs,
};
use crate::manifest::{collect_outputs, hash_file, RunManifest, RunStatus};

/// Index file kept next to the artifacts so later batches reuse it.
const RUN_INDEX_FILE: &str = "persona_index.json";

struct Context {
    config: AppConfig,
    config_hash: Option<String>,
    mock: bool,
    workdir: PathBuf,
    log: Arc<CallLog>,
    clock: Arc<dyn Clock>,
}

impl Context {
    fn new(global: &GlobalArgs) -> Result<Self> {
        let (mut config, config_hash) = match &global.config {
            Some(path) => (AppConfig::load(path)?, Some(hash_file(path)?)),
            None => (AppConfig::default(), None),
        };
        if let Some(seed) = global.seed {
            config.seed = seed;
        }
        if global.mock {
            config.force_mock();
        }
        config.validate()?;
        let clock: Arc<dyn Clock> = if global.mock {
            Arc::new(FixedClock::epoch())
        } else {
            Arc::new(SystemClock)
        };
        Ok(Self {
            config,
            config_hash,
            mock: global.mock,
            workdir: global.workdir.clone(),
            log: CallLog::new(),
            clock,
        })
    }

    fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        build_embedder(&self.config.gateways.embedding, self.log.clone())
    }

    fn run_dir(&self, video_id: &str) -> PathBuf {
        self.workdir.join("runs").join(video_id)
    }

    /// Loads the index when its file exists, otherwise builds it from the
    /// persona file and saves it to the index path if one was given.
    /// Flags take precedence over the config.
    async fn persona_index(
        &self,
        source: &PersonaSource,
        embedder: &dyn Embedder,
        inputs: &mut BTreeMap<String, String>,
    ) -> Result<Option<PersonaIndex>> {
        let index_path = source.index.clone().or(self.config.persona.index.clone());
        let personas_path = source.personas.clone().or(self.config.persona.file.clone());
        if let Some(path) = index_path.as_ref().filter(|p| p.is_file()) {
            inputs.insert("persona_index".into(), hash_file(path)?);
            return PersonaIndex::load(path, embedder.model_name()).map(Some);
        }
        let Some(personas_path) = personas_path else {
            return Ok(None);
        };
        inputs.insert("personas".into(), hash_file(&personas_path)?);
        let personas = load_personas(&personas_path)?;
        eprintln!("embedding {} personas", personas.len());
        let index = build_index(&personas, embedder, self.config.generation.parallelism).await?;
        if let Some(path) = index_path {
            index.save(&path)?;
        }
        Ok(Some(index))
    }
}

pub async fn dispatch(global: GlobalArgs, command: Command) -> Result<()> {
    if let Command::Fixture(args) = &command {
        return fixture_files(args);
    }
    let ctx = Context::new(&global)?;
    match command {
        Command::Pipeline(PipelineCommand::Run(args)) => pipeline_run(&ctx, args).await,
        Command::Persona(cmd) => persona(&ctx, cmd).await,
        Command::Generate(args) => generate(&ctx, args).await,
        Command::Eval(args) => eval(&ctx, args).await,
        Command::Serve(args) => serve(ctx, args).await,
        Command::Fixture(_) => unreachable!("handled above"),
    }
}

/// Writes a result to stdout. A closed pipe (as with `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out
        .write_all(text.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
    {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn stderr_progress(stage: Stage, progress: f64) {
    eprintln!("[{:>3.0}%] {stage}", progress * 100.0);
}

fn kind_counts(comments: &[Comment]) -> (usize, usize) {
    let count = |k: CommentKind| comments.iter().filter(|c| c.kind == k).count();
    (count(CommentKind::Primary), count(CommentKind::Thread))
}

async fn pipeline_run(ctx: &Context, args: RunArgs) -> Result<()> {
    let video_bytes = std::fs::read(&args.video)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", args.video.display())))?;
    let video_id = format!("v-{}", short_hash(&video_bytes));
    let out = args.out.clone().unwrap_or_else(|| ctx.run_dir(&video_id));
    let dir = ArtifactDir::new(&out)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("video".to_string(), sha256_hex(&video_bytes));
    if let Some(hash) = &ctx.config_hash {
        inputs.insert("config".to_string(), hash.clone());
    }
    let result = run_stages(ctx, &args, &video_id, &dir, &mut inputs).await;

    let (status, failed_stage, error) = match &result {
        Ok(_) => (RunStatus::Completed, None, None),
        Err(e) => {
            let stage = match e {
                Error::Stage { stage, .. } => stage.clone(),
                _ => "setup".to_string(),
            };
            (RunStatus::Failed, Some(stage), Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        tool: "reelcrowd".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status,
        failed_stage,
        error,
        rng_seed: ctx.config.seed,
        mock: ctx.mock,
        video_id: video_id.clone(),
        config: serde_json::to_value(&ctx.config)?,
        inputs,
        outputs: collect_outputs(&out)?,
    };
    manifest.write(&out)?;
    let comments = result?;
    let (primary, thread) = kind_counts(&comments);
    print_json(&json!({
        "video_id": video_id,
        "artifacts": out,
        "comments": comments.len(),
        "primary": primary,
        "thread": thread,
    }))?;
    Ok(())
}

async fn run_stages(
    ctx: &Context,
    args: &RunArgs,
    video_id: &str,
    dir: &ArtifactDir,
    inputs: &mut BTreeMap<String, String>,
) -> Result<Vec<Comment>> {
    let gateways = ctx.config.build_gateways(ctx.log.clone())?;
    let index = if args.no_persona {
        None
    } else {
        let index = ctx
            .persona_index(&args.source, gateways.embedder.as_ref(), inputs)
            .await?
            .ok_or_else(|| {
                Error::Config(
                    "no persona file or index configured; pass --personas or --no-persona".into(),
                )
            })?;
        index.save(&dir.root().join(RUN_INDEX_FILE))?;
        Some(Arc::new(index))
    };
    let metadata = VideoMetadata {
        title: args.title.clone(),
        description: args.description.clone(),
        author: args.author.clone(),
    };
    let asset = VideoAsset::ingest(
        video_id,
        &args.video,
        metadata,
        args.thumbnail.clone(),
        args.audio.clone(),
    )?;
    if let Some(path) = &asset.audio_path {
        inputs.insert("audio".into(), hash_file(path)?);
    }
    if let Some(path) = &asset.thumbnail {
        inputs.insert("thumbnail".into(), hash_file(path)?);
    }
    let engine = ctx
        .config
        .build_engine(gateways.chat.clone(), ctx.clock.clone())?;
    let settings = PipelineSettings::from_config(&ctx.config, args.no_persona);
    let pipeline = Pipeline::new(gateways, engine, index, ctx.clock.clone(), settings)?;
    let output = pipeline.run(&asset, dir, &stderr_progress).await?;
    Ok(output.comments)
}

async fn persona(ctx: &Context, cmd: PersonaCommand) -> Result<()> {
    match cmd {
        PersonaCommand::Import { file, out } => {
            let personas = load_personas(&file)?;
            let mut text = String::new();
            for p in &personas {
                text.push_str(&serde_json::to_string(p)?);
                text.push('\n');
            }
            write_atomic(&out, text.as_bytes())?;
            print_json(&json!({ "personas": personas.len(), "out": out }))?;
        }
        PersonaCommand::Index { personas, out } => {
            let embedder = ctx.embedder()?;
            let source = PersonaSource {
                personas: Some(personas),
                index: None,
            };
            let index = ctx
                .persona_index(&source, embedder.as_ref(), &mut BTreeMap::new())
                .await?
                .expect("persona file given");
            index.save(&out)?;
            print_json(&json!({
                "personas": index.len(),
                "model_name": index.model_name(),
                "dimension": index.dimension(),
                "out": out,
            }))?;
        }
        PersonaCommand::Query {
            index,
            keywords,
            k,
            min_score,
        } => {
            let embedder = ctx.embedder()?;
            let index = PersonaIndex::load(&index, embedder.model_name())?;
            let defaults = ctx.config.persona.ranking();
            let options = RankingOptions {
                top_k: k.unwrap_or(defaults.top_k),
                min_score: min_score.or(defaults.min_score),
            };
            let ranked = rank_personas(&index, &keywords, embedder.as_ref(), options).await?;
            let rows: Vec<_> = ranked
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    json!({
                        "rank": i + 1,
                        "persona_id": r.persona_id,
                        "score": r.score,
                        "text": index.persona(&r.persona_id).map(|p| p.text),
                    })
                })
                .collect();
            print_json(&json!(rows))?;
        }
    }
    Ok(())
}

fn first_free_batch(dir: &Path) -> usize {
    (1..)
        .find(|n| !dir.join(format!("comments-batch-{n}.json")).exists())
        .expect("unbounded range")
}

async fn generate(ctx: &Context, args: GenerateArgs) -> Result<()> {
    let root = match (&args.artifacts, &args.video) {
        (Some(dir), _) => dir.clone(),
        (None, Some(id)) => ctx.run_dir(id),
        (None, None) => return Err(Error::input("pass --artifacts or --video")),
    };
    if !root.is_dir() {
        return Err(Error::NotFound(format!(
            "artifact directory {}",
            root.display()
        )));
    }
    let dir = ArtifactDir::new(&root)?;
    let asset = load_asset(&dir)?;
    let (context, ranking) = load_context(&asset, &dir)?.ok_or_else(|| {
        Error::Conflict(format!(
            "video {} has no summary yet; run the pipeline first",
            asset.video_id
        ))
    })?;
    let count = args.count.unwrap_or(ctx.config.generation.batch_size);
    let batch = args.batch.unwrap_or_else(|| first_free_batch(&root));
    if batch == 0 {
        return Err(Error::input("batch 0 belongs to the pipeline run"));
    }

    let gateways = ctx.config.build_gateways(ctx.log.clone())?;
    let index = if args.no_persona {
        None
    } else {
        let stored = root.join(RUN_INDEX_FILE);
        let index =
            if args.source.index.is_none() && args.source.personas.is_none() && stored.is_file() {
                Some(PersonaIndex::load(&stored, gateways.embedder.model_name())?)
            } else {
                ctx.persona_index(
                    &args.source,
                    gateways.embedder.as_ref(),
                    &mut BTreeMap::new(),
                )
                .await?
            };
        Some(Arc::new(index.ok_or_else(|| {
            Error::Config("no persona index available; pass --personas or --no-persona".into())
        })?))
    };
    let engine = ctx
        .config
        .build_engine(gateways.chat.clone(), ctx.clock.clone())?;
    let settings = PipelineSettings::from_config(&ctx.config, args.no_persona);
    let pipeline = Pipeline::new(gateways, engine, index, ctx.clock.clone(), settings)?;
    let ranking = if args.no_persona { Vec::new() } else { ranking };
    let comments = pipeline.generate(&context, &ranking, count, batch).await?;

    let out = args
        .out
        .unwrap_or_else(|| root.join(format!("comments-batch-{batch}.json")));
    write_json_atomic(&out, &comments)?;
    let (primary, thread) = kind_counts(&comments);
    print_json(&json!({
        "video_id": asset.video_id,
        "batch": batch,
        "total": comments.len(),
        "primary": primary,
        "thread": thread,
        "out": out,
    }))?;
    Ok(())
}

fn parse_corpus_flag(flag: &str) -> Result<(String, PathBuf)> {
    match flag.split_once('=') {
        Some((label, path)) if !label.trim().is_empty() && !path.is_empty() => {
            Ok((label.trim().to_string(), PathBuf::from(path)))
        }
        _ => Err(Error::input(format!(
            "corpus must be given as label=path, got `{flag}`"
        ))),
    }
}

async fn eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let corpora = args
        .corpora
        .iter()
        .map(|flag| {
            let (label, path) = parse_corpus_flag(flag)?;
            CommentCorpus::load(label, &path)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = args.summary.as_deref().map(load_summary_text).transpose()?;
    let mut config = EvalConfig {
        seed: ctx.config.seed,
        self_bleu_subsample: args.self_bleu_subsample,
        judge_sample: args.judge_sample,
        ..EvalConfig::default()
    };
    if let Some(max_pairs) = args.max_pairs {
        config.max_pairs = max_pairs;
    }
    if !args.lexical_only {
        config.embedder = Some(ctx.embedder()?);
        config.judges = ctx.config.build_judges(ctx.log.clone())?;
    }
    let reports = evaluate(&corpora, summary.as_deref(), &config).await?;
    match &args.out {
        Some(path) => {
            let csv = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let text = if csv {
                report_to_csv(&reports)?
            } else {
                report_to_json(&reports)?
            };
            write_atomic(path, text.as_bytes())?;
            eprintln!("wrote {} metric rows to {}", reports.len(), path.display());
        }
        None => emit(&report_to_json(&reports)?)?,
    }
    Ok(())
}

async fn serve(ctx: Context, args: ServeArgs) -> Result<()> {
    let bind = args.bind.unwrap_or_else(|| ctx.config.service.bind.clone());
    let data_dir = args.data.unwrap_or_else(|| ctx.workdir.join("data"));
    let gateways = ctx.config.build_gateways(ctx.log.clone())?;
    let index = ctx
        .persona_index(
            &PersonaSource {
                personas: None,
                index: None,
            },
            gateways.embedder.as_ref(),
            &mut BTreeMap::new(),
        )
        .await?
        .map(Arc::new);
    let service = Service::start(ServiceOptions {
        config: ctx.config,
        data_dir,
        gateways,
        index,
        clock: ctx.clock,
    })?;
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {bind}: {e}")))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    service.serve(listener).await
}

fn fixture_files(args: &FixtureArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let video = fixture::write_video(&args.out, "clip", args.seconds, true)?;
    let personas = args.out.join("personas.txt");
    fixture::write_personas(&personas, args.personas)?;
    print_json(&json!({ "video": video, "personas": personas }))?;
    Ok(())
}

//! Acceptance suite for the offline pipeline, metrics and service. Every
//! criterion runs against mock backends and prints one PASS or FAIL line.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;
#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reelcrowd_core::clock::FixedClock;
use reelcrowd_core::comments::{
    plan_batch, validate_forest, Comment, CommentEngine, CommentKind, IdentityPool,
};
use reelcrowd_core::config::AppConfig;
use reelcrowd_core::fixture;
use reelcrowd_core::fsutil::write_json_atomic;
use reelcrowd_core::gateway::{
    CallLog, ChatExchange, ChatModel, Embedder, EmbeddingVector, Gateways, MockCaptioner, MockChat,
    MockEmbedder, TranscriptSegment,
};
use reelcrowd_core::metrics::{
    embedding_group_score, rouge_l_precision, rouge_n_precision, self_bleu, tokenize, BLEU_EPSILON,
};
use reelcrowd_core::persona::{
    build_index, cosine_similarity, rank_personas, Persona, PersonaSource, RankingOptions,
};
use reelcrowd_core::pipeline::{ArtifactDir, NoProgress, Pipeline, PipelineSettings, Stage};
use reelcrowd_core::prompt::tags;
use reelcrowd_core::summary::build_summary_prompt;
use reelcrowd_core::video::{
    align_dialogue, assemble_panels, caption_panels, sampled_frame_count, FrameCaption,
    SampledFrame, VideoAsset, VideoMetadata, PANEL_FRAMES,
};
use reelcrowd_core::Error;
use reelcrowd_service::{JobKind, JobRunner, Store};

/// Tolerances pinned by the criteria.
const ORACLE_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;
const SCALE_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const QUOTA_RUNTIME: Duration = Duration::from_secs(10);

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("runtime")
}

const VOCAB: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "garlic", "bread", "space", "wow", "a", "great", "video",
    "bake", "crust", "vacuum", "chamber",
];

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    (0..rng.gen_range(1..=max_len))
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
        .collect()
}

fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    (0..rng.gen_range(2..=10))
        .map(|_| random_tokens(rng, 20))
        .collect()
}

/// Round-half-up share of 70%, found by scanning every candidate.
fn quota_oracle(total: usize) -> usize {
    let mut best = 0;
    for p in 0..=total {
        let dist = (10 * p as i64 - 7 * total as i64).abs();
        let best_dist = (10 * best as i64 - 7 * total as i64).abs();
        if dist <= best_dist {
            best = p;
        }
    }
    best.max(1)
}

fn batch_quota() -> Outcome {
    for total in 1..=50 {
        let plan = plan_batch(total).map_err(|e| e.to_string())?;
        let want = quota_oracle(total);
        ensure!(
            plan.primary_count == want && plan.primary_count + plan.thread_count == total,
            "plan_batch({total}) = {}/{} but expected {want} primary",
            plan.primary_count,
            plan.thread_count
        );
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::fixture(tmp.path(), 8);
    let run = common::pipeline_run(tmp.path(), 7, "run", &["--personas", "fx/personas.txt"]);
    ensure!(
        run.status.success(),
        "pipeline run failed: {}",
        common::stderr(&run)
    );
    let started = Instant::now();
    let out = common::run(
        tmp.path(),
        &[
            "--mock",
            "--seed",
            "7",
            "generate",
            "--artifacts",
            "run",
            "--count",
            "30",
        ],
    );
    let elapsed = started.elapsed();
    ensure!(
        out.status.success(),
        "generate failed: {}",
        common::stderr(&out)
    );
    let report = common::stdout_json(&out);
    let text = std::fs::read_to_string(tmp.path().join("run/comments-batch-1.json"))
        .map_err(|e| e.to_string())?;
    let comments: Vec<Comment> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let count = |k: CommentKind| comments.iter().filter(|c| c.kind == k).count();
    ensure!(
        count(CommentKind::Primary) == 21 && count(CommentKind::Thread) == 9,
        "got {} primary and {} thread",
        count(CommentKind::Primary),
        count(CommentKind::Thread)
    );
    ensure!(
        report["primary"] == 21 && report["thread"] == 9,
        "stdout report {report}"
    );
    validate_forest(&comments).map_err(|e| e.to_string())?;
    ensure!(elapsed < QUOTA_RUNTIME, "generate took {elapsed:?}");
    Ok(format!(
        "21/9 split, sweep 1..=50 exact, generate in {elapsed:.2?}"
    ))
}

/// Maps every text containing "twin" to one fixed vector.
struct TwinEmbedder;

#[async_trait]
impl Embedder for TwinEmbedder {
    fn model_name(&self) -> &str {
        "twin"
    }

    async fn embed(&self, text: &str) -> reelcrowd_core::Result<EmbeddingVector> {
        if text.contains("twin") {
            EmbeddingVector::new(vec![1.0, 1.0, 0.0, 0.0])
        } else {
            EmbeddingVector::new(MockEmbedder::vector_for(text, 4))
        }
    }
}

async fn persona_retrieval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut texts = HashSet::new();
    while texts.len() < 200 {
        let words = random_tokens(&mut rng, 12).join(" ");
        texts.insert(format!("i am persona {}. {words}.", texts.len()));
    }
    let personas: Vec<Persona> = texts
        .iter()
        .map(|t| Persona::new(None, t, PersonaSource::Dataset).unwrap())
        .collect();
    let embedder = MockEmbedder::new(64, CallLog::new());
    let index = build_index(&personas, &embedder, 8)
        .await
        .map_err(|e| e.to_string())?;
    let options = RankingOptions {
        top_k: 30,
        min_score: None,
    };
    for q in 0..50 {
        let keywords: Vec<String> = (0..rng.gen_range(1..=6))
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
            .collect();
        let got = rank_personas(&index, &keywords, &embedder, options)
            .await
            .map_err(|e| e.to_string())?;
        let query = MockEmbedder::vector_for(&keywords.join(", "), 64);
        let scored: Vec<(String, f64)> = index
            .rows()
            .iter()
            .map(|r| (r.persona_id.clone(), oracles::cosine(&r.vector, &query)))
            .collect();
        let want = oracles::top_k(&scored, 30);
        ensure!(
            got.len() == want.len(),
            "query {q}: {} results, oracle {}",
            got.len(),
            want.len()
        );
        for (g, w) in got.iter().zip(&want) {
            ensure!(
                g.persona_id == w.0 && (g.score - w.1).abs() < SYMMETRY_TOL,
                "query {q}: {} {} vs oracle {} {}",
                g.persona_id,
                g.score,
                w.0,
                w.1
            );
        }
    }

    // exact ties resolve by ascending persona id whatever the input order
    let mut twins: Vec<Persona> = (0..6)
        .map(|i| Persona::new(None, &format!("twin number {i}"), PersonaSource::Dataset).unwrap())
        .collect();
    let forward = build_index(&twins, &TwinEmbedder, 2)
        .await
        .map_err(|e| e.to_string())?;
    twins.reverse();
    let backward = build_index(&twins, &TwinEmbedder, 2)
        .await
        .map_err(|e| e.to_string())?;
    let keys = vec!["twin".to_string()];
    let a = rank_personas(&forward, &keys, &TwinEmbedder, options)
        .await
        .map_err(|e| e.to_string())?;
    let b = rank_personas(&backward, &keys, &TwinEmbedder, options)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(a == b, "tie order depends on input order");
    let ids: Vec<&str> = a.iter().map(|r| r.persona_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    ensure!(ids == sorted, "ties not in id order: {ids:?}");
    Ok("200 personas x 50 queries equal the oracle; ties by id".into())
}

fn cosine_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cos = |a: &[f64], b: &[f64]| cosine_similarity(a, b).map_err(|e| e.to_string());
    for i in 0..1000 {
        let dim = rng.gen_range(2..=64);
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let ab = cos(&a, &b)?;
        ensure!(
            (ab - cos(&b, &a)?).abs() <= SYMMETRY_TOL,
            "pair {i}: asymmetric"
        );
        ensure!(
            (ab - oracles::cosine(&a, &b)).abs() <= SYMMETRY_TOL,
            "pair {i}: differs from oracle"
        );
        let c: f64 = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        ensure!(
            (cos(&scaled, &b)? - ab).abs() <= SCALE_TOL,
            "pair {i}: not scale invariant"
        );
        ensure!(
            (cos(&a, &a)? - 1.0).abs() <= IDENTITY_TOL,
            "pair {i}: self similarity"
        );
        // b with its projection on a removed
        let proj = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
            / a.iter().map(|x| x * x).sum::<f64>();
        let ortho: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - proj * x).collect();
        if ortho.iter().any(|x| x.abs() > 1e-6) {
            ensure!(
                cos(&a, &ortho)?.abs() <= SYMMETRY_TOL,
                "pair {i}: orthogonal not 0"
            );
        }
        let axis =
            |k: usize| -> Vec<f64> { (0..dim).map(|j| if j == k { 2.5 } else { 0.0 }).collect() };
        ensure!(cos(&axis(0), &axis(1))? == 0.0, "axes not orthogonal");
        ensure!(cos(&axis(0), &axis(0))? == 1.0, "axis self similarity");
    }
    Ok("1000 pairs: symmetry, scale, identity, orthogonality".into())
}

async fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let embedder = MockEmbedder::new(16, CallLog::new());
    for case in 0..25 {
        let corpus = random_corpus(&mut rng);
        let summary = random_tokens(&mut rng, 20);
        let got = self_bleu(&corpus, 4, None, 0).map_err(|e| e.to_string())?;
        let want = oracles::self_bleu(&corpus, 4, BLEU_EPSILON);
        ensure!(
            (got - want).abs() < ORACLE_TOL,
            "case {case}: self-bleu {got} vs {want}"
        );
        for c in &corpus {
            for n in 1..=2 {
                let (g, w) = (
                    rouge_n_precision(c, &summary, n),
                    oracles::rouge_n(c, &summary, n),
                );
                ensure!(
                    (g - w).abs() < ORACLE_TOL,
                    "case {case}: rouge-{n} {g} vs {w}"
                );
            }
            let (g, w) = (
                rouge_l_precision(c, &summary),
                oracles::rouge_l(c, &summary),
            );
            ensure!(
                (g - w).abs() < ORACLE_TOL,
                "case {case}: rouge-l {g} vs {w}"
            );
        }
        let got = embedding_group_score(&corpus, &embedder, 1000, 0)
            .await
            .map_err(|e| e.to_string())?;
        let want = oracles::group_score(&corpus, &|t| MockEmbedder::vector_for(t, 16));
        ensure!(
            (got.value - want).abs() < ORACLE_TOL,
            "case {case}: group score {} vs {want}",
            got.value
        );
    }
    let rouge = rouge_n_precision(
        &tokenize("garlic bread space"),
        &tokenize("they bake garlic bread in a vacuum chamber"),
        1,
    );
    ensure!((rouge - 2.0 / 3.0).abs() < 1e-12, "rouge-1 fixture {rouge}");
    let dup = vec![tokenize("so good"), tokenize("so good")];
    let sb = self_bleu(&dup, 4, None, 0).map_err(|e| e.to_string())?;
    ensure!(sb == 1.0, "self-bleu on duplicates {sb}");
    Ok("25 micro-corpora within 1e-9; ROUGE-1 = 2/3, duplicate Self-BLEU = 1".into())
}

fn duplication_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = 0;
    for case in 0..20 {
        let corpus = random_corpus(&mut rng);
        let before = self_bleu(&corpus, 4, None, 0).map_err(|e| e.to_string())?;
        for (i, member) in corpus.iter().enumerate() {
            let mut grown = corpus.clone();
            grown.push(member.clone());
            let after = self_bleu(&grown, 4, None, 0).map_err(|e| e.to_string())?;
            ensure!(
                after >= before - 1e-12,
                "case {case}, member {i}: {after} < {before}"
            );
            checks += 1;
        }
    }
    Ok(format!("{checks} duplications, none lowered Self-BLEU"))
}

fn solid_frame(index: usize, timestamp: f64) -> SampledFrame {
    let color = Rgb([(index % 256) as u8, (index / 256) as u8, 77]);
    SampledFrame {
        index,
        timestamp,
        image: RgbImage::from_pixel(8, 6, color),
    }
}

async fn panel_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let captioner = MockCaptioner::new(CallLog::new()).with_jitter(15);
    let mut durations: Vec<f64> = vec![1.0, 300.0];
    durations.extend((0..30).map(|_| rng.gen_range(1.0..=300.0)));
    for duration in durations {
        let rate = 1.0;
        let n = sampled_frame_count(duration, rate);
        let frames: Vec<SampledFrame> = (0..n).map(|i| solid_frame(i, i as f64 / rate)).collect();
        let mut transcript = Vec::new();
        let mut t = 0.0;
        while t < duration {
            let len = rng.gen_range(0.5..6.0);
            transcript.push(TranscriptSegment::new(
                t,
                (t + len).min(duration),
                format!("line {t:.1}"),
            ));
            t += len + rng.gen_range(0.0..3.0);
        }
        let window = PANEL_FRAMES as f64 / rate;
        let dialogue = align_dialogue(&frames, &transcript, rate, window);
        let panels = assemble_panels(&frames, &dialogue).map_err(|e| e.to_string())?;
        let expected_panels = n.div_ceil(4);
        ensure!(
            panels.len() == expected_panels && dialogue.len() == expected_panels,
            "{duration:.1}s: {} panels for {n} frames",
            panels.len()
        );
        let mut seen = Vec::new();
        for (p, panel) in panels.iter().enumerate() {
            ensure!(panel.panel_index == p, "{duration:.1}s: panel order");
            ensure!(
                panel.composite.dimensions() == (16, 12),
                "{duration:.1}s: composite is not 2x2"
            );
            for (slot, &f) in panel.frame_indices.iter().enumerate() {
                let want = (4 * p + slot).min(n - 1);
                ensure!(
                    f == want,
                    "{duration:.1}s: panel {p} slot {slot} holds frame {f}"
                );
                let px = panel
                    .composite
                    .get_pixel((slot % 2) as u32 * 8 + 4, (slot / 2) as u32 * 6 + 3);
                ensure!(
                    px == frames[f].image.get_pixel(0, 0),
                    "{duration:.1}s: tile pixels"
                );
                if 4 * p + slot < n {
                    seen.push(f);
                }
            }
            ensure!(
                dialogue[p].panel_index == p && panel.dialogue == dialogue[p].text,
                "{duration:.1}s: dialogue"
            );
        }
        ensure!(
            seen == (0..n).collect::<Vec<_>>(),
            "{duration:.1}s: frames not partitioned"
        );
        let captions: Vec<FrameCaption> = caption_panels(&panels, &captioner, 16, |_, _| {})
            .await
            .map_err(|e| e.to_string())?;
        ensure!(
            captions.len() == panels.len(),
            "{duration:.1}s: caption count"
        );
        ensure!(
            captions
                .windows(2)
                .all(|w| w[0].timestamp < w[1].timestamp && w[0].panel_index < w[1].panel_index),
            "{duration:.1}s: captions out of order"
        );
    }
    Ok("32 durations in 1..=300 s, jittered captioner stays ordered".into())
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::fixture(tmp.path(), 10);
    let personas = ["--personas", "fx/personas.txt"];
    for out in ["first", "second"] {
        let run = common::pipeline_run(tmp.path(), 7, out, &personas);
        ensure!(
            run.status.success(),
            "{out} run failed: {}",
            common::stderr(&run)
        );
    }
    let read = |p: &str| std::fs::read(tmp.path().join(p)).map_err(|e| e.to_string());
    ensure!(
        read("first/run_manifest.json")? == read("second/run_manifest.json")?,
        "manifests differ"
    );
    ensure!(
        read("first/comments.json")? == read("second/comments.json")?,
        "comments differ"
    );
    let comments: Vec<Comment> =
        serde_json::from_slice(&read("first/comments.json")?).map_err(|e| e.to_string())?;
    ensure!(comments.len() == 30, "{} comments", comments.len());
    let other = common::pipeline_run(tmp.path(), 8, "third", &personas);
    ensure!(other.status.success(), "seed 8 run failed");
    ensure!(
        read("first/comments.json")? != read("third/comments.json")?,
        "seed has no effect"
    );
    Ok("seed 7 twice: identical manifest and comments; seed 8 differs".into())
}

/// Counts every chat call, including ones the backend would reject.
struct CountingChat {
    inner: MockChat,
    calls: AtomicUsize,
}

#[async_trait]
impl ChatModel for CountingChat {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn context_budget(&self) -> usize {
        self.inner.context_budget()
    }

    async fn complete(&self, exchange: &ChatExchange) -> reelcrowd_core::Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(exchange).await
    }
}

/// About 250k tokens of captions at four characters per token.
fn oversized_captions() -> Vec<FrameCaption> {
    (0..100)
        .map(|i| FrameCaption {
            panel_index: i,
            timestamp: 4.0 * i as f64,
            text: "frame detail ".repeat(770),
        })
        .collect()
}

async fn budget_guard() -> Outcome {
    let metadata = VideoMetadata {
        title: "Long".into(),
        description: String::new(),
        author: String::new(),
    };
    match build_summary_prompt(&oversized_captions(), &[], &metadata, None, 200_000, 0.0) {
        Err(Error::Budget {
            budget,
            overflow,
            estimated,
        }) => {
            ensure!(
                budget == 200_000 && overflow == estimated - budget && overflow > 0,
                "budget numbers"
            );
        }
        other => return Err(format!("prompt builder returned {other:?}")),
    }

    // through the pipeline: stored captions resume straight into summarizing
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let video = fixture::write_video(tmp.path(), "clip", 4, false).map_err(|e| e.to_string())?;
    let asset =
        VideoAsset::ingest("v-long", video, metadata, None, None).map_err(|e| e.to_string())?;
    let dir = ArtifactDir::new(tmp.path().join("art")).map_err(|e| e.to_string())?;
    write_json_atomic(&dir.transcript(), &Vec::<TranscriptSegment>::new())
        .map_err(|e| e.to_string())?;
    write_json_atomic(&dir.captions(), &oversized_captions()).map_err(|e| e.to_string())?;
    let log = CallLog::new();
    let chat = Arc::new(CountingChat {
        inner: MockChat::new(log.clone()),
        calls: AtomicUsize::new(0),
    });
    let mut gateways = Gateways::mock(log);
    gateways.chat = chat.clone();
    let clock = Arc::new(FixedClock::epoch());
    let engine = CommentEngine::new(
        chat.clone(),
        Arc::new(IdentityPool::builtin(0)),
        clock.clone(),
    );
    let config = AppConfig::default();
    let pipeline = Pipeline::new(
        gateways,
        engine,
        None,
        clock,
        PipelineSettings::from_config(&config, true),
    )
    .map_err(|e| e.to_string())?;
    let err = pipeline
        .run(&asset, &dir, &NoProgress)
        .await
        .err()
        .ok_or("run succeeded")?;
    let message = err.to_string();
    ensure!(
        matches!(err.root(), Error::Budget { .. }),
        "wrong error: {message}"
    );
    ensure!(
        message.contains("summarizing")
            && message.contains("exceeds the 200000-token context budget by"),
        "message: {message}"
    );
    ensure!(chat.calls.load(Ordering::SeqCst) == 0, "chat was called");

    // and from the command line: exit code 4, manifest names the stage
    common::fixture(tmp.path(), 4);
    let out_dir = tmp.path().join("cli");
    std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
    write_json_atomic(
        &out_dir.join("transcript.json"),
        &Vec::<TranscriptSegment>::new(),
    )
    .map_err(|e| e.to_string())?;
    write_json_atomic(&out_dir.join("captions.json"), &oversized_captions())
        .map_err(|e| e.to_string())?;
    let out = common::pipeline_run(tmp.path(), 7, "cli", &["--no-persona"]);
    ensure!(
        out.status.code() == Some(4),
        "exit code {:?}",
        out.status.code()
    );
    ensure!(
        common::stderr(&out).contains("exceeds the 200000-token context budget by"),
        "stderr: {}",
        common::stderr(&out)
    );
    let manifest: serde_json::Value = serde_json::from_slice(
        &std::fs::read(out_dir.join("run_manifest.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        manifest["status"] == "failed" && manifest["failed_stage"] == "summarizing",
        "manifest {manifest}"
    );
    Ok(format!("rejected before any chat call: {message}"))
}

/// Never answers summary prompts, like a worker stuck mid-job.
struct HangingChat(MockChat);

#[async_trait]
impl ChatModel for HangingChat {
    fn model_name(&self) -> &str {
        self.0.model_name()
    }

    fn context_budget(&self) -> usize {
        self.0.context_budget()
    }

    async fn complete(&self, exchange: &ChatExchange) -> reelcrowd_core::Result<String> {
        if exchange
            .last_user_message()
            .unwrap_or_default()
            .contains(tags::SUMMARIZE)
        {
            std::future::pending::<()>().await;
        }
        self.0.complete(exchange).await
    }
}

async fn service_pipeline(gateways: Gateways, personas: &[Persona]) -> Arc<Pipeline> {
    let index = build_index(personas, gateways.embedder.as_ref(), 4)
        .await
        .unwrap();
    let clock = Arc::new(FixedClock::epoch());
    let engine = CommentEngine::new(
        gateways.chat.clone(),
        Arc::new(IdentityPool::builtin(0)),
        clock.clone(),
    );
    let settings = PipelineSettings::from_config(&AppConfig::default(), false);
    Arc::new(Pipeline::new(gateways, engine, Some(Arc::new(index)), clock, settings).unwrap())
}

async fn wait_for(store: &Store, job_id: &str, stage: Stage) -> Result<(), String> {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let job = store.job(job_id).map_err(|e| e.to_string())?;
        if job.stage == stage {
            return Ok(());
        }
        ensure!(job.stage != Stage::Failed, "job failed: {:?}", job.error);
        ensure!(
            Instant::now() < deadline,
            "timed out waiting for {stage}, at {}",
            job.stage
        );
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn crash_resume() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let db = tmp.path().join("jobs.db");
    let video = fixture::write_video(tmp.path(), "clip", 12, true).map_err(|e| e.to_string())?;
    let metadata = VideoMetadata {
        title: "Crash test".into(),
        description: String::new(),
        author: String::new(),
    };
    let asset =
        VideoAsset::ingest("v-crash", video, metadata, None, None).map_err(|e| e.to_string())?;
    let personas: Vec<Persona> = fixture::personas(40)
        .iter()
        .map(|t| Persona::new(None, t, PersonaSource::Dataset).unwrap())
        .collect();
    let clock = Arc::new(FixedClock::epoch());

    let first_log = CallLog::new();
    let mut gateways = Gateways::mock(first_log.clone());
    gateways.chat = Arc::new(HangingChat(MockChat::new(first_log.clone())));
    let pipeline = service_pipeline(gateways, &personas).await;
    let store = Arc::new(Store::open(&db).map_err(|e| e.to_string())?);
    store
        .insert_video(&asset, None, clock.0)
        .map_err(|e| e.to_string())?;
    let job = store
        .create_job("j-crash", "v-crash", JobKind::Pipeline, 30, clock.0)
        .map_err(|e| e.to_string())?;
    let runner = JobRunner::new(store.clone(), pipeline, data.clone(), clock.clone(), 2);
    runner.enqueue(&job);
    wait_for(&store, "j-crash", Stage::Summarizing).await?;
    let before = first_log.counts();
    ensure!(
        before.transcribe == 1 && before.caption == 3,
        "first attempt counts {before:?}"
    );
    runner.abort_all();
    drop(runner);
    drop(store);

    let log = CallLog::new();
    let pipeline = service_pipeline(Gateways::mock(log.clone()), &personas).await;
    let store = Arc::new(Store::open(&db).map_err(|e| e.to_string())?);
    let runner = JobRunner::new(store.clone(), pipeline, data, clock.clone(), 2);
    let resumed = runner.resume().map_err(|e| e.to_string())?;
    ensure!(resumed == 1, "{resumed} jobs resumed");
    wait_for(&store, "j-crash", Stage::Done).await?;
    let after = log.counts();
    ensure!(
        after.transcribe == 0 && after.caption == 0,
        "resume re-ran media stages: {after:?}"
    );
    let comments = store.comments("v-crash").map_err(|e| e.to_string())?;
    ensure!(
        comments.len() == 30,
        "{} comments after resume",
        comments.len()
    );
    Ok(format!(
        "resumed at summarizing; transcribe=0 caption=0 chat={} on restart",
        after.complete
    ))
}

fn write_corpus(dir: &Path, name: &str, lines: &[&str]) {
    std::fs::write(dir.join(name), lines.join("\n")).unwrap();
}

fn report_schema() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let corpora: [(&str, Vec<&str>); 3] = [
        (
            "real",
            vec![
                "wow the crust on that bread",
                "garlic bread in space, what a time",
                "wow the crust on that bread",
            ],
        ),
        (
            "simulated",
            vec![
                "as a baker the vacuum chamber trick fascinates me",
                "i wonder how the dough rises with no air",
                "my kids would love this experiment",
            ],
        ),
        (
            "ablation",
            vec!["great video", "nice bread", "cool experiment"],
        ),
    ];
    for (label, lines) in &corpora {
        write_corpus(dir, &format!("{label}.txt"), lines);
    }
    std::fs::write(
        dir.join("summary.txt"),
        "Two hosts bake garlic bread inside a vacuum chamber and taste the crust.",
    )
    .unwrap();
    std::fs::write(
        dir.join("eval.toml"),
        "[[gateways.judges]]\nbackend = \"mock\"\nmodel_name = \"mock-judge\"\n",
    )
    .unwrap();
    let mut args = vec![
        "--mock",
        "--config",
        "eval.toml",
        "eval",
        "--summary",
        "summary.txt",
        "--out",
        "report.json",
    ];
    let flags: Vec<String> = corpora
        .iter()
        .map(|(l, _)| format!("--corpus={l}={l}.txt"))
        .collect();
    args.extend(flags.iter().map(String::as_str));
    let out = common::run(dir, &args);
    ensure!(
        out.status.success(),
        "eval failed: {}",
        common::stderr(&out)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let rows = report["reports"].as_array().ok_or("no reports array")?;
    let metrics = [
        "average_length",
        "distinct_1",
        "distinct_2",
        "distinct_3",
        "distinct_4",
        "self_bleu",
        "self_bleu_equalized",
        "rouge_1",
        "rouge_2",
        "rouge_l",
        "embedding_group_score",
        "embedding_relevance",
        "llm_relevance:mock-judge",
    ];
    for (label, lines) in &corpora {
        for metric in metrics {
            let row = rows
                .iter()
                .find(|r| r["corpus_label"] == *label && r["metric_name"] == metric)
                .ok_or_else(|| format!("{label} lacks {metric}"))?;
            ensure!(row["value"].is_f64(), "{label} {metric} value");
            ensure!(
                row["sample_size"].as_u64().is_some_and(|n| n > 0),
                "{label} {metric} sample size"
            );
            ensure!(
                row["params"].as_object().is_some_and(|p| !p.is_empty()),
                "{label} {metric} params empty"
            );
        }
        let avg = rows
            .iter()
            .find(|r| r["corpus_label"] == *label && r["metric_name"] == "average_length")
            .and_then(|r| r["value"].as_f64())
            .unwrap();
        let want =
            lines.iter().map(|l| l.chars().count()).sum::<usize>() as f64 / lines.len() as f64;
        ensure!(
            (avg - want).abs() < 1e-12,
            "{label} average length {avg} vs {want}"
        );
    }
    let mut csv_args = args.clone();
    let pos = csv_args.iter().position(|a| *a == "report.json").unwrap();
    csv_args[pos] = "report.csv";
    let out = common::run(dir, &csv_args);
    ensure!(
        out.status.success(),
        "csv eval failed: {}",
        common::stderr(&out)
    );
    let csv = std::fs::read_to_string(dir.join("report.csv")).map_err(|e| e.to_string())?;
    ensure!(
        csv.lines().next() == Some("metric,real,simulated,ablation,params"),
        "csv header {:?}",
        csv.lines().next()
    );
    for metric in metrics {
        ensure!(
            csv.lines().any(|l| l.starts_with(&format!("{metric},"))),
            "csv lacks {metric}"
        );
    }
    Ok(format!(
        "3 corpora x {} metrics with params, JSON and CSV",
        metrics.len()
    ))
}

fn main() {
    let rt = runtime();
    let criteria: Vec<(&str, Check)> = vec![
        ("batch quota", Box::new(batch_quota)),
        (
            "persona retrieval exactness",
            Box::new(|| rt.block_on(persona_retrieval())),
        ),
        ("cosine properties", Box::new(cosine_properties)),
        (
            "metric oracle equivalence",
            Box::new(|| rt.block_on(metric_oracles())),
        ),
        (
            "self-bleu duplication monotonicity",
            Box::new(duplication_monotonicity),
        ),
        (
            "panel and alignment invariants",
            Box::new(|| rt.block_on(panel_invariants())),
        ),
        ("end-to-end determinism", Box::new(end_to_end_determinism)),
        ("budget guard", Box::new(|| rt.block_on(budget_guard()))),
        ("crash resume", Box::new(|| rt.block_on(crash_resume()))),
        ("report schema", Box::new(report_schema)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!(
                "PASS {:>2} {name} ({:.2?}): {detail}",
                i + 1,
                started.elapsed()
            ),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}

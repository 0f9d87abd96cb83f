//! Diversity and relevance scores over comment corpora.

mod embedding;
mod judge;
mod lexical;
mod stats;
mod text;

pub use embedding::{
    embedding_group_score, embedding_relevance, greedy_match, sample_pairs, GreedyMatch,
    GroupScore, TokenVectors, DEFAULT_MAX_PAIRS,
};
pub use judge::{build_judge_prompt, llm_relevance, parse_score};
pub use lexical::{
    distinct_ngrams, lcs_len, rouge_l_precision, rouge_n_precision, self_bleu, sentence_bleu,
    DistinctScore, BLEU_EPSILON, DEFAULT_MAX_N,
};
pub use stats::{
    bonferroni, compare_columns, wilcoxon_signed_rank, PairedComparison, WilcoxonMethod,
    WilcoxonResult, DEFAULT_ALPHA,
};
pub use text::tokenize;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatModel, Embedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentCorpus {
    pub label: String,
    pub comments: Vec<String>,
}

impl CommentCorpus {
    pub fn new(label: impl Into<String>, comments: Vec<String>) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::input("corpus label is empty"));
        }
        if comments.is_empty() {
            return Err(Error::input(format!("corpus {label} has no comments")));
        }
        if comments.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::input(format!(
                "corpus {label} contains an empty comment"
            )));
        }
        Ok(Self { label, comments })
    }

    /// One comment per line, or JSON lines carrying a `body` field.
    /// Blank lines are skipped.
    pub fn parse(label: impl Into<String>, text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            body: String,
        }
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let json = lines
            .first()
            .is_some_and(|l| l.starts_with('{') && serde_json::from_str::<Row>(l).is_ok());
        let comments = if json {
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str::<Row>(l)
                        .map(|r| r.body)
                        .map_err(|e| Error::input(format!("corpus line {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            lines.iter().map(|l| l.to_string()).collect()
        };
        Self::new(label, comments)
    }

    pub fn load(label: impl Into<String>, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read corpus {}: {e}", path.display())))?;
        Self::parse(label, &text)
    }

    pub fn average_chars(&self) -> f64 {
        let total: usize = self.comments.iter().map(|c| c.chars().count()).sum();
        total as f64 / self.comments.len() as f64
    }

    pub fn tokens(&self) -> Vec<Vec<String>> {
        self.comments.iter().map(|c| tokenize(c)).collect()
    }
}

/// Reads a summary as plain text or as a stored summary JSON document.
pub fn load_summary_text(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read summary {}: {e}", path.display())))?;
    if let Ok(summary) = serde_json::from_str::<crate::summary::VideoSummary>(&text) {
        return Ok(summary.summary_text);
    }
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::input("summary file is empty"));
    }
    Ok(text.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus_label: String,
    pub metric_name: String,
    pub value: f64,
    pub normalized_value: Option<f64>,
    pub sample_size: usize,
    pub params: BTreeMap<String, String>,
}

#[derive(Clone)]
pub struct EvalConfig {
    pub distinct_orders: Vec<usize>,
    pub bleu_max_n: usize,
    /// Fixed Self-BLEU subsample; `None` scores the whole corpus.
    pub self_bleu_subsample: Option<usize>,
    /// Also report Self-BLEU at the smallest corpus size.
    pub equalize_self_bleu: bool,
    pub max_pairs: usize,
    pub seed: u64,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub judges: Vec<Arc<dyn ChatModel>>,
    /// Judge at most this many comments per corpus (canonical order, seeded).
    pub judge_sample: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            distinct_orders: vec![1, 2, 3, 4],
            bleu_max_n: DEFAULT_MAX_N,
            self_bleu_subsample: None,
            equalize_self_bleu: true,
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
            embedder: None,
            judges: Vec::new(),
            judge_sample: None,
        }
    }
}

fn params<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integrity(format!(
            "metric {name} produced a non-finite value"
        )))
    }
}

/// Runs the full battery on every corpus. Relevance metrics need the
/// summary; metrics that need an embedder or judge are skipped when none is
/// configured.
pub async fn evaluate(
    corpora: &[CommentCorpus],
    summary: Option<&str>,
    config: &EvalConfig,
) -> Result<Vec<MetricReport>> {
    if corpora.is_empty() {
        return Err(Error::input("evaluation needs at least one corpus"));
    }
    let mut labels = std::collections::HashSet::new();
    for c in corpora {
        if !labels.insert(c.label.as_str()) {
            return Err(Error::input(format!("duplicate corpus label {}", c.label)));
        }
    }
    if summary.is_none() {
        tracing::warn!("no summary given, reporting diversity metrics only");
    }
    let summary_tokens = summary.map(tokenize);
    let equal_size = corpora.iter().map(|c| c.comments.len()).min().unwrap_or(0);
    let mut out = Vec::new();
    for corpus in corpora {
        let tokens = corpus.tokens();
        let size = tokens.len();
        let mut push = |name: &str,
                        value: f64,
                        normalized: Option<f64>,
                        sample: usize,
                        p: BTreeMap<String, String>|
         -> Result<()> {
            out.push(MetricReport {
                corpus_label: corpus.label.clone(),
                metric_name: name.to_string(),
                value: finite(name, value)?,
                normalized_value: normalized.map(|v| finite(name, v)).transpose()?,
                sample_size: sample,
                params: p,
            });
            Ok(())
        };

        push(
            "average_length",
            corpus.average_chars(),
            None,
            size,
            params([("unit", "characters".into())]),
        )?;

        for &n in &config.distinct_orders {
            let d = distinct_ngrams(&tokens, n)?;
            push(
                &format!("distinct_{n}"),
                d.distinct,
                Some(d.normalized),
                size,
                params([
                    ("n", n.to_string()),
                    ("normalization", "distinct_over_total".into()),
                ]),
            )?;
        }

        if size >= 2 {
            let sub = config.self_bleu_subsample.filter(|k| *k < size);
            let v = self_bleu(&tokens, config.bleu_max_n, sub, config.seed)?;
            push(
                "self_bleu",
                v,
                None,
                sub.unwrap_or(size),
                params([
                    ("max_n", config.bleu_max_n.to_string()),
                    ("smoothing", format!("epsilon={BLEU_EPSILON}")),
                    ("seed", config.seed.to_string()),
                ]),
            )?;
            if config.equalize_self_bleu && equal_size >= 2 {
                let v = self_bleu(&tokens, config.bleu_max_n, Some(equal_size), config.seed)?;
                push(
                    "self_bleu_equalized",
                    v,
                    None,
                    equal_size,
                    params([
                        ("max_n", config.bleu_max_n.to_string()),
                        ("smoothing", format!("epsilon={BLEU_EPSILON}")),
                        ("subsample", equal_size.to_string()),
                        ("seed", config.seed.to_string()),
                    ]),
                )?;
            }
        } else {
            tracing::warn!(corpus = %corpus.label, "self-BLEU skipped for a single-comment corpus");
        }

        if let Some(summary_tokens) = &summary_tokens {
            for n in [1usize, 2] {
                let mean = tokens
                    .iter()
                    .map(|t| rouge_n_precision(t, summary_tokens, n))
                    .sum::<f64>()
                    / size as f64;
                push(
                    &format!("rouge_{n}"),
                    mean,
                    None,
                    size,
                    params([("n", n.to_string()), ("orientation", "precision".into())]),
                )?;
            }
            let mean = tokens
                .iter()
                .map(|t| rouge_l_precision(t, summary_tokens))
                .sum::<f64>()
                / size as f64;
            push(
                "rouge_l",
                mean,
                None,
                size,
                params([("orientation", "precision".into())]),
            )?;
        }

        if let Some(embedder) = &config.embedder {
            let model = embedder.model_name().to_string();
            if size >= 2 {
                let g = embedding_group_score(
                    &tokens,
                    embedder.as_ref(),
                    config.max_pairs,
                    config.seed,
                )
                .await?;
                push(
                    "embedding_group_score",
                    g.value,
                    None,
                    g.pairs,
                    params([
                        ("embedder", model.clone()),
                        ("pairs", g.pairs.to_string()),
                        ("seed", config.seed.to_string()),
                    ]),
                )?;
            }
            if let Some(summary_tokens) = &summary_tokens {
                let v = embedding_relevance(&tokens, summary_tokens, embedder.as_ref()).await?;
                push(
                    "embedding_relevance",
                    v,
                    None,
                    size,
                    params([("embedder", model)]),
                )?;
            }
        }

        if let (Some(summary), false) = (summary, config.judges.is_empty()) {
            let sample = lexical::canonical_subsample(
                &corpus
                    .comments
                    .iter()
                    .map(|c| vec![c.clone()])
                    .collect::<Vec<_>>(),
                config.judge_sample,
                config.seed,
            );
            for judge in &config.judges {
                let mut sum = 0.0;
                for c in &sample {
                    sum += llm_relevance(&c[0], summary, judge.as_ref()).await? as f64;
                }
                push(
                    &format!("llm_relevance:{}", judge.model_name()),
                    sum / sample.len() as f64,
                    None,
                    sample.len(),
                    params([
                        ("judge", judge.model_name().to_string()),
                        ("scale", "0-100".into()),
                    ]),
                )?;
            }
        }
    }
    Ok(out)
}

fn render_params(p: &BTreeMap<String, String>) -> String {
    p.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

type CellFn = Box<dyn Fn(&MetricReport) -> Option<String>>;

/// Metric rows by corpus columns, one extra row per normalized variant and
/// per sample size, with the parameters of each metric in the last column.
pub fn report_to_csv(reports: &[MetricReport]) -> Result<String> {
    let mut labels: Vec<&str> = Vec::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in reports {
        if !labels.contains(&r.corpus_label.as_str()) {
            labels.push(&r.corpus_label);
        }
        if !metrics.contains(&r.metric_name.as_str()) {
            metrics.push(&r.metric_name);
        }
    }
    let find = |m: &str, l: &str| {
        reports
            .iter()
            .find(|r| r.metric_name == m && r.corpus_label == l)
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric"];
    header.extend(&labels);
    header.push("params");
    w.write_record(&header).map_err(csv_err)?;
    for m in &metrics {
        let p = reports
            .iter()
            .find(|r| r.metric_name == *m)
            .map(|r| render_params(&r.params))
            .unwrap_or_default();
        let mut rows: Vec<(String, CellFn)> = vec![(
            m.to_string(),
            Box::new(|r: &MetricReport| Some(r.value.to_string())),
        )];
        if reports
            .iter()
            .any(|r| r.metric_name == *m && r.normalized_value.is_some())
        {
            rows.push((
                format!("{m}_normalized"),
                Box::new(|r: &MetricReport| r.normalized_value.map(|v| v.to_string())),
            ));
        }
        rows.push((
            format!("{m}_sample_size"),
            Box::new(|r: &MetricReport| Some(r.sample_size.to_string())),
        ));
        for (name, cell) in rows {
            let mut record = vec![name];
            for l in &labels {
                record.push(find(m, l).and_then(&cell).unwrap_or_default());
            }
            record.push(p.clone());
            w.write_record(&record).map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Integrity(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Integrity(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Integrity(format!("csv: {e}"))
}

pub fn report_to_json(reports: &[MetricReport]) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        reports: &'a [MetricReport],
    }
    Ok(serde_json::to_string_pretty(&Doc { reports })? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallLog, MockChat, MockEmbedder};

    fn corpora() -> Vec<CommentCorpus> {
        vec![
            CommentCorpus::new(
                "full_system",
                vec![
                    "As a baker I love the garlic bread trick".into(),
                    "The vacuum chamber part was wild".into(),
                    "Space bread when?".into(),
                ],
            )
            .unwrap(),
            CommentCorpus::new(
                "no_persona",
                vec!["Great video!".into(), "Great video!".into()],
            )
            .unwrap(),
            CommentCorpus::new(
                "real",
                vec![
                    "first".into(),
                    "garlic bread in a vacuum chamber lol".into(),
                    "who else is watching at 3am".into(),
                    "ok".into(),
                ],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn corpus_formats() {
        let plain = CommentCorpus::parse("a", "one\n\n two \n").unwrap();
        assert_eq!(plain.comments, ["one", "two"]);
        let json = CommentCorpus::parse("a", "{\"body\":\"x y\"}\n{\"body\":\"z\",\"extra\":1}\n")
            .unwrap();
        assert_eq!(json.comments, ["x y", "z"]);
        assert!(CommentCorpus::parse("a", "\n\n").is_err());
        assert!(CommentCorpus::parse("", "x").is_err());
        assert!((plain.average_chars() - 3.0).abs() < 1e-12);
    }

    #[tokio::test]
    async fn full_report_is_finite_and_complete() {
        let config = EvalConfig {
            embedder: Some(Arc::new(MockEmbedder::new(16, CallLog::new()))),
            judges: vec![
                Arc::new(MockChat::new(CallLog::new()).named("judge-a")),
                Arc::new(MockChat::new(CallLog::new()).named("judge-b")),
            ],
            ..EvalConfig::default()
        };
        let reports = evaluate(
            &corpora(),
            Some("Two hosts bake garlic bread in a vacuum chamber."),
            &config,
        )
        .await
        .unwrap();
        for label in ["full_system", "no_persona", "real"] {
            let names: Vec<&str> = reports
                .iter()
                .filter(|r| r.corpus_label == label)
                .map(|r| r.metric_name.as_str())
                .collect();
            for m in [
                "average_length",
                "distinct_1",
                "distinct_4",
                "self_bleu",
                "self_bleu_equalized",
                "rouge_1",
                "rouge_2",
                "rouge_l",
                "embedding_group_score",
                "embedding_relevance",
                "llm_relevance:judge-a",
                "llm_relevance:judge-b",
            ] {
                assert!(names.contains(&m), "{label} lacks {m}");
            }
        }
        assert!(reports
            .iter()
            .all(|r| r.value.is_finite() && r.sample_size >= 1));
        let eq: Vec<_> = reports
            .iter()
            .filter(|r| r.metric_name == "self_bleu_equalized")
            .collect();
        assert!(eq.iter().all(|r| r.sample_size == 2));
        let dup = reports
            .iter()
            .find(|r| r.corpus_label == "no_persona" && r.metric_name == "self_bleu")
            .unwrap();
        assert!((dup.value - 1.0).abs() < 1e-12);

        let csv = report_to_csv(&reports).unwrap();
        let first = csv.lines().next().unwrap();
        assert_eq!(first, "metric,full_system,no_persona,real,params");
        assert!(csv.lines().any(|l| l.starts_with("distinct_2_normalized,")));
        assert!(report_to_json(&reports)
            .unwrap()
            .contains("\"corpus_label\": \"real\""));
    }

    #[tokio::test]
    async fn lexical_only_without_gateways() {
        let reports = evaluate(
            &corpora()[..1],
            Some("garlic bread"),
            &EvalConfig::default(),
        )
        .await
        .unwrap();
        assert!(reports
            .iter()
            .all(|r| !r.metric_name.starts_with("embedding") && !r.metric_name.starts_with("llm")));
        assert!(evaluate(&[], Some("x"), &EvalConfig::default())
            .await
            .is_err());
    }
}

//! Collapses frame captions and the transcript into one summary plus a
//! keyword list.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::gateway::{check_budget, ChatExchange, ChatModel, TranscriptSegment};
use crate::prompt::{fields, tags, timestamp_label};
use crate::video::{FrameCaption, VideoMetadata};

pub const MAX_KEYWORDS: usize = 15;
pub const MAX_KEYWORD_WORDS: usize = 6;
pub const NO_NARRATION: &str = "No narration: the video has no transcribed speech.";

const SYSTEM: &str = "You watch videos on behalf of a creator and write faithful summaries of them. Describe only what the material supports.";

const FORMAT_INSTRUCTION: &str = "Write one faithful summary of the whole video, covering its topic, key moments and tone. Then list between 5 and 15 short keywords (at most six words each) that describe the video's subject matter.\nAnswer in exactly this format and nothing else:\nSUMMARY:\n<summary paragraph>\nKEYWORDS:\n<comma-separated keywords>";

const STERN_INSTRUCTION: &str = "IMPORTANT: your previous answer could not be read. You must start with a line `SUMMARY:` and include a line `KEYWORDS:` followed by comma-separated keywords.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub source_video: String,
    pub summary_text: String,
    pub keywords: Vec<String>,
    pub model_name: String,
    pub created_at: DateTime<Utc>,
}

/// One line of the chronological timeline handed to the model.
#[derive(Debug, Clone, PartialEq)]
pub enum TimelineEntry<'a> {
    Caption(&'a FrameCaption),
    Speech(&'a TranscriptSegment),
}

impl TimelineEntry<'_> {
    pub fn timestamp(&self) -> f64 {
        match self {
            TimelineEntry::Caption(c) => c.timestamp,
            TimelineEntry::Speech(s) => s.start,
        }
    }

    fn render(&self) -> String {
        let flat = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        match self {
            TimelineEntry::Caption(c) => format!(
                "[{}{} {}",
                timestamp_label(c.timestamp),
                fields::CAPTION_MARK,
                flat(&c.text)
            ),
            TimelineEntry::Speech(s) => format!(
                "[{}{} {}",
                timestamp_label(s.start),
                fields::SPEECH_MARK,
                flat(&s.text)
            ),
        }
    }
}

/// Merges captions and speech by timestamp; at equal times captions come first.
pub fn interleave<'a>(
    captions: &'a [FrameCaption],
    transcript: &'a [TranscriptSegment],
) -> Vec<TimelineEntry<'a>> {
    let mut entries: Vec<(f64, u8, usize, TimelineEntry<'a>)> = captions
        .iter()
        .enumerate()
        .map(|(i, c)| (c.timestamp, 0, i, TimelineEntry::Caption(c)))
        .chain(
            transcript
                .iter()
                .enumerate()
                .map(|(i, s)| (s.start, 1, i, TimelineEntry::Speech(s))),
        )
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    entries.into_iter().map(|e| e.3).collect()
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "none"
    } else {
        s.trim()
    }
}

pub fn build_summary_prompt(
    captions: &[FrameCaption],
    transcript: &[TranscriptSegment],
    metadata: &VideoMetadata,
    thumbnail_description: Option<&str>,
    budget: usize,
    temperature: f64,
) -> Result<ChatExchange> {
    if captions.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(Error::input("captions must be sorted by timestamp"));
    }
    let mut body = String::new();
    body.push_str(tags::SUMMARIZE);
    body.push('\n');
    body.push_str(&format!("{} {}\n", fields::TITLE, metadata.title.trim()));
    body.push_str(&format!(
        "{} {}\n",
        fields::DESCRIPTION,
        or_none(&metadata.description)
    ));
    body.push_str(&format!(
        "{} {}\n",
        fields::AUTHOR,
        or_none(&metadata.author)
    ));
    if let Some(thumb) = thumbnail_description {
        body.push_str(&format!("{} {}\n", fields::THUMBNAIL, or_none(thumb)));
    }
    body.push_str(
        "\nTimeline of the video (frame captions and narration in chronological order):\n",
    );
    for entry in interleave(captions, transcript) {
        body.push_str(&entry.render());
        body.push('\n');
    }
    if transcript.is_empty() {
        body.push_str(NO_NARRATION);
        body.push('\n');
    }
    body.push('\n');
    body.push_str(FORMAT_INSTRUCTION);

    let exchange = ChatExchange::single(SYSTEM, body, temperature);
    check_budget(&exchange, budget)?;
    Ok(exchange)
}

fn find_marker(text: &str, marker: &str, last: bool) -> Option<(usize, usize)> {
    // ASCII lowercasing keeps byte offsets intact
    let lower = text.to_ascii_lowercase();
    let needle = marker.to_ascii_lowercase();
    let at = if last {
        lower.rfind(&needle)
    } else {
        lower.find(&needle)
    }?;
    Some((at, at + needle.len()))
}

fn strip_list_marker(item: &str) -> &str {
    let item = item.trim();
    if let Some(rest) = item.strip_prefix(['-', '*', '•']) {
        return rest;
    }
    let digits = item.len() - item.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &item[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            if rest.starts_with(char::is_whitespace) {
                return rest;
            }
        }
    }
    item
}

fn clean_keyword(raw: &str) -> String {
    let trimmed = strip_list_marker(raw)
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '.' || c == '*')
        .trim();
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Trim, case-fold, dedupe, drop overlong phrases, keep at most fifteen.
pub fn normalize_keywords<'a, I: IntoIterator<Item = &'a str>>(raw: I) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in raw {
        let kw = clean_keyword(item);
        if kw.is_empty() || kw.split(' ').count() > MAX_KEYWORD_WORDS || out.contains(&kw) {
            continue;
        }
        out.push(kw);
        if out.len() == MAX_KEYWORDS {
            break;
        }
    }
    out
}

/// Splits a completion into its summary text and normalized keywords.
pub fn parse_completion(raw: &str) -> Result<(String, Vec<String>)> {
    let fail = |message: &str| Error::Parse {
        message: message.to_string(),
        raw: raw.to_string(),
    };
    let (_, summary_start) =
        find_marker(raw, "SUMMARY:", false).ok_or_else(|| fail("missing SUMMARY block"))?;
    let (kw_at, kw_end) = find_marker(&raw[summary_start..], "KEYWORDS:", true)
        .map(|(a, b)| (a + summary_start, b + summary_start))
        .ok_or_else(|| fail("missing KEYWORDS block"))?;
    let summary = raw[summary_start..kw_at]
        .trim()
        .trim_end_matches(['*', '#'])
        .trim()
        .to_string();
    if summary.is_empty() {
        return Err(fail("SUMMARY block is empty"));
    }
    let keywords = normalize_keywords(raw[kw_end..].split([',', '\n', ';']));
    if keywords.is_empty() {
        return Err(fail("KEYWORDS block is empty"));
    }
    Ok((summary, keywords))
}

/// The completion text a well-behaved model would return for `summary`.
pub fn render_completion(summary: &VideoSummary) -> String {
    format!(
        "SUMMARY:\n{}\nKEYWORDS:\n{}",
        summary.summary_text,
        summary.keywords.join(", ")
    )
}

/// Runs the summary prompt, allowing one retry with a sterner instruction
/// when the reply is missing a block.
pub async fn summarize(
    prompt: &ChatExchange,
    chat: &dyn ChatModel,
    source_video: &str,
    clock: &dyn Clock,
) -> Result<VideoSummary> {
    let first = chat.complete(prompt).await?;
    let (summary_text, keywords) = match parse_completion(&first) {
        Ok(parsed) => parsed,
        Err(first_err) => {
            tracing::warn!(error = %first_err, "summary reply unparseable, retrying once");
            let mut retry = prompt.clone();
            if let Some(last) = retry.messages.last_mut() {
                last.content.push_str("\n\n");
                last.content.push_str(STERN_INSTRUCTION);
            }
            let second = chat.complete(&retry).await?;
            parse_completion(&second)?
        }
    };
    Ok(VideoSummary {
        source_video: source_video.to_string(),
        summary_text,
        keywords,
        model_name: chat.model_name().to_string(),
        created_at: clock.now(),
    })
}

use crate::error::{Error, Result};
use crate::gateway::{ChatExchange, ChatModel};
use crate::prompt::{fields, tags};

const JUDGE_SYSTEM: &str = "You rate how relevant viewer comments are to a video.";

pub fn build_judge_prompt(comment: &str, summary: &str) -> ChatExchange {
    let user = format!(
        "{tag}\nRate how relevant the comment is to the video on a scale from 0 to 100, \
         where a higher score means greater relevance.\n\
         {s} {summary}\n{c} {comment}\n\
         Reply with a bare integer from 0 to 100 and nothing else.",
        tag = tags::JUDGE,
        s = fields::SUMMARY,
        c = fields::COMMENT,
        summary = summary.trim(),
        comment = comment.trim(),
    );
    ChatExchange::single(JUDGE_SYSTEM, user, 0.0)
}

pub fn parse_score(reply: &str) -> Option<u8> {
    let t = reply.trim().trim_end_matches('.');
    let v: i64 = t.parse().ok()?;
    (0..=100).contains(&v).then_some(v as u8)
}

/// Judge score in 0..=100. A malformed reply is retried once.
pub async fn llm_relevance(comment: &str, summary: &str, judge: &dyn ChatModel) -> Result<u8> {
    let prompt = build_judge_prompt(comment, summary);
    let mut last = String::new();
    for _ in 0..2 {
        last = judge.complete(&prompt).await?;
        if let Some(score) = parse_score(&last) {
            return Ok(score);
        }
        tracing::warn!(
            judge = judge.model_name(),
            "judge reply is not an integer in 0..=100"
        );
    }
    Err(Error::Parse {
        message: format!(
            "judge {} did not return a score in 0..=100",
            judge.model_name()
        ),
        raw: last,
    })
}

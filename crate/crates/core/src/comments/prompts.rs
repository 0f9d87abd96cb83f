use crate::error::Result;
use crate::gateway::{check_budget, ChatExchange};
use crate::persona::Persona;
use crate::prompt::{fields, tags};

use super::engine::VideoContext;
use super::Comment;

pub const ROLE_INSTRUCTION: &str = "You are a viewer on a video-sharing platform leaving a comment under a video you just watched. Write the way real viewers do: casual, specific to what you saw, usually one to four sentences, sometimes with a question, a joke or mild criticism. Do not sound like an assistant, do not summarize the whole video, and do not use hashtags.";

const SYSTEM: &str = "You simulate the audience of an online video. Stay in character and reply with the comment text only.";

pub fn default_fewshot() -> Vec<String> {
    include_str!("../../resources/fewshot.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

fn push_fewshot(out: &mut String, fewshot: &[String]) {
    out.push_str("Examples of real comments:\n");
    for (i, example) in fewshot.iter().enumerate() {
        out.push_str(&format!("Example {}: {}\n", i + 1, example));
    }
    out.push('\n');
}

fn push_persona(out: &mut String, persona: Option<&Persona>) {
    if let Some(p) = persona {
        out.push_str("Write as the viewer described below.\n");
        out.push_str(&format!("{} {}\n\n", fields::PERSONA, p.text));
    }
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "none"
    } else {
        s.trim()
    }
}

fn push_video(out: &mut String, ctx: &VideoContext) {
    out.push_str("The video:\n");
    out.push_str(&format!("{} {}\n", fields::TITLE, ctx.metadata.title));
    out.push_str(&format!(
        "{} {}\n",
        fields::DESCRIPTION,
        or_none(&ctx.metadata.description)
    ));
    out.push_str(&format!(
        "{} {}\n",
        fields::AUTHOR,
        or_none(&ctx.metadata.author)
    ));
    out.push_str(&format!(
        "{} {}\n",
        fields::THUMBNAIL,
        or_none(ctx.thumbnail_description.as_deref().unwrap_or(""))
    ));
    out.push_str(&format!(
        "{} {}\n",
        fields::SUMMARY,
        ctx.summary.summary_text
    ));
    out.push_str(&format!(
        "{} {}\n\n",
        fields::KEYWORDS,
        ctx.summary.keywords.join(", ")
    ));
}

fn finish(body: String, budget: usize, temperature: f64) -> Result<ChatExchange> {
    let exchange = ChatExchange::single(SYSTEM, body, temperature);
    check_budget(&exchange, budget)?;
    Ok(exchange)
}

/// Role instruction, few-shot examples, persona (omitted in no-persona
/// mode), video metadata, summary and keywords, in that order.
pub fn build_primary_prompt(
    ctx: &VideoContext,
    persona: Option<&Persona>,
    fewshot: &[String],
    budget: usize,
    temperature: f64,
) -> Result<ChatExchange> {
    let mut body = format!("{}\n{}\n\n", tags::COMMENT, ROLE_INSTRUCTION);
    push_fewshot(&mut body, fewshot);
    push_persona(&mut body, persona);
    push_video(&mut body, ctx);
    body.push_str("Write one new top-level comment on this video.");
    finish(body, budget, temperature)
}

/// Same layout as the primary prompt, under the user's own persona.
pub fn build_custom_prompt(
    ctx: &VideoContext,
    persona: &Persona,
    fewshot: &[String],
    budget: usize,
    temperature: f64,
) -> Result<ChatExchange> {
    build_primary_prompt(ctx, Some(persona), fewshot, budget, temperature)
}

pub fn build_thread_prompt(
    ctx: &VideoContext,
    parent: &Comment,
    persona: Option<&Persona>,
    fewshot: &[String],
    budget: usize,
    temperature: f64,
) -> Result<ChatExchange> {
    let mut body = format!("{}\n{}\n\n", tags::THREAD, ROLE_INSTRUCTION);
    push_fewshot(&mut body, fewshot);
    push_persona(&mut body, persona);
    push_video(&mut body, ctx);
    body.push_str(&format!(
        "{} {} wrote: {}\n\n",
        fields::PARENT_COMMENT,
        parent.author_name,
        parent.body
    ));
    body.push_str("Write one reply to that comment, as a different viewer joining the thread.");
    finish(body, budget, temperature)
}

/// `chain` runs from the root comment down to the creator's reply.
pub fn build_reply_prompt(
    ctx: &VideoContext,
    chain: &[Comment],
    persona: Option<&Persona>,
    fewshot: &[String],
    budget: usize,
    temperature: f64,
) -> Result<ChatExchange> {
    let (creator, earlier) = chain
        .split_last()
        .ok_or_else(|| crate::Error::input("reply needs the conversation it answers"))?;
    let answered = earlier
        .last()
        .ok_or_else(|| crate::Error::input("creator reply has no parent comment"))?;
    let mut body = format!("{}\n{}\n\n", tags::REPLY, ROLE_INSTRUCTION);
    push_fewshot(&mut body, fewshot);
    push_persona(&mut body, persona);
    push_video(&mut body, ctx);
    if earlier.len() > 1 {
        body.push_str("Conversation so far:\n");
        for c in &earlier[..earlier.len() - 1] {
            body.push_str(&format!("- {}: {}\n", c.author_name, c.body));
        }
        body.push('\n');
    }
    body.push_str(&format!(
        "{} {} wrote: {}\n",
        fields::PARENT_COMMENT,
        answered.author_name,
        answered.body
    ));
    body.push_str(&format!("{} {}\n\n", fields::CREATOR_REPLY, creator.body));
    body.push_str(
        "The video's creator answered your comment. Write your follow-up reply to the creator.",
    );
    finish(body, budget, temperature)
}

//! Shared prompt vocabulary. Builders write these markers and the mock chat
//! backend reads them back, so both sides stay in lockstep.

/// Task tags placed on the first line of a user message.
pub mod tags {
    pub const SUMMARIZE: &str = "[SUMMARIZE]";
    pub const COMMENT: &str = "[COMMENT]";
    pub const THREAD: &str = "[THREAD]";
    pub const REPLY: &str = "[REPLY]";
    pub const JUDGE: &str = "[JUDGE]";
}

/// Line prefixes for labelled fields.
pub mod fields {
    pub const TITLE: &str = "Title:";
    pub const DESCRIPTION: &str = "Description:";
    pub const AUTHOR: &str = "Author:";
    pub const THUMBNAIL: &str = "Thumbnail:";
    pub const SUMMARY: &str = "Summary:";
    pub const KEYWORDS: &str = "Keywords:";
    pub const PERSONA: &str = "Persona:";
    pub const PARENT_COMMENT: &str = "Comment being answered:";
    pub const CREATOR_REPLY: &str = "Creator reply:";
    pub const COMMENT: &str = "Comment:";
    /// Timeline markers: `[mm:ss] CAPTION: ...` and `[mm:ss] SPEECH: ...`.
    pub const CAPTION_MARK: &str = "] CAPTION:";
    pub const SPEECH_MARK: &str = "] SPEECH:";
}

/// Instruction sent with every four-frame panel.
pub const FRAME_CAPTION_INSTRUCTION: &str = "You are an AI visual assistant that can generate audio description for a video clip. You receive a image of 4 frames, which are sampled during 4 seconds of the video clip. You also receive the audio caption during the 4 seconds.\n\nThe 4-th frame is the current frame, using the provided frames and audio caption, generate an audio description of the current frame in a detailed manner. Include details like object counts, position of the objects, relative position between the objects, the visual composition, the emotion, what might be going on during the clip, etc. Imagine describing the video clip to someone who cannot see the clip.";

/// Instruction used to describe a thumbnail image on its own.
pub const THUMBNAIL_INSTRUCTION: &str = "You are an AI visual assistant. Describe this video thumbnail in two or three sentences: the main subject, any visible text, the colors and the mood it sets.";

/// `mm:ss` (or `h:mm:ss` past an hour) for timeline lines.
pub fn timestamp_label(seconds: f64) -> String {
    let total = seconds.max(0.0).floor() as u64;
    let (h, m, s) = (total / 3600, (total % 3600) / 60, total % 60);
    if h > 0 {
        format!("{h}:{m:02}:{s:02}")
    } else {
        format!("{m:02}:{s:02}")
    }
}

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use super::{
    align_dialogue, assemble_panels, encode_png, extract_frames, FramePanel, FrameSampling,
    VideoAsset, PANEL_FRAMES,
};
use crate::error::{Error, Result};
use crate::gateway::{Captioner, EncodedImage, TranscriptSegment};
use crate::prompt::{FRAME_CAPTION_INSTRUCTION, THUMBNAIL_INSTRUCTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCaption {
    pub panel_index: usize,
    pub timestamp: f64,
    pub text: String,
}

/// Captions panels with up to `parallelism` calls in flight. Output is in
/// panel order no matter which call finishes first. `on_progress` receives
/// (completed, total) after each panel.
pub async fn caption_panels<F>(
    panels: &[FramePanel],
    captioner: &dyn Captioner,
    parallelism: usize,
    on_progress: F,
) -> Result<Vec<FrameCaption>>
where
    F: Fn(usize, usize) + Send + Sync,
{
    if panels.is_empty() {
        return Err(Error::input("video produced no panels to caption"));
    }
    let total = panels.len();
    let done = AtomicUsize::new(0);
    let mut captions: Vec<FrameCaption> = stream::iter(
        panels
            .iter()
            .map(|panel| {
                let done = &done;
                let on_progress = &on_progress;
                async move {
                    let wrap = |e: Error| Error::Panel {
                        panel_index: panel.panel_index,
                        source: Box::new(e),
                    };
                    let image = EncodedImage {
                        bytes: encode_png(&panel.composite).map_err(wrap)?,
                        mime: "image/png",
                    };
                    let text = captioner
                        .caption(&image, &panel.dialogue, FRAME_CAPTION_INSTRUCTION)
                        .await
                        .map_err(wrap)?;
                    if text.trim().is_empty() {
                        return Err(wrap(Error::Generation("empty caption".into())));
                    }
                    on_progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
                    Ok(FrameCaption {
                        panel_index: panel.panel_index,
                        timestamp: panel.timestamp,
                        text,
                    })
                }
            })
            .collect::<Vec<_>>(),
    )
    .buffer_unordered(parallelism.max(1))
    .try_collect()
    .await?;
    captions.sort_by_key(|c| c.panel_index);
    Ok(captions)
}

/// Frame extraction, alignment, assembly and captioning in one call.
pub async fn caption_video(
    asset: &VideoAsset,
    transcript: &[TranscriptSegment],
    captioner: &dyn Captioner,
    sampling: FrameSampling,
    parallelism: usize,
) -> Result<Vec<FrameCaption>> {
    let frames = {
        let asset = asset.clone();
        tokio::task::spawn_blocking(move || extract_frames(&asset, sampling))
            .await
            .map_err(|e| Error::Integrity(format!("frame extraction panicked: {e}")))??
    };
    let window = PANEL_FRAMES as f64 / sampling.sample_rate;
    let dialogue = align_dialogue(&frames, transcript, sampling.sample_rate, window);
    let panels = assemble_panels(&frames, &dialogue)?;
    caption_panels(&panels, captioner, parallelism, |_, _| {}).await
}

pub async fn describe_thumbnail(path: &Path, captioner: &dyn Captioner) -> Result<String> {
    let img = image::open(path)
        .map_err(|e| Error::input(format!("thumbnail {}: {e}", path.display())))?
        .to_rgb8();
    let img = super::fit_width(&img, 512);
    let encoded = EncodedImage {
        bytes: encode_png(&img)?,
        mime: "image/png",
    };
    captioner.caption(&encoded, "", THUMBNAIL_INSTRUCTION).await
}

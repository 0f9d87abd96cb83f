use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use super::SampledFrame;
use crate::error::{Error, Result};
use crate::gateway::TranscriptSegment;

pub const PANEL_FRAMES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    /// Half-open overlap test; touching intervals do not overlap.
    pub fn overlaps(&self, start: f64, end: f64) -> bool {
        start < self.end && end > self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDialogue {
    pub panel_index: usize,
    pub window: TimeWindow,
    pub text: String,
}

/// Four consecutive frames tiled 2×2 in reading order; the bottom-right
/// tile is the current frame.
#[derive(Debug, Clone)]
pub struct FramePanel {
    pub panel_index: usize,
    /// Source frame per tile. A short final panel repeats its last frame.
    pub frame_indices: [usize; PANEL_FRAMES],
    pub timestamp: f64,
    pub window: TimeWindow,
    pub composite: RgbImage,
    pub dialogue: String,
}

pub fn panel_count(frame_count: usize) -> usize {
    frame_count.div_ceil(PANEL_FRAMES)
}

fn panel_slots(panel_index: usize, frame_count: usize) -> [usize; PANEL_FRAMES] {
    let first = panel_index * PANEL_FRAMES;
    std::array::from_fn(|slot| (first + slot).min(frame_count - 1))
}

/// Pairs each stride-4 panel with the transcript text spoken during
/// `[end - window, end]`, where `end` is the close of the panel's last frame.
pub fn align_dialogue(
    frames: &[SampledFrame],
    transcript: &[TranscriptSegment],
    sample_rate: f64,
    window: f64,
) -> Vec<PanelDialogue> {
    let frame_span = 1.0 / sample_rate;
    (0..panel_count(frames.len()))
        .map(|panel_index| {
            let last = ((panel_index + 1) * PANEL_FRAMES).min(frames.len()) - 1;
            let end = frames[last].timestamp + frame_span;
            let window = TimeWindow {
                start: (end - window).max(0.0),
                end,
            };
            let text = transcript
                .iter()
                .filter(|seg| window.overlaps(seg.start, seg.end))
                .map(|seg| seg.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            PanelDialogue {
                panel_index,
                window,
                text,
            }
        })
        .collect()
}

pub fn assemble_panels(
    frames: &[SampledFrame],
    dialogue: &[PanelDialogue],
) -> Result<Vec<FramePanel>> {
    if frames.is_empty() {
        return Err(Error::input("cannot assemble panels from zero frames"));
    }
    let count = panel_count(frames.len());
    if dialogue.len() != count {
        return Err(Error::input(format!(
            "{} dialogue entries for {count} panels",
            dialogue.len()
        )));
    }
    let (w, h) = frames[0].image.dimensions();
    Ok((0..count)
        .map(|panel_index| {
            let slots = panel_slots(panel_index, frames.len());
            let mut composite = RgbImage::new(w * 2, h * 2);
            for (slot, &frame_idx) in slots.iter().enumerate() {
                let tile = &frames[frame_idx].image;
                let x = (slot % 2) as i64 * w as i64;
                let y = (slot / 2) as i64 * h as i64;
                if tile.dimensions() == (w, h) {
                    imageops::replace(&mut composite, tile, x, y);
                } else {
                    let resized = imageops::resize(tile, w, h, imageops::FilterType::Triangle);
                    imageops::replace(&mut composite, &resized, x, y);
                }
            }
            FramePanel {
                panel_index,
                frame_indices: slots,
                timestamp: frames[slots[0]].timestamp,
                window: dialogue[panel_index].window,
                composite,
                dialogue: dialogue[panel_index].text.clone(),
            }
        })
        .collect())
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::input(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

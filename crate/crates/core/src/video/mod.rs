//! Video decoding, frame sampling, dialogue alignment, panel assembly and
//! panel captioning.

mod caption;
mod ffmpeg;
mod gif;
mod panel;
pub mod y4m;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::AudioClip;

pub use caption::{caption_panels, caption_video, describe_thumbnail, FrameCaption};
pub use panel::{
    align_dialogue, assemble_panels, encode_png, FramePanel, PanelDialogue, TimeWindow,
    PANEL_FRAMES,
};

pub const DEFAULT_SAMPLE_RATE: f64 = 1.0;
/// 25 minutes.
pub const DEFAULT_MAX_DURATION_SECS: f64 = 1500.0;
pub const DEFAULT_FRAME_MAX_WIDTH: u32 = 320;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Container {
    Y4m,
    Gif,
    Mp4,
    WebM,
}

impl Container {
    /// Identifies a container from its leading bytes.
    pub fn sniff(head: &[u8]) -> Option<Container> {
        if head.starts_with(b"YUV4MPEG2") {
            Some(Container::Y4m)
        } else if head.starts_with(b"GIF87a") || head.starts_with(b"GIF89a") {
            Some(Container::Gif)
        } else if head.len() >= 8 && &head[4..8] == b"ftyp" {
            Some(Container::Mp4)
        } else if head.starts_with(&[0x1A, 0x45, 0xDF, 0xA3]) {
            Some(Container::WebM)
        } else {
            None
        }
    }

    pub fn sniff_file(path: &Path) -> Result<Container> {
        use std::io::Read;
        let mut head = [0u8; 16];
        let mut file = std::fs::File::open(path)?;
        let n = file.read(&mut head)?;
        Container::sniff(&head[..n]).ok_or_else(|| {
            Error::input(format!(
                "{}: unsupported or unrecognized container",
                path.display()
            ))
        })
    }

    pub fn extension(self) -> &'static str {
        match self {
            Container::Y4m => "y4m",
            Container::Gif => "gif",
            Container::Mp4 => "mp4",
            Container::WebM => "webm",
        }
    }
}

/// Creator-supplied metadata that accompanies an upload.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoMetadata {
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub video_id: String,
    pub file_path: PathBuf,
    pub title: String,
    pub description: String,
    pub author: String,
    pub thumbnail: Option<PathBuf>,
    /// Separate WAV track for containers that carry no audio.
    pub audio_path: Option<PathBuf>,
    pub container: Container,
    pub duration: f64,
}

impl VideoAsset {
    /// Probes the file and validates metadata. A `<stem>.wav` next to the
    /// video is picked up as its audio track when `audio_path` is not given.
    pub fn ingest(
        video_id: impl Into<String>,
        file_path: impl Into<PathBuf>,
        metadata: VideoMetadata,
        thumbnail: Option<PathBuf>,
        audio_path: Option<PathBuf>,
    ) -> Result<Self> {
        let file_path = file_path.into();
        if metadata.title.trim().is_empty() {
            return Err(Error::input("video title is required"));
        }
        let len = std::fs::metadata(&file_path)
            .map_err(|e| Error::input(format!("{}: {e}", file_path.display())))?
            .len();
        if len == 0 {
            return Err(Error::input(format!("{} is empty", file_path.display())));
        }
        let container = Container::sniff_file(&file_path)?;
        let duration = probe_duration(&file_path, container)?;
        if duration.is_nan() || duration <= 0.0 {
            return Err(Error::input(format!(
                "{} has zero duration",
                file_path.display()
            )));
        }
        let audio_path = audio_path.or_else(|| {
            let sidecar = file_path.with_extension("wav");
            sidecar.is_file().then_some(sidecar)
        });
        Ok(Self {
            video_id: video_id.into(),
            file_path,
            title: metadata.title.trim().to_string(),
            description: metadata.description.trim().to_string(),
            author: metadata.author.trim().to_string(),
            thumbnail,
            audio_path,
            container,
            duration,
        })
    }

    pub fn metadata(&self) -> VideoMetadata {
        VideoMetadata {
            title: self.title.clone(),
            description: self.description.clone(),
            author: self.author.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFrame {
    pub index: usize,
    pub timestamp: f64,
    pub image: RgbImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSampling {
    pub sample_rate: f64,
    /// Frames wider than this are scaled down, keeping aspect ratio.
    pub max_width: u32,
}

impl Default for FrameSampling {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            max_width: DEFAULT_FRAME_MAX_WIDTH,
        }
    }
}

/// Number of frames sampled from a clip: floor(duration × rate).
pub fn sampled_frame_count(duration: f64, sample_rate: f64) -> usize {
    // tolerate binary rounding such as 2.9999999 fps·s
    (duration * sample_rate + 1e-9).floor() as usize
}

/// Decoded source frames with their presentation start times.
pub(crate) struct DecodedVideo {
    pub frames: Vec<(f64, RgbImage)>,
}

impl DecodedVideo {
    /// Latest source frame shown at or before `t`.
    fn frame_at(&self, t: f64) -> &RgbImage {
        let idx = self
            .frames
            .partition_point(|(start, _)| *start <= t + 1e-9)
            .saturating_sub(1);
        &self.frames[idx].1
    }
}

pub fn probe_duration(path: &Path, container: Container) -> Result<f64> {
    match container {
        Container::Y4m => Ok(y4m::read_header(path)?.duration()),
        Container::Gif => gif::probe_duration(path),
        Container::Mp4 | Container::WebM => ffmpeg::probe_duration(path),
    }
}

pub fn extract_frames(asset: &VideoAsset, sampling: FrameSampling) -> Result<Vec<SampledFrame>> {
    if !sampling.sample_rate.is_finite() || sampling.sample_rate <= 0.0 {
        return Err(Error::input("sample rate must be positive"));
    }
    if asset.duration.is_nan() || asset.duration <= 0.0 {
        return Err(Error::input("video has zero duration"));
    }
    let count = sampled_frame_count(asset.duration, sampling.sample_rate);
    if count == 0 {
        return Err(Error::input(format!(
            "video of {:.3}s yields no frames at {} fps",
            asset.duration, sampling.sample_rate
        )));
    }
    let frames = match asset.container {
        Container::Y4m | Container::Gif => {
            let decoded = match asset.container {
                Container::Y4m => y4m::decode(&asset.file_path)?,
                _ => gif::decode(&asset.file_path)?,
            };
            if decoded.frames.is_empty() {
                return Err(Error::input("container holds no frames"));
            }
            (0..count)
                .map(|index| {
                    let timestamp = index as f64 / sampling.sample_rate;
                    SampledFrame {
                        index,
                        timestamp,
                        image: fit_width(decoded.frame_at(timestamp), sampling.max_width),
                    }
                })
                .collect::<Vec<_>>()
        }
        Container::Mp4 | Container::WebM => {
            let images =
                ffmpeg::sample_frames(&asset.file_path, sampling.sample_rate, sampling.max_width)?;
            if images.is_empty() {
                return Err(Error::input("decoder produced no frames"));
            }
            let last = images.len() - 1;
            (0..count)
                .map(|index| SampledFrame {
                    index,
                    timestamp: index as f64 / sampling.sample_rate,
                    image: images[index.min(last)].clone(),
                })
                .collect()
        }
    };
    Ok(frames)
}

fn fit_width(image: &RgbImage, max_width: u32) -> RgbImage {
    if max_width == 0 || image.width() <= max_width {
        return image.clone();
    }
    let height = ((image.height() as u64 * max_width as u64) / image.width() as u64).max(1) as u32;
    image::imageops::resize(
        image,
        max_width,
        height,
        image::imageops::FilterType::Triangle,
    )
}

/// The audio track as WAV, or `None` when the video has none.
pub fn extract_audio(asset: &VideoAsset) -> Result<Option<AudioClip>> {
    if let Some(path) = &asset.audio_path {
        let wav_bytes = std::fs::read(path)?;
        return Ok(Some(AudioClip {
            wav_bytes,
            duration: asset.duration,
        }));
    }
    match asset.container {
        Container::Y4m | Container::Gif => Ok(None),
        Container::Mp4 | Container::WebM => Ok(ffmpeg::extract_audio(&asset.file_path)?.map(
            |wav_bytes| AudioClip {
                wav_bytes,
                duration: asset.duration,
            },
        )),
    }
}

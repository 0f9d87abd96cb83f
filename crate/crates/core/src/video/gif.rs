use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, DynamicImage, Frame};

use super::DecodedVideo;
use crate::error::{Error, Result};

// browsers render a zero delay as 100 ms
const DEFAULT_DELAY_MS: f64 = 100.0;

fn frames(path: &Path) -> Result<Vec<Frame>> {
    let decoder = GifDecoder::new(BufReader::new(File::open(path)?))
        .map_err(|e| Error::input(format!("gif decoder: {e}")))?;
    decoder
        .into_frames()
        .collect_frames()
        .map_err(|e| Error::input(format!("gif decoder: {e}")))
}

fn delay_secs(frame: &Frame) -> f64 {
    let (num, den) = frame.delay().numer_denom_ms();
    let ms = if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    };
    let ms = if ms <= 0.0 { DEFAULT_DELAY_MS } else { ms };
    ms / 1000.0
}

pub(crate) fn probe_duration(path: &Path) -> Result<f64> {
    Ok(frames(path)?.iter().map(delay_secs).sum())
}

pub(crate) fn decode(path: &Path) -> Result<DecodedVideo> {
    let mut t = 0.0;
    let mut out = Vec::new();
    for frame in frames(path)? {
        let delay = delay_secs(&frame);
        out.push((t, DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8()));
        t += delay;
    }
    Ok(DecodedVideo { frames: out })
}

//! MP4 and WebM support through the `ffmpeg`/`ffprobe` executables.

use std::io::Cursor;
use std::path::Path;
use std::process::{Command, Stdio};

use image::RgbImage;

use crate::error::{Error, Result};

fn run(program: &str, args: &[&str]) -> Result<Vec<u8>> {
    let output = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .output()
        .map_err(|e| Error::input(format!("{program} is required for this container: {e}")))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let tail: String = stderr.lines().rev().take(3).collect::<Vec<_>>().join(" | ");
        return Err(Error::input(format!("{program} failed: {tail}")));
    }
    Ok(output.stdout)
}

fn path_arg(path: &Path) -> Result<&str> {
    path.to_str()
        .ok_or_else(|| Error::input(format!("{} is not valid UTF-8", path.display())))
}

pub(crate) fn probe_duration(path: &Path) -> Result<f64> {
    let out = run(
        "ffprobe",
        &[
            "-v",
            "error",
            "-show_entries",
            "format=duration",
            "-of",
            "default=nw=1:nk=1",
            path_arg(path)?,
        ],
    )?;
    String::from_utf8_lossy(&out)
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::input(format!("ffprobe duration: {e}")))
}

fn has_audio(path: &Path) -> Result<bool> {
    let out = run(
        "ffprobe",
        &[
            "-v",
            "error",
            "-select_streams",
            "a",
            "-show_entries",
            "stream=index",
            "-of",
            "csv=p=0",
            path_arg(path)?,
        ],
    )?;
    Ok(!String::from_utf8_lossy(&out).trim().is_empty())
}

pub(crate) fn extract_audio(path: &Path) -> Result<Option<Vec<u8>>> {
    if !has_audio(path)? {
        return Ok(None);
    }
    let wav = run(
        "ffmpeg",
        &[
            "-v",
            "error",
            "-i",
            path_arg(path)?,
            "-vn",
            "-ac",
            "1",
            "-ar",
            "16000",
            "-f",
            "wav",
            "-",
        ],
    )?;
    Ok(Some(wav))
}

/// One frame per `1/sample_rate` seconds, decoded from a PPM pipe.
pub(crate) fn sample_frames(
    path: &Path,
    sample_rate: f64,
    max_width: u32,
) -> Result<Vec<RgbImage>> {
    let filter = if max_width > 0 {
        format!("fps={sample_rate},scale='min({max_width},iw)':-2")
    } else {
        format!("fps={sample_rate}")
    };
    let raw = run(
        "ffmpeg",
        &[
            "-v",
            "error",
            "-i",
            path_arg(path)?,
            "-vf",
            &filter,
            "-f",
            "image2pipe",
            "-vcodec",
            "ppm",
            "-",
        ],
    )?;
    split_ppm_stream(&raw)
}

/// Splits concatenated binary PPM (P6) images.
fn split_ppm_stream(raw: &[u8]) -> Result<Vec<RgbImage>> {
    let mut frames = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let (header_len, w, h) = ppm_header(&raw[pos..])?;
        let end = pos + header_len + (w * h * 3) as usize;
        if end > raw.len() {
            return Err(Error::input("ffmpeg frame stream is truncated"));
        }
        let img = image::load(Cursor::new(&raw[pos..end]), image::ImageFormat::Pnm)
            .map_err(|e| Error::input(format!("ffmpeg frame: {e}")))?;
        frames.push(img.to_rgb8());
        pos = end;
    }
    Ok(frames)
}

fn ppm_header(bytes: &[u8]) -> Result<(usize, u32, u32)> {
    // "P6" ws width ws height ws maxval single-ws
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::input("ffmpeg frame header is truncated"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).unwrap_or(""));
    }
    if fields[0] != "P6" {
        return Err(Error::input("ffmpeg produced a non-PPM frame"));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| Error::input("bad PPM header"));
    Ok((i + 1, parse(fields[1])?, parse(fields[2])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_ppm_stream() {
        let mut raw = Vec::new();
        for v in [1u8, 2] {
            raw.extend_from_slice(b"P6\n2 1\n255\n");
            raw.extend_from_slice(&[v; 6]);
        }
        let frames = split_ppm_stream(&raw).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].get_pixel(1, 0)[2], 2);
    }
}

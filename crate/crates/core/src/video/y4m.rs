//! YUV4MPEG2 (`.y4m`) reading and writing. Uncompressed and trivially
//! seekable, so it serves as the native container when no external decoder
//! is installed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use image::{Rgb, RgbImage};

use super::DecodedVideo;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Y4mHeader {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub chroma: Chroma,
    pub frame_count: usize,
}

impl Y4mHeader {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn duration(&self) -> f64 {
        self.frame_count as f64 * self.fps_den as f64 / self.fps_num as f64
    }

    fn frame_bytes(&self) -> usize {
        let (w, h) = (self.width as usize, self.height as usize);
        let luma = w * h;
        let chroma = match self.chroma {
            Chroma::C420 => w.div_ceil(2) * h.div_ceil(2),
            Chroma::C422 => w.div_ceil(2) * h,
            Chroma::C444 => w * h,
            Chroma::Mono => 0,
        };
        luma + 2 * chroma
    }
}

fn bad(msg: impl std::fmt::Display) -> Error {
    Error::input(format!("y4m decoder: {msg}"))
}

fn parse_stream_header(line: &str) -> Result<Y4mHeader> {
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(bad("missing YUV4MPEG2 signature"));
    }
    let (mut width, mut height) = (None, None);
    let (mut fps_num, mut fps_den) = (None, None);
    let mut chroma = Chroma::C420;
    for token in tokens {
        let (tag, value) = token.split_at(1);
        match tag {
            "W" => width = value.parse::<u32>().ok(),
            "H" => height = value.parse::<u32>().ok(),
            "F" => {
                let (n, d) = value
                    .split_once(':')
                    .ok_or_else(|| bad("malformed frame rate"))?;
                fps_num = n.parse::<u32>().ok();
                fps_den = d.parse::<u32>().ok();
            }
            "C" => {
                chroma = if value.starts_with("420") {
                    Chroma::C420
                } else if value.starts_with("422") {
                    Chroma::C422
                } else if value.starts_with("444") && !value.starts_with("444alpha") {
                    Chroma::C444
                } else if value == "mono" {
                    Chroma::Mono
                } else {
                    return Err(bad(format!("unsupported colorspace C{value}")));
                }
            }
            _ => {}
        }
    }
    let width = width
        .filter(|w| *w > 0)
        .ok_or_else(|| bad("missing width"))?;
    let height = height
        .filter(|h| *h > 0)
        .ok_or_else(|| bad("missing height"))?;
    let fps_num = fps_num
        .filter(|n| *n > 0)
        .ok_or_else(|| bad("missing frame rate"))?;
    let fps_den = fps_den
        .filter(|d| *d > 0)
        .ok_or_else(|| bad("missing frame rate"))?;
    Ok(Y4mHeader {
        width,
        height,
        fps_num,
        fps_den,
        chroma,
        frame_count: 0,
    })
}

fn read_line<R: BufRead>(reader: &mut R) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let n = reader.read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(bad("truncated header line"));
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| bad("header is not ASCII"))
}

/// Walks the frame headers without decoding pixels.
pub fn read_header(path: &Path) -> Result<Y4mHeader> {
    let mut reader = BufReader::new(File::open(path)?);
    let line = read_line(&mut reader)?.ok_or_else(|| bad("empty file"))?;
    let mut header = parse_stream_header(&line)?;
    let frame_bytes = header.frame_bytes() as u64;
    let total = reader.get_ref().metadata()?.len();
    loop {
        match read_line(&mut reader)? {
            None => break,
            Some(l) if l.starts_with("FRAME") => {
                let pos = reader.stream_position()?;
                if pos + frame_bytes > total {
                    return Err(bad(format!("frame {} is truncated", header.frame_count)));
                }
                reader.seek(SeekFrom::Current(frame_bytes as i64))?;
                header.frame_count += 1;
            }
            Some(_) => {
                return Err(bad(format!(
                    "expected FRAME marker at frame {}",
                    header.frame_count
                )))
            }
        }
    }
    if header.frame_count == 0 {
        return Err(bad("no frames"));
    }
    Ok(header)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

// BT.601 studio range
fn yuv_to_rgb(y: u8, u: u8, v: u8) -> Rgb<u8> {
    let y = 1.164 * (y as f64 - 16.0);
    let u = u as f64 - 128.0;
    let v = v as f64 - 128.0;
    Rgb([
        clamp_u8(y + 1.596 * v),
        clamp_u8(y - 0.392 * u - 0.813 * v),
        clamp_u8(y + 2.017 * u),
    ])
}

fn rgb_to_yuv(p: &Rgb<u8>) -> (u8, u8, u8) {
    let [r, g, b] = p.0.map(|c| c as f64);
    (
        clamp_u8(16.0 + 0.257 * r + 0.504 * g + 0.098 * b),
        clamp_u8(128.0 - 0.148 * r - 0.291 * g + 0.439 * b),
        clamp_u8(128.0 + 0.439 * r - 0.368 * g - 0.071 * b),
    )
}

fn frame_to_rgb(header: &Y4mHeader, data: &[u8]) -> RgbImage {
    let (w, h) = (header.width as usize, header.height as usize);
    let luma = &data[..w * h];
    let (cw, ch) = match header.chroma {
        Chroma::C420 => (w.div_ceil(2), h.div_ceil(2)),
        Chroma::C422 => (w.div_ceil(2), h),
        Chroma::C444 => (w, h),
        Chroma::Mono => (0, 0),
    };
    let (u_plane, v_plane) = data[w * h..].split_at(cw * ch);
    RgbImage::from_fn(header.width, header.height, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let l = luma[y * w + x];
        if header.chroma == Chroma::Mono {
            return yuv_to_rgb(l, 128, 128);
        }
        let cx = x * cw / w;
        let cy = y * ch / h;
        yuv_to_rgb(l, u_plane[cy * cw + cx], v_plane[cy * cw + cx])
    })
}

pub(crate) fn decode(path: &Path) -> Result<DecodedVideo> {
    let mut reader = BufReader::new(File::open(path)?);
    let line = read_line(&mut reader)?.ok_or_else(|| bad("empty file"))?;
    let header = parse_stream_header(&line)?;
    let mut data = vec![0u8; header.frame_bytes()];
    let mut frames = Vec::new();
    let frame_time = header.fps_den as f64 / header.fps_num as f64;
    while let Some(marker) = read_line(&mut reader)? {
        if !marker.starts_with("FRAME") {
            return Err(bad(format!(
                "expected FRAME marker at frame {}",
                frames.len()
            )));
        }
        reader
            .read_exact(&mut data)
            .map_err(|_| bad(format!("frame {} is truncated", frames.len())))?;
        frames.push((
            frames.len() as f64 * frame_time,
            frame_to_rgb(&header, &data),
        ));
    }
    if frames.is_empty() {
        return Err(bad("no frames"));
    }
    Ok(DecodedVideo { frames })
}

/// Writes 4:4:4 frames. All frames must share the first frame's size.
pub fn write_file(path: &Path, frames: &[RgbImage], fps_num: u32, fps_den: u32) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::input("no frames to write"))?;
    let (w, h) = first.dimensions();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "YUV4MPEG2 W{w} H{h} F{fps_num}:{fps_den} Ip A1:1 C444")?;
    for frame in frames {
        if frame.dimensions() != (w, h) {
            return Err(Error::input("frames differ in size"));
        }
        let yuv: Vec<(u8, u8, u8)> = frame.pixels().map(rgb_to_yuv).collect();
        out.write_all(b"FRAME\n")?;
        out.write_all(&yuv.iter().map(|p| p.0).collect::<Vec<_>>())?;
        out.write_all(&yuv.iter().map(|p| p.1).collect::<Vec<_>>())?;
        out.write_all(&yuv.iter().map(|p| p.2).collect::<Vec<_>>())?;
    }
    out.flush()?;
    Ok(())
}

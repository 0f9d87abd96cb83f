//! Synthetic inputs for tests, demos and offline runs.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::video::y4m;

/// Writes `<dir>/<stem>.y4m` with a moving gradient at 4 fps plus a
/// `<stem>.wav` sine track of the same length, and returns the video path.
pub fn write_video(
    dir: &Path,
    stem: &str,
    duration_secs: u32,
    with_audio: bool,
) -> Result<PathBuf> {
    if duration_secs == 0 {
        return Err(Error::input("fixture duration must be positive"));
    }
    std::fs::create_dir_all(dir)?;
    let fps = 4;
    let (w, h) = (64u32, 48u32);
    let frames: Vec<RgbImage> = (0..duration_secs * fps)
        .map(|i| {
            RgbImage::from_fn(w, h, |x, y| {
                let shift = i * 3;
                Rgb([
                    ((x + shift) * 4 % 256) as u8,
                    ((y * 5 + i) % 256) as u8,
                    ((i * 11) % 256) as u8,
                ])
            })
        })
        .collect();
    let video = dir.join(format!("{stem}.y4m"));
    y4m::write_file(&video, &frames, fps, 1)?;
    if with_audio {
        write_tone(&dir.join(format!("{stem}.wav")), duration_secs as f64)?;
    }
    Ok(video)
}

pub fn write_tone(path: &Path, duration_secs: f64) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::input(e.to_string()))?;
    let samples = (duration_secs * spec.sample_rate as f64) as usize;
    for n in 0..samples {
        let t = n as f64 / spec.sample_rate as f64;
        let v = (t * 440.0 * std::f64::consts::TAU).sin() * 8000.0;
        writer
            .write_sample(v as i16)
            .map_err(|e| Error::input(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::input(e.to_string()))
}

const HOBBIES: &[&str] = &[
    "baking sourdough",
    "restoring old motorcycles",
    "birdwatching",
    "competitive chess",
    "hiking in the alps",
    "building model trains",
    "cooking spicy food",
    "playing jazz piano",
    "collecting vinyl records",
    "surfing",
    "astronomy",
    "knitting",
    "urban gardening",
    "video game speedruns",
    "marathon running",
    "woodworking",
    "learning japanese",
    "watching horror movies",
    "rock climbing",
    "home brewing beer",
];

const JOBS: &[&str] = &[
    "a nurse",
    "a software engineer",
    "a high school teacher",
    "a retired pilot",
    "a college student",
    "a line cook",
    "an accountant",
    "a truck driver",
    "a graphic designer",
    "a farmer",
    "a librarian",
    "a physics researcher",
];

/// Deterministic persona lines built from fixed vocabularies.
pub fn personas(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            let job = JOBS[i % JOBS.len()];
            let a = HOBBIES[i % HOBBIES.len()];
            let b = HOBBIES[(i * 7 + 3) % HOBBIES.len()];
            format!("i am {job}. i love {a} and {b}. persona number {i}.")
        })
        .collect()
}

pub fn write_personas(path: &Path, count: usize) -> Result<()> {
    let mut text = personas(count).join("\n");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

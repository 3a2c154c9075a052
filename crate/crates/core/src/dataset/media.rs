//! Raw video and WAV audio on disk.
//!
//! Video uses a minimal uncompressed container: the line `RGBV1`, then
//! `<width> <height> <fps> <frames>`, then packed 8-bit RGB frames in order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

pub type Frame = RgbImage;

pub const AUDIO_RATE: u32 = 16_000;

const MAGIC: &str = "RGBV1";

pub struct Video {
    pub frames: Vec<Frame>,
    pub fps: f64,
}

pub fn encode_video(frames: &[Frame], fps: f64) -> Result<Vec<u8>> {
    let (w, h) = frames.first().map(|f| f.dimensions()).unwrap_or((0, 0));
    if frames.iter().any(|f| f.dimensions() != (w, h)) {
        return Err(Error::validation("all frames of a video must share one size"));
    }
    let mut out = format!("{MAGIC}\n{w} {h} {fps} {}\n", frames.len()).into_bytes();
    for f in frames {
        out.extend_from_slice(f.as_raw());
    }
    Ok(out)
}

pub fn write_video(path: &Path, frames: &[Frame], fps: f64) -> Result<()> {
    let bytes = encode_video(frames, fps)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_video(path: &Path) -> Result<Video> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim_end() != MAGIC {
        return Err(Error::format(path, "not an RGBV1 video"));
    }
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = || Error::format(path, format!("bad header line `{}`", line.trim_end()));
    if fields.len() != 4 {
        return Err(bad());
    }
    let w: u32 = fields[0].parse().map_err(|_| bad())?;
    let h: u32 = fields[1].parse().map_err(|_| bad())?;
    let fps: f64 = fields[2].parse().map_err(|_| bad())?;
    let n: usize = fields[3].parse().map_err(|_| bad())?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(bad());
    }
    let frame_bytes = (w as usize) * (h as usize) * 3;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let mut buf = vec![0u8; frame_bytes];
        r.read_exact(&mut buf).map_err(|_| Error::format(path, format!("truncated at frame {i} of {n}")))?;
        frames.push(RgbImage::from_raw(w, h, buf).expect("buffer sized from header"));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after last frame"));
    }
    Ok(Video { frames, fps })
}

/// Reads a WAV file as mono samples in `[-1, 1]` at [`AUDIO_RATE`].
pub fn read_audio(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(|e| wav_error(path, e))?
        }
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let mono: Vec<f32> = samples.chunks(ch).map(|c| c.iter().sum::<f32>() / ch as f32).collect();
    Ok(resample_linear(&mono, spec.sample_rate, AUDIO_RATE))
}

pub fn write_audio(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: AUDIO_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Linear-interpolation resampler; identity when the rates agree.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = (samples.len() as u64 * to as u64).div_ceil(from as u64) as usize;
    let ratio = from as f64 / to as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = (pos - i0 as f64) as f32;
            let a = samples[i0.min(samples.len() - 1)];
            let b = samples[(i0 + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Writes bytes atomically-enough for idempotent reruns: temp file then rename.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

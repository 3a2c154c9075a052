//! Low-quality counterparts of source clips: box downsampling followed by an
//! encoder round trip.

use std::io::ErrorKind;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use image::RgbImage;
use mmsd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::au::AuVector;
use super::clip::{FaceBox, SourceClip};
use super::emotion::EmotionState;
use super::media::{encode_video, Frame, AUDIO_RATE};
use super::mfcc::{extract_mfcc, MfccRow};
use crate::error::{ensure, Error, Result};

/// Quality factors of the published protocol.
pub const PROTOCOL_CRFS: [u32; 3] = [15, 32, 40];

pub fn check_crf(crf: u32, allow_any: bool) -> Result<()> {
    ensure!(crf <= 51, "crf {crf} outside the encoder range 0..=51");
    ensure!(
        allow_any || PROTOCOL_CRFS.contains(&crf),
        "crf {crf} is not one of {PROTOCOL_CRFS:?}; pass the any-crf flag to allow it"
    );
    Ok(())
}

/// External encoder invocation. Arguments are templates; `{width}`,
/// `{height}`, `{fps}`, `{crf}`, `{input}` and `{output}` are substituted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfmpegCodec {
    pub executable: String,
    pub encode_args: Vec<String>,
    pub decode_args: Vec<String>,
}

impl Default for FfmpegCodec {
    fn default() -> Self {
        let split = |s: &str| s.split_whitespace().map(String::from).collect();
        Self {
            executable: "ffmpeg".into(),
            encode_args: split(
                "-y -loglevel error -f rawvideo -pix_fmt rgb24 -s {width}x{height} -r {fps} -i {input} \
                 -c:v libx264 -preset medium -crf {crf} -pix_fmt yuv420p -threads 1 {output}",
            ),
            decode_args: split("-y -loglevel error -i {input} -f rawvideo -pix_fmt rgb24 {output}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Codec {
    /// H.264 round trip through an external executable.
    Ffmpeg(FfmpegCodec),
    /// No compression; the downsampled frames are used as decoded.
    Passthrough,
}

impl Default for Codec {
    fn default() -> Self {
        Codec::Ffmpeg(FfmpegCodec::default())
    }
}

/// Frames after decoding, plus the size of the compressed stream if any.
pub struct RoundTrip {
    pub frames: Vec<Frame>,
    pub bitstream_bytes: Option<u64>,
}

impl Codec {
    pub fn round_trip(&self, frames: &[Frame], fps: f64, crf: u32) -> Result<RoundTrip> {
        match self {
            Codec::Passthrough => Ok(RoundTrip { frames: frames.to_vec(), bitstream_bytes: None }),
            Codec::Ffmpeg(ff) => ff.round_trip(frames, fps, crf),
        }
    }
}

impl FfmpegCodec {
    fn run(&self, args: &[String], vars: &[(&str, String)]) -> Result<()> {
        let args: Vec<String> = args
            .iter()
            .map(|a| vars.iter().fold(a.clone(), |s, (k, v)| s.replace(&format!("{{{k}}}"), v)))
            .collect();
        let out = Command::new(&self.executable).args(&args).output().map_err(|e| {
            if e.kind() == ErrorKind::NotFound {
                Error::Environment(format!("required executable `{}` was not found on PATH", self.executable))
            } else {
                Error::Environment(format!("could not run `{}`: {e}", self.executable))
            }
        })?;
        if !out.status.success() {
            return Err(Error::Runtime(format!(
                "`{}` failed ({}): {}",
                self.executable,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(())
    }

    fn round_trip(&self, frames: &[Frame], fps: f64, crf: u32) -> Result<RoundTrip> {
        let Some(first) = frames.first() else {
            return Ok(RoundTrip { frames: vec![], bitstream_bytes: Some(0) });
        };
        let (w, h) = first.dimensions();
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let raw_in = dir.path().join("in.rgb");
        let coded = dir.path().join("coded.mp4");
        let raw_out = dir.path().join("out.rgb");
        let mut raw = Vec::with_capacity(frames.len() * first.as_raw().len());
        for f in frames {
            raw.extend_from_slice(f.as_raw());
        }
        std::fs::write(&raw_in, &raw).map_err(|e| Error::io(&raw_in, e))?;
        let path = |p: &Path| p.to_string_lossy().into_owned();
        let mut vars = vec![
            ("width", w.to_string()),
            ("height", h.to_string()),
            ("fps", fps.to_string()),
            ("crf", crf.to_string()),
            ("input", path(&raw_in)),
            ("output", path(&coded)),
        ];
        self.run(&self.encode_args, &vars)?;
        let size = std::fs::metadata(&coded).map_err(|e| Error::io(&coded, e))?.len();
        vars[4].1 = path(&coded);
        vars[5].1 = path(&raw_out);
        self.run(&self.decode_args, &vars)?;
        let decoded = std::fs::read(&raw_out).map_err(|e| Error::io(&raw_out, e))?;
        let frame_len = first.as_raw().len();
        if decoded.len() != frame_len * frames.len() {
            return Err(Error::Runtime(format!(
                "decoder returned {} bytes, expected {} frames of {w}x{h}",
                decoded.len(),
                frames.len()
            )));
        }
        let frames = decoded
            .chunks(frame_len)
            .map(|c| RgbImage::from_raw(w, h, c.to_vec()).expect("chunk sized to frame"))
            .collect();
        Ok(RoundTrip { frames, bitstream_bytes: Some(size) })
    }
}

/// Box-filter downsampling by an integer factor, rounding to nearest.
pub fn downsample(frame: &Frame, scale: u32) -> Result<Frame> {
    let (w, h) = frame.dimensions();
    ensure!(scale > 0, "scale must be positive");
    ensure!(w % scale == 0 && h % scale == 0, "scale {scale} does not divide the {w}x{h} frame");
    let n = scale * scale;
    Ok(RgbImage::from_fn(w / scale, h / scale, |x, y| {
        let mut acc = [0u32; 3];
        for dy in 0..scale {
            for dx in 0..scale {
                let p = frame.get_pixel(x * scale + dx, y * scale + dy);
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
            }
        }
        image::Rgb(acc.map(|a| ((a + n / 2) / n) as u8))
    }))
}

/// A source clip together with its degraded frames and per-frame MFCC rows.
#[derive(Clone, Debug)]
pub struct DegradedClip {
    pub id: String,
    pub lq_frames: Vec<Frame>,
    pub hq_frames: Vec<Frame>,
    pub mfcc: Vec<MfccRow>,
    pub fps: f64,
    pub emotion: EmotionState,
    pub au_targets: Vec<AuVector>,
    pub face_boxes: Vec<FaceBox>,
    pub crf: u32,
    pub scale: u32,
    /// Achieved bitrate in bits per second; metadata only.
    pub bitrate: Option<f64>,
}

impl DegradedClip {
    pub fn len(&self) -> usize {
        self.hq_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hq_frames.is_empty()
    }
}

pub fn degrade_clip(src: &SourceClip, crf: u32, scale: u32, codec: &Codec) -> Result<DegradedClip> {
    src.validate()?;
    let small = src.frames.iter().map(|f| downsample(f, scale)).collect::<Result<Vec<_>>>()?;
    let rt = codec.round_trip(&small, src.fps, crf)?;
    let mfcc = extract_mfcc(&src.audio, AUDIO_RATE, src.fps, src.frames.len())?;
    let bitrate = rt.bitstream_bytes.filter(|_| !src.frames.is_empty()).map(|b| b as f64 * 8.0 * src.fps / src.frames.len() as f64);
    Ok(DegradedClip {
        id: src.id.clone(),
        lq_frames: rt.frames,
        hq_frames: src.frames.clone(),
        mfcc,
        fps: src.fps,
        emotion: src.emotion,
        au_targets: src.au_targets.clone(),
        face_boxes: src.face_boxes.clone(),
        crf,
        scale,
        bitrate,
    })
}

/// Size in bytes of the uncompressed RGB container for these frames.
pub fn raw_size(frames: &[Frame], fps: f64) -> usize {
    encode_video(frames, fps).map(|b| b.len()).unwrap_or(0)
}

/// Image as a `(3, H, W)` tensor scaled to `[0, 1]`.
pub fn frame_to_tensor(frame: &Frame) -> Tensor {
    let (w, h) = frame.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = frame.as_raw();
    Tensor::from_fn(vec![3, h, w], |i| {
        let c = i / (h * w);
        let p = i % (h * w);
        raw[p * 3 + c] as f64 / 255.0
    })
}

/// Inverse of [`frame_to_tensor`], clamping and rounding to 8 bits.
pub fn tensor_to_frame(t: &Tensor) -> Frame {
    let (c, h, w) = t.dims3();
    assert_eq!(c, 3, "expected an RGB tensor");
    let d = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Network input record for frame `t` of a clip.
#[derive(Clone, Debug)]
pub struct SampleWindow {
    pub clip_id: String,
    pub t: usize,
    pub lq_window: Vec<Arc<Tensor>>,
    pub mfcc_window: Vec<MfccRow>,
    pub emotion: EmotionState,
    pub au_target: AuVector,
    pub hq_center: Arc<Tensor>,
    pub face_box: FaceBox,
}

impl SampleWindow {
    pub fn n(&self) -> usize {
        self.lq_window.len() / 2
    }

    pub fn lq_center(&self) -> &Arc<Tensor> {
        &self.lq_window[self.n()]
    }
}

/// Frame indices of the `2n+1` window around `t`, edge-replicated.
pub fn window_indices(t: usize, n: usize, len: usize) -> Vec<usize> {
    (0..=2 * n).map(|k| (t + k).saturating_sub(n).min(len - 1)).collect()
}

/// One window per frame of `clip`.
pub fn windows(clip: &DegradedClip, n: usize) -> impl Iterator<Item = SampleWindow> + '_ {
    let lq: Vec<Arc<Tensor>> = clip.lq_frames.iter().map(|f| Arc::new(frame_to_tensor(f))).collect();
    let len = clip.len();
    (0..len).map(move |t| {
        let idx = window_indices(t, n, len);
        SampleWindow {
            clip_id: clip.id.clone(),
            t,
            lq_window: idx.iter().map(|&i| lq[i].clone()).collect(),
            mfcc_window: idx.iter().map(|&i| clip.mfcc[i]).collect(),
            emotion: clip.emotion,
            au_target: clip.au_targets[t],
            hq_center: Arc::new(frame_to_tensor(&clip.hq_frames[t])),
            face_box: clip.face_boxes[t],
        }
    })
}

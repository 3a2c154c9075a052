//! Face-region evaluation of restored clips against ground truth, with the
//! bicubic baseline always reported alongside.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mmsd_autograd::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::au::AuVector;
use crate::dataset::clip::FaceBox;
use crate::dataset::degrade::{frame_to_tensor, windows, DegradedClip, SampleWindow};
use crate::dataset::emotion::EmotionState;
use crate::dataset::media::{Frame, AUDIO_RATE};
use crate::dataset::mfcc::extract_mfcc;
use crate::error::{ensure, Result};
use crate::metrics::{bicubic_upscale, psnr, ssim, MetricChannel};
use crate::network::{restore_window, Mmsd};

pub const BICUBIC: &str = "bicubic";
pub const MMSD: &str = "mmsd";

/// Scores of one clip under one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip: String,
    pub method: String,
    pub crf: u32,
    pub frames: usize,
    /// Mean over frames with finite PSNR; `None` if every frame was identical.
    pub psnr: Option<f64>,
    pub ssim: f64,
    /// Frames whose PSNR was infinite (identical face regions).
    pub infinite_psnr_frames: usize,
}

/// Mean over clips for one `(method, crf)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub crf: u32,
    pub clips: usize,
    pub frames: usize,
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub infinite_psnr_frames: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipScore>,
    pub aggregates: Vec<Aggregate>,
}

fn score(
    clip: &DegradedClip,
    method: &str,
    restored: &[Tensor],
    channel: MetricChannel,
) -> Result<ClipScore> {
    let mut psnrs = Vec::new();
    let mut inf = 0;
    let mut ssim_sum = 0.0;
    for (t, img) in restored.iter().enumerate() {
        let gt = frame_to_tensor(&clip.hq_frames[t]);
        let mask = clip.face_boxes[t];
        let p = psnr(img, &gt, &mask, channel)?;
        if p.is_finite() {
            psnrs.push(p);
        } else {
            inf += 1;
        }
        ssim_sum += ssim(img, &gt, &mask, channel)?;
    }
    let n = restored.len();
    Ok(ClipScore {
        clip: clip.id.clone(),
        method: method.into(),
        crf: clip.crf,
        frames: n,
        psnr: (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64),
        ssim: if n == 0 { 0.0 } else { ssim_sum / n as f64 },
        infinite_psnr_frames: inf,
    })
}

/// Bicubic ×scale upscale of every low-quality frame, clamped to `[0, 1]`.
pub fn bicubic_frames(clip: &DegradedClip) -> Vec<Tensor> {
    clip.lq_frames
        .iter()
        .map(|f| bicubic_upscale(&frame_to_tensor(f), clip.scale as usize).map(|v| v.clamp(0.0, 1.0)))
        .collect()
}

/// Restores every frame of `clip` with `model`.
pub fn restore_clip(model: &Mmsd, clip: &DegradedClip) -> Result<Vec<Tensor>> {
    let n = model.config.window_len / 2;
    windows(clip, n).map(|w| restore_window(model, &w, false).map(|r| r.frame)).collect()
}

/// Restores a decoded video that has no ground truth. Blank frames, zero
/// AUs and full-frame boxes fill the reference slots; eval-mode restoration
/// never reads them.
pub fn restore_decoded(
    model: &Mmsd,
    lq_frames: Vec<Frame>,
    audio: &[f32],
    fps: f64,
    emotion: EmotionState,
    parallel: bool,
) -> Result<Vec<Tensor>> {
    ensure!(!lq_frames.is_empty(), "input video has no frames");
    let scale = model.config.scale() as u32;
    let (w, h) = lq_frames[0].dimensions();
    let n = lq_frames.len();
    let clip = DegradedClip {
        id: "input".into(),
        mfcc: extract_mfcc(audio, AUDIO_RATE, fps, n)?,
        hq_frames: vec![Frame::new(w * scale, h * scale); n],
        lq_frames,
        fps,
        emotion,
        au_targets: vec![AuVector::zeros(); n],
        face_boxes: vec![FaceBox::full(w * scale, h * scale); n],
        crf: 0,
        scale,
        bitrate: None,
    };
    let blank = std::sync::Arc::new(Tensor::zeros(vec![3, (h * scale) as usize, (w * scale) as usize]));
    let ws: Vec<SampleWindow> = windows(&clip, model.config.window_len / 2)
        .map(|mut sw| {
            sw.hq_center = blank.clone();
            sw
        })
        .collect();
    let one = |w: &SampleWindow| restore_window(model, w, false).map(|r| r.frame);
    if parallel {
        ws.par_iter().map(one).collect()
    } else {
        ws.iter().map(one).collect()
    }
}

fn clip_scores(model: Option<&Mmsd>, clip: &DegradedClip, channel: MetricChannel) -> Result<Vec<ClipScore>> {
    let mut out = vec![score(clip, BICUBIC, &bicubic_frames(clip), channel)?];
    if let Some(m) = model {
        out.push(score(clip, MMSD, &restore_clip(m, clip)?, channel)?);
    }
    Ok(out)
}

/// Scores every clip under bicubic and, when given, the model.
pub fn evaluate(model: Option<&Mmsd>, clips: &[DegradedClip], channel: MetricChannel, parallel: bool) -> Result<EvalReport> {
    let per_clip: Vec<Vec<ClipScore>> = if parallel {
        clips.par_iter().map(|c| clip_scores(model, c, channel)).collect::<Result<_>>()?
    } else {
        clips.iter().map(|c| clip_scores(model, c, channel)).collect::<Result<_>>()?
    };
    Ok(EvalReport::from_clips(per_clip.into_iter().flatten().collect()))
}

impl EvalReport {
    pub fn from_clips(clips: Vec<ClipScore>) -> Self {
        let mut groups: BTreeMap<(u32, String), Vec<&ClipScore>> = BTreeMap::new();
        for c in &clips {
            groups.entry((c.crf, c.method.clone())).or_default().push(c);
        }
        let aggregates = groups
            .into_iter()
            .map(|((crf, method), cs)| {
                let finite: Vec<f64> = cs.iter().filter_map(|c| c.psnr).collect();
                Aggregate {
                    method,
                    crf,
                    clips: cs.len(),
                    frames: cs.iter().map(|c| c.frames).sum(),
                    psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                    ssim: cs.iter().map(|c| c.ssim).sum::<f64>() / cs.len() as f64,
                    infinite_psnr_frames: cs.iter().map(|c| c.infinite_psnr_frames).sum(),
                }
            })
            .collect();
        Self { clips, aggregates }
    }

    pub fn aggregate(&self, method: &str, crf: u32) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.crf == crf)
    }

    /// Methods as rows, one `PSNR/SSIM` column per CRF.
    pub fn table(&self) -> String {
        let mut crfs: Vec<u32> = self.aggregates.iter().map(|a| a.crf).collect();
        crfs.sort_unstable();
        crfs.dedup();
        let mut methods: Vec<&str> = vec![BICUBIC];
        if self.aggregates.iter().any(|a| a.method == MMSD) {
            methods.push(MMSD);
        }
        let mut s = format!("{:<10}", "method");
        for c in &crfs {
            let _ = write!(s, " | {:>16}", format!("CRF={c}"));
        }
        s.push('\n');
        for m in methods {
            let _ = write!(s, "{m:<10}");
            for &c in &crfs {
                let cell = match self.aggregate(m, c) {
                    Some(a) => match a.psnr {
                        Some(p) => format!("{p:.2}/{:.3}", a.ssim),
                        None => format!("inf/{:.3}", a.ssim),
                    },
                    None => "-".into(),
                };
                let _ = write!(s, " | {cell:>16}");
            }
            s.push('\n');
        }
        let inf: usize = self.aggregates.iter().map(|a| a.infinite_psnr_frames).sum();
        if inf > 0 {
            let _ = writeln!(s, "note: {inf} frame(s) with identical face regions excluded from PSNR means");
        }
        s
    }

    /// One JSON record per (clip, method, crf).
    pub fn jsonl(&self) -> String {
        self.clips.iter().map(|c| serde_json::to_string(c).expect("scores serialize") + "\n").collect()
    }
}

//! Seeded synthetic talking-head clips for tests and smoke runs.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::au::{write_au_file, AuVector, AU_COLUMNS, AU_DIM, AU_MAX};
use super::clip::{write_face_boxes, DatasetManifest, FaceBox, ManifestRecord, SourceClip, Split};
use super::emotion::{EmotionState, EMOTION_STATES};
use super::media::{write_audio, write_video, AUDIO_RATE};
use crate::error::{ensure, Error, Result};

pub const FIXTURE_FPS: f64 = 25.0;

/// Ground-truth resolution of generated clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureSize {
    pub height: u32,
    pub width: u32,
}

impl FixtureSize {
    pub const FULL: Self = Self { height: 288, width: 480 };
    pub const MINIATURE: Self = Self { height: 96, width: 160 };
}

fn hash_noise(x: u32, y: u32, salt: u32) -> f64 {
    let mut h = x.wrapping_mul(0x9E37_79B1) ^ y.wrapping_mul(0x85EB_CA77) ^ salt.wrapping_mul(0xC2B2_AE3D);
    h ^= h >> 15;
    h = h.wrapping_mul(0x2C1B_3C6D);
    h ^= h >> 12;
    (h & 0xFFFF) as f64 / 65535.0
}

/// Smooth texture in `[0, 1]`: bilinear interpolation of a hashed lattice.
fn value_noise(x: f64, y: f64, cell: f64, salt: u32) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (tx, ty) = (gx - x0, gy - y0);
    let at = |dx: f64, dy: f64| hash_noise((x0 + dx) as i64 as u32, (y0 + dy) as i64 as u32, salt);
    let top = at(0.0, 0.0) * (1.0 - tx) + at(1.0, 0.0) * tx;
    let bottom = at(0.0, 1.0) * (1.0 - tx) + at(1.0, 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn au_index(name: &str) -> usize {
    AU_COLUMNS.iter().position(|c| *c == name).expect("canonical AU name")
}

/// Mouth opening in `[0, 1]` at time `tau` seconds.
fn opening(tau: f64, rate_hz: f64, phase: f64) -> f64 {
    0.5 + 0.5 * (TAU * rate_hz * tau + phase).sin()
}

/// One synthetic clip: an elliptical face drifting over a textured
/// background, mouth opening in step with the loudness of a harmonic tone.
pub fn synth_clip(index: usize, n_frames: usize, height: u32, width: u32, seed: u64) -> SourceClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let skin = [rng.random_range(150.0..230.0), rng.random_range(100.0..170.0), rng.random_range(80.0..140.0)];
    let bg = [rng.random_range(20.0..90.0), rng.random_range(40.0..120.0), rng.random_range(60.0..160.0)];
    let phase: f64 = rng.random_range(0.0..TAU);
    let talk_hz: f64 = rng.random_range(2.0..4.0);
    let drift_hz: f64 = rng.random_range(0.3..0.7);
    let f0: f64 = rng.random_range(140.0..280.0);
    let emotion = EmotionState::from_index(rng.random_range(0..EMOTION_STATES)).expect("index in range");
    let base_au: Vec<f64> = (0..AU_DIM).map(|_| rng.random_range(0.0..2.0)).collect();
    let salt = rng.random::<u32>();

    let (w, h) = (width as f64, height as f64);
    let (rx, ry) = (0.14 * w, 0.3 * h);
    let mut frames = Vec::with_capacity(n_frames);
    let mut boxes = Vec::with_capacity(n_frames);
    let mut aus = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let tau = t as f64 / FIXTURE_FPS;
        let open = opening(tau, talk_hz, phase);
        let cx = w / 2.0 + 0.15 * w * (TAU * drift_hz * tau + phase).sin();
        let cy = h / 2.0 + 0.04 * h * (TAU * drift_hz * tau).cos();
        let frame = RgbImage::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let stripes = 18.0 * ((px + 2.0 * py) * 0.35).sin();
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = bg[k] * (0.6 + 0.4 * py / h) + stripes;
            }
            let (u, v) = ((px - cx) / rx, (py - cy) / ry);
            if u * u + v * v <= 1.0 {
                // texture fixed to the face so it moves with it
                let cell = (w / 80.0).max(2.0);
                let speckle = 30.0 * (value_noise(px - cx + 1000.0, py - cy + 1000.0, cell, salt) - 0.5);
                c = skin.map(|s| s * (1.0 - 0.25 * v) + speckle);
                for side in [-1.0, 1.0] {
                    let (eu, ev) = ((u - 0.38 * side) / 0.16, (v + 0.3) / 0.09);
                    if eu * eu + ev * ev <= 1.0 {
                        c = [30.0, 25.0, 20.0];
                    }
                }
                let (mu, mv) = (u / 0.35, (v - 0.45) / (0.03 + 0.14 * open));
                if mu * mu + mv * mv <= 1.0 {
                    c = [110.0, 20.0, 30.0];
                }
            }
            image::Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
        });
        frames.push(frame);
        let x0 = (cx - rx).floor().max(0.0);
        let y0 = (cy - ry).floor().max(0.0);
        let x1 = (cx + rx).ceil().min(w);
        let y1 = (cy + ry).ceil().min(h);
        boxes.push(FaceBox { x: x0 as u32, y: y0 as u32, w: (x1 - x0) as u32, h: (y1 - y0) as u32 });
        let mut v = [0.0; AU_DIM];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = base_au[i] + rng.random_range(-0.1..0.1);
        }
        v[au_index("AU25_r")] = 4.0 * open;
        v[au_index("AU26_r")] = 3.0 * open;
        let v = v.map(|a| ((a.clamp(0.0, AU_MAX)) * 100.0).round() / 100.0);
        aus.push(AuVector::new(v).expect("clamped"));
    }

    let n_samples = (n_frames as f64 / FIXTURE_FPS * AUDIO_RATE as f64).ceil() as usize;
    let audio = (0..n_samples)
        .map(|i| {
            let tau = i as f64 / AUDIO_RATE as f64;
            let amp = 0.05 + 0.4 * opening(tau, talk_hz, phase);
            let s = (TAU * f0 * tau).sin() + 0.4 * (TAU * 2.0 * f0 * tau).sin() + 0.2 * (TAU * 3.0 * f0 * tau).sin();
            (amp * s / 1.6) as f32
        })
        .collect();

    SourceClip {
        id: format!("clip{index:03}"),
        frames,
        audio,
        fps: FIXTURE_FPS,
        emotion,
        au_targets: aus,
        face_boxes: boxes,
    }
}

/// Writes `n_clips` synthetic clips and their manifest into `dir`.
pub fn make_fixture(dir: &Path, seed: u64, n_clips: usize, n_frames: usize, size: FixtureSize) -> Result<DatasetManifest> {
    ensure!(n_frames > 0, "fixture clips need at least one frame");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let clip = synth_clip(i, n_frames, size.height, size.width, seed);
        let rec = ManifestRecord {
            id: clip.id.clone(),
            hq_video: format!("{}.rgbv", clip.id).into(),
            audio: format!("{}.wav", clip.id).into(),
            au_file: format!("{}.au.csv", clip.id).into(),
            face_boxes: format!("{}.boxes.csv", clip.id).into(),
            emotion_index: clip.emotion.index(),
            split: if i % 4 == 3 { Split::Val } else { Split::Train },
        };
        write_video(&dir.join(&rec.hq_video), &clip.frames, clip.fps)?;
        write_audio(&dir.join(&rec.audio), &clip.audio)?;
        write_au_file(&dir.join(&rec.au_file), &clip.au_targets, clip.fps)?;
        write_face_boxes(&dir.join(&rec.face_boxes), &clip.face_boxes)?;
        records.push(rec);
    }
    let manifest = DatasetManifest { root: dir.to_path_buf(), records };
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_fixture(a.path(), 7, 2, 4, FixtureSize::MINIATURE).unwrap();
        make_fixture(b.path(), 7, 2, 4, FixtureSize::MINIATURE).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 9);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
        }
    }

    #[test]
    fn fixture_clips_satisfy_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_fixture(dir.path(), 3, 4, 6, FixtureSize::MINIATURE).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.records, m.records);
        let ids: std::collections::HashSet<_> = m.records.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 4);
        assert_eq!(m.split(Some(Split::Val)).count(), 1);
        for r in &loaded.records {
            let clip = loaded.load_clip(r).unwrap();
            assert_eq!(clip.frames.len(), 6);
            assert!(clip.face_boxes.iter().all(|b| b.w >= 11 && b.h >= 11));
        }
    }

    #[test]
    fn loaded_clip_matches_generated_clip() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_fixture(dir.path(), 5, 1, 3, FixtureSize::MINIATURE).unwrap();
        let loaded = m.load_clip(&m.records[0]).unwrap();
        let direct = synth_clip(0, 3, 96, 160, 5);
        assert_eq!(loaded.frames, direct.frames);
        assert_eq!(loaded.au_targets, direct.au_targets);
        assert_eq!(loaded.face_boxes, direct.face_boxes);
        assert_eq!(loaded.audio.len(), direct.audio.len());
    }
}

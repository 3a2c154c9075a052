use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::au::{load_au_file, AuVector};
use super::emotion::EmotionState;
use super::media::{read_audio, read_video, Frame, AUDIO_RATE};
use crate::error::{ensure, Error, Result};

/// Axis-aligned face rectangle in ground-truth pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl FaceBox {
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { x: 0, y: 0, w: width, h: height }
    }
}

/// Reads `t,x,y,w,h` lines; an optional header line is skipped.
pub fn read_face_boxes(path: &Path) -> Result<Vec<FaceBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let nums: Vec<u32> = line
            .split(',')
            .map(|f| f.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("line {}: expected t,x,y,w,h", lineno + 1)))?;
        if nums.len() != 5 {
            return Err(Error::format(path, format!("line {}: expected 5 fields", lineno + 1)));
        }
        if nums[0] as usize != boxes.len() {
            return Err(Error::format(path, format!("line {}: frame index {} out of order", lineno + 1, nums[0])));
        }
        boxes.push(FaceBox { x: nums[1], y: nums[2], w: nums[3], h: nums[4] });
    }
    Ok(boxes)
}

pub fn write_face_boxes(path: &Path, boxes: &[FaceBox]) -> Result<()> {
    let mut s = String::from("t,x,y,w,h\n");
    for (t, b) in boxes.iter().enumerate() {
        let _ = writeln!(s, "{t},{},{},{},{}", b.x, b.y, b.w, b.h);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One line of the manifest; file paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub hq_video: PathBuf,
    pub audio: PathBuf,
    pub au_file: PathBuf,
    pub face_boxes: PathBuf,
    pub emotion_index: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord =
                serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        let m = Self { root, records };
        m.check(path)?;
        Ok(m)
    }

    fn check(&self, path: &Path) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::format(path, format!("duplicate clip id `{}`", r.id)));
            }
            EmotionState::from_index(r.emotion_index)?;
            for f in [&r.hq_video, &r.audio, &r.au_file, &r.face_boxes] {
                let full = self.resolve(f);
                if !full.is_file() {
                    return Err(Error::format(path, format!("clip `{}` references missing file {}", r.id, full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| split.is_none_or(|s| r.split == s))
    }

    pub fn load_clip(&self, record: &ManifestRecord) -> Result<SourceClip> {
        let video = read_video(&self.resolve(&record.hq_video))?;
        let audio = read_audio(&self.resolve(&record.audio))?;
        let au = load_au_file(&self.resolve(&record.au_file))?;
        let boxes = read_face_boxes(&self.resolve(&record.face_boxes))?;
        let clip = SourceClip {
            id: record.id.clone(),
            frames: video.frames,
            audio,
            fps: video.fps,
            emotion: EmotionState::from_index(record.emotion_index)?,
            au_targets: au.rows,
            face_boxes: boxes,
        };
        clip.validate()?;
        Ok(clip)
    }
}

/// Ground-truth clip: frames, 16 kHz mono audio and per-frame annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceClip {
    pub id: String,
    pub frames: Vec<Frame>,
    pub audio: Vec<f32>,
    pub fps: f64,
    pub emotion: EmotionState,
    pub au_targets: Vec<AuVector>,
    pub face_boxes: Vec<FaceBox>,
}

impl SourceClip {
    pub fn dimensions(&self) -> (u32, u32) {
        self.frames.first().map(|f| f.dimensions()).unwrap_or((0, 0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        ensure!(self.fps > 0.0 && self.fps.is_finite(), "clip `{}`: fps must be positive", self.id);
        ensure!(
            self.au_targets.len() == n,
            "clip `{}`: {} AU rows for {} frames",
            self.id,
            self.au_targets.len(),
            n
        );
        ensure!(
            self.face_boxes.len() == n,
            "clip `{}`: {} face boxes for {} frames",
            self.id,
            self.face_boxes.len(),
            n
        );
        let (w, h) = self.dimensions();
        ensure!(self.frames.iter().all(|f| f.dimensions() == (w, h)), "clip `{}`: frame sizes differ", self.id);
        ensure!(
            self.face_boxes.iter().all(|b| b.fits(w, h)),
            "clip `{}`: face box outside the {w}x{h} frame",
            self.id
        );
        let audio_s = self.audio.len() as f64 / AUDIO_RATE as f64;
        ensure!(
            audio_s + 1e-9 >= n as f64 / self.fps,
            "clip `{}`: {audio_s:.3} s of audio for {:.3} s of video",
            self.id,
            n as f64 / self.fps
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_boxes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        let boxes = vec![FaceBox { x: 1, y: 2, w: 30, h: 40 }, FaceBox { x: 3, y: 4, w: 31, h: 41 }];
        write_face_boxes(&p, &boxes).unwrap();
        assert_eq!(read_face_boxes(&p).unwrap(), boxes);
    }

    #[test]
    fn face_boxes_out_of_order_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        fs::write(&p, "1,0,0,4,4\n").unwrap();
        assert!(matches!(read_face_boxes(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_rejects_duplicates_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let rec = ManifestRecord {
            id: "a".into(),
            hq_video: "v.rgbv".into(),
            audio: "a.wav".into(),
            au_file: "au.csv".into(),
            face_boxes: "b.csv".into(),
            emotion_index: 3,
            split: Split::Train,
        };
        let m = DatasetManifest { root: dir.path().into(), records: vec![rec.clone()] };
        let p = dir.path().join("manifest.jsonl");
        m.save(&p).unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(Error::Format { .. })));
        for f in ["v.rgbv", "a.wav", "au.csv", "b.csv"] {
            fs::write(dir.path().join(f), b"x").unwrap();
        }
        assert_eq!(DatasetManifest::load(&p).unwrap().records, vec![rec.clone()]);
        let dup = DatasetManifest { root: dir.path().into(), records: vec![rec.clone(), rec] };
        dup.save(&p).unwrap();
        let err = DatasetManifest::load(&p).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}

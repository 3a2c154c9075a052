//! Degraded variants on disk, one directory per quality factor.
//!
//! For clip `id` at factor `crf` the store holds `crf{crf}/{id}.rgbv` (the
//! decoded low-quality frames) and `crf{crf}/{id}.json` (MFCC rows and the
//! parameters that produced them). The JSON sidecar is written last, so a
//! variant without one is incomplete. A variant is up to date when its
//! sidecar records the same parameters and the same digest of the source
//! files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clip::{DatasetManifest, ManifestRecord};
use super::degrade::{degrade_clip, Codec, DegradedClip};
use super::media::{encode_video, read_video, write_file};
use super::mfcc::MfccRow;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    id: String,
    crf: u32,
    scale: u32,
    codec: Codec,
    source_sha256: String,
    frames: usize,
    bitrate: Option<f64>,
    mfcc: Vec<MfccRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prepared {
    Written,
    UpToDate,
}

pub fn variant_dir(root: &Path, crf: u32) -> PathBuf {
    root.join(format!("crf{crf}"))
}

fn paths(root: &Path, id: &str, crf: u32) -> (PathBuf, PathBuf) {
    let dir = variant_dir(root, crf);
    (dir.join(format!("{id}.rgbv")), dir.join(format!("{id}.json")))
}

/// SHA-256 over the four source files of a record, in a fixed order.
pub fn source_digest(manifest: &DatasetManifest, record: &ManifestRecord) -> Result<String> {
    let mut h = Sha256::new();
    for p in [&record.hq_video, &record.audio, &record.au_file, &record.face_boxes] {
        let full = manifest.resolve(p);
        let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Degrades one record at one quality factor unless an identical variant
/// already exists.
pub fn prepare_variant(
    manifest: &DatasetManifest,
    record: &ManifestRecord,
    root: &Path,
    crf: u32,
    scale: u32,
    codec: &Codec,
) -> Result<Prepared> {
    let (video_path, sidecar_path) = paths(root, &record.id, crf);
    let digest = source_digest(manifest, record)?;
    if video_path.is_file() {
        if let Ok(old) = read_sidecar(&sidecar_path) {
            if old.crf == crf && old.scale == scale && &old.codec == codec && old.source_sha256 == digest {
                return Ok(Prepared::UpToDate);
            }
        }
    }
    let clip = degrade_clip(&manifest.load_clip(record)?, crf, scale, codec)?;
    let dir = variant_dir(root, crf);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    // a stale sidecar must not outlive the video it describes
    if sidecar_path.exists() {
        fs::remove_file(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    }
    write_file(&video_path, &encode_video(&clip.lq_frames, clip.fps)?)?;
    let sidecar = Sidecar {
        id: record.id.clone(),
        crf,
        scale,
        codec: codec.clone(),
        source_sha256: digest,
        frames: clip.len(),
        bitrate: clip.bitrate,
        mfcc: clip.mfcc,
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_file(&sidecar_path, &json)?;
    Ok(Prepared::Written)
}

/// Reassembles a prepared variant with its ground truth from the manifest.
pub fn load_variant(manifest: &DatasetManifest, record: &ManifestRecord, root: &Path, crf: u32) -> Result<DegradedClip> {
    let (video_path, sidecar_path) = paths(root, &record.id, crf);
    if !sidecar_path.is_file() {
        return Err(Error::validation(format!(
            "clip `{}` has no prepared variant at crf {crf} under {}; run prepare-data first",
            record.id,
            root.display()
        )));
    }
    let side = read_sidecar(&sidecar_path)?;
    let src = manifest.load_clip(record)?;
    let lq = read_video(&video_path)?;
    ensure!(
        side.id == record.id && side.crf == crf,
        "sidecar {} describes clip `{}` at crf {}",
        sidecar_path.display(),
        side.id,
        side.crf
    );
    let n = src.frames.len();
    if lq.frames.len() != n || side.mfcc.len() != n {
        return Err(Error::format(
            &video_path,
            format!("{} low-quality frames and {} MFCC rows for {n} source frames", lq.frames.len(), side.mfcc.len()),
        ));
    }
    let (w, h) = src.dimensions();
    if let Some(f) = lq.frames.first() {
        if f.dimensions() != (w / side.scale, h / side.scale) {
            return Err(Error::format(&video_path, format!("frames are {:?}, expected ×{} below {w}x{h}", f.dimensions(), side.scale)));
        }
    }
    Ok(DegradedClip {
        id: src.id,
        lq_frames: lq.frames,
        hq_frames: src.frames,
        mfcc: side.mfcc,
        fps: src.fps,
        emotion: src.emotion,
        au_targets: src.au_targets,
        face_boxes: src.face_boxes,
        crf,
        scale: side.scale,
        bitrate: side.bitrate,
    })
}

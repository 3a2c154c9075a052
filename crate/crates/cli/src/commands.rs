use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmsd_core::checkpoint::{load_checkpoint, save_checkpoint};
use mmsd_core::dataset::degrade::{check_crf, tensor_to_frame, windows, PROTOCOL_CRFS};
use mmsd_core::dataset::emotion::all_state_names;
use mmsd_core::dataset::media::{encode_video, read_audio, read_video, write_file};
use mmsd_core::dataset::store::{load_variant, prepare_variant, Prepared};
use mmsd_core::dataset::{make_fixture, DatasetManifest, DegradedClip, EmotionState, FixtureSize, Split};
use mmsd_core::eval::{evaluate, restore_decoded};
use mmsd_core::network::check_window;
use mmsd_core::trainer::{train_epoch, StepReport, TrainState};
use mmsd_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ChannelArg, RunConfig, SplitArg};
use crate::logging::event;

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn crfs(rc: &RunConfig, default: &[u32]) -> Result<Vec<u32>> {
    let list = rc.crf.clone().unwrap_or_else(|| default.to_vec());
    if list.is_empty() {
        return Err(Error::validation("crf list is empty"));
    }
    for &c in &list {
        check_crf(c, RunConfig::flag(rc.any_crf))?;
    }
    Ok(list)
}

fn load_clips(manifest: &DatasetManifest, data: &Path, split: Option<Split>, crfs: &[u32]) -> Result<Vec<DegradedClip>> {
    let mut clips = Vec::new();
    for &crf in crfs {
        for r in manifest.split(split) {
            clips.push(load_variant(manifest, r, data, crf)?);
        }
    }
    Ok(clips)
}

pub fn fixtures(rc: &RunConfig) -> Result<()> {
    let out = rc.require(&rc.out, "out", "fixtures")?;
    let (seed, clips, frames) = (rc.seed.unwrap_or(0), rc.clips.unwrap_or(4), rc.frames.unwrap_or(8));
    let miniature = RunConfig::flag(rc.miniature);
    event(
        "config",
        json!({"command": "fixtures", "out": out, "seed": seed, "clips": clips, "frames": frames, "miniature": miniature}),
    );
    let size = if miniature { FixtureSize::MINIATURE } else { FixtureSize::FULL };
    let m = make_fixture(out, seed, clips, frames, size)?;
    event("fixtures_written", json!({"clips": m.records.len(), "manifest": out.join("manifest.jsonl")}));
    Ok(())
}

#[derive(Serialize)]
struct Failure {
    clip: String,
    crf: u32,
    error: String,
}

pub fn prepare_data(rc: &RunConfig) -> Result<()> {
    let manifest_path = rc.require(&rc.manifest, "manifest", "prepare-data")?;
    let out = rc.require(&rc.out, "out", "prepare-data")?;
    let crfs = crfs(rc, &PROTOCOL_CRFS)?;
    let scale = rc.scale.unwrap_or(4);
    let codec = rc.codec();
    event(
        "config",
        json!({"command": "prepare-data", "manifest": manifest_path, "out": out, "crf": crfs, "scale": scale, "codec": codec}),
    );
    let manifest = DatasetManifest::load(manifest_path)?;
    let (mut written, mut up_to_date) = (0, 0);
    let mut failures = Vec::new();
    let mut first_code = None;
    for r in &manifest.records {
        for &crf in &crfs {
            match prepare_variant(&manifest, r, out, crf, scale, &codec) {
                Ok(Prepared::Written) => written += 1,
                Ok(Prepared::UpToDate) => up_to_date += 1,
                Err(e) => {
                    log::error!("{}", json!({"event": "variant_failed", "clip": r.id, "crf": crf, "error": e.to_string()}));
                    first_code.get_or_insert(e.exit_code());
                    failures.push(Failure { clip: r.id.clone(), crf, error: e.to_string() });
                }
            }
        }
    }
    event(
        "prepare_summary",
        json!({"written": written, "up_to_date": up_to_date, "failed": failures.len(), "failures": failures}),
    );
    match first_code {
        None => Ok(()),
        Some(code) => {
            let ids: Vec<String> = failures.iter().map(|f| format!("{}@crf{}", f.clip, f.crf)).collect();
            let msg = format!("{} of {} variants failed: {}", failures.len(), failures.len() + written + up_to_date, ids.join(", "));
            Err(match code {
                2 => Error::Validation(msg),
                3 => Error::Environment(msg),
                _ => Error::Runtime(msg),
            })
        }
    }
}

/// One row of `loss_log.csv`.
#[derive(Serialize, Deserialize)]
struct LossRow {
    step: u64,
    epoch: u32,
    batch: usize,
    adv_enabled: bool,
    l1: f64,
    l_adv: f64,
    l_e: f64,
    total: f64,
    d_loss: Option<f64>,
}

impl From<&StepReport> for LossRow {
    fn from(r: &StepReport) -> Self {
        LossRow {
            step: r.step,
            epoch: r.epoch,
            batch: r.batch,
            adv_enabled: r.adv_enabled,
            l1: r.loss.l1,
            l_adv: r.loss.l_adv,
            l_e: r.loss.l_e,
            total: r.loss.total,
            d_loss: r.d_loss,
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Opens the loss log for appending. On resume, rows past the checkpoint's
/// step (left by an interrupted run) are dropped first.
fn open_loss_log(path: &Path, keep_through: Option<u64>) -> Result<csv::Writer<fs::File>> {
    let mut kept = Vec::new();
    if let (Some(last), true) = (keep_through, path.is_file()) {
        let mut rd = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        for row in rd.deserialize::<LossRow>() {
            let row = row.map_err(|e| csv_error(path, e))?;
            if row.step <= last {
                kept.push(row);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &kept {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(w)
}

pub fn train(rc: &RunConfig) -> Result<()> {
    let manifest_path = rc.require(&rc.manifest, "manifest", "train")?;
    let data = rc.require(&rc.data, "data", "train")?;
    let out = rc.require(&rc.out, "out", "train")?;
    let crfs = crfs(rc, &[32])?;
    let mut state = match &rc.resume {
        Some(p) => {
            let mut s = load_checkpoint(p)?;
            s.config = rc.resumed_config(&s.config)?;
            s
        }
        None => TrainState::new(rc.train_config())?,
    };
    state.config.validate()?;
    event(
        "config",
        json!({
            "command": "train", "manifest": manifest_path, "data": data, "out": out, "crf": crfs,
            "resume": rc.resume, "deterministic": RunConfig::flag(rc.deterministic), "train": state.config,
            "start_epoch": state.epoch, "start_step": state.step,
        }),
    );

    let manifest = DatasetManifest::load(manifest_path)?;
    let clips = load_clips(&manifest, data, Some(Split::Train), &crfs)?;
    let n = state.model.config.window_len / 2;
    let ws: Vec<_> = clips.iter().flat_map(|c| windows(c, n)).collect();
    let first = ws.first().ok_or_else(|| Error::validation("the train split has no frames"))?;
    check_window(&state.model.config, first).map_err(|e| {
        Error::validation(format!("{e}; the network size must match the data (see --miniature)"))
    })?;

    let ckpt_dir = out.join("checkpoints");
    mkdir(&ckpt_dir)?;
    let log_path = out.join("loss_log.csv");
    let mut log = open_loss_log(&log_path, rc.resume.as_ref().map(|_| state.step))?;
    while state.epoch < state.config.epochs {
        let t0 = Instant::now();
        let reports = train_epoch(&mut state, &ws, |r| {
            log.serialize(LossRow::from(r)).map_err(|e| csv_error(&log_path, e))?;
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            log::debug!("{}", crate::logging::record("step", serde_json::to_value(r).unwrap_or_default()));
            Ok(())
        })?;
        let path = ckpt_dir.join(format!("epoch_{:03}.ckpt", state.epoch));
        save_checkpoint(&state, &path)?;
        save_checkpoint(&state, &out.join("latest.ckpt"))?;
        let mean = |f: fn(&StepReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
        event(
            "epoch",
            json!({
                "epoch": state.epoch, "step": state.step, "l1": mean(|r| r.loss.l1), "total": mean(|r| r.loss.total),
                "adv_enabled": reports[0].adv_enabled, "seconds": t0.elapsed().as_secs_f64(), "checkpoint": path,
            }),
        );
    }
    event("train_done", json!({"epochs": state.epoch, "steps": state.step}));
    Ok(())
}

pub fn eval(rc: &RunConfig) -> Result<()> {
    let manifest_path = rc.require(&rc.manifest, "manifest", "eval")?;
    let data = rc.require(&rc.data, "data", "eval")?;
    let crfs = crfs(rc, &PROTOCOL_CRFS)?;
    let split = rc.split.unwrap_or(SplitArg::Val);
    let channel = rc.channel.unwrap_or(ChannelArg::Luma);
    let parallel = !RunConfig::flag(rc.deterministic);
    event(
        "config",
        json!({
            "command": "eval", "manifest": manifest_path, "data": data, "out": rc.out, "checkpoint": rc.checkpoint,
            "crf": crfs, "split": split, "channel": channel, "deterministic": !parallel,
        }),
    );
    let model = rc.checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|s| s.model);
    let manifest = DatasetManifest::load(manifest_path)?;
    let clips = load_clips(&manifest, data, split.split(), &crfs)?;
    if clips.is_empty() {
        return Err(Error::validation(format!("no clips in the {split:?} split")));
    }
    let report = evaluate(model.as_ref(), &clips, channel.into(), parallel)?;
    let table = report.table();
    print!("{table}");
    if let Some(out) = &rc.out {
        mkdir(out)?;
        write_file(&out.join("eval_table.txt"), table.as_bytes())?;
        write_file(&out.join("eval.jsonl"), report.jsonl().as_bytes())?;
    }
    event("eval_done", json!({"clips": clips.len(), "frames": clips.iter().map(|c| c.len()).sum::<usize>()}));
    Ok(())
}

fn emotion_arg(rc: &RunConfig) -> Result<EmotionState> {
    let names = all_state_names().join(", ");
    let name = rc.emotion.as_ref().ok_or_else(|| {
        Error::validation(format!("restore needs --emotion with one of the 15 states: {names}"))
    })?;
    EmotionState::from_name(name)
        .map_err(|_| Error::validation(format!("unknown emotion state `{name}`; expected one of: {names}")))
}

pub fn restore(rc: &RunConfig) -> Result<()> {
    let emotion = emotion_arg(rc)?;
    let checkpoint = rc.require(&rc.checkpoint, "checkpoint", "restore")?;
    let video = rc.require(&rc.video, "video", "restore")?;
    let audio = rc.require(&rc.audio, "audio", "restore")?;
    let out: &PathBuf = rc.require(&rc.out, "out", "restore")?;
    let parallel = !RunConfig::flag(rc.deterministic);
    event(
        "config",
        json!({
            "command": "restore", "checkpoint": checkpoint, "video": video, "audio": audio,
            "emotion": emotion.name(), "out": out, "deterministic": !parallel,
        }),
    );
    let model = load_checkpoint(checkpoint)?.model;
    let v = read_video(video)?;
    let samples = read_audio(audio)?;
    let restored = restore_decoded(&model, v.frames, &samples, v.fps, emotion, parallel)?;
    let frames: Vec<_> = restored.iter().map(tensor_to_frame).collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    write_file(out, &encode_video(&frames, v.fps)?)?;
    let (w, h) = frames[0].dimensions();
    event("restore_done", json!({"frames": frames.len(), "width": w, "height": h, "out": out}));
    Ok(())
}

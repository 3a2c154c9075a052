use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mmsd_core::config::TrainConfig;
use mmsd_core::dataset::degrade::{Codec, FfmpegCodec};
use mmsd_core::dataset::Split;
use mmsd_core::metrics::MetricChannel;
use mmsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Ffmpeg,
    Passthrough,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelArg {
    Luma,
    RgbMean,
}

impl From<ChannelArg> for MetricChannel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Luma => MetricChannel::Luma,
            ChannelArg::RgbMean => MetricChannel::RgbMean,
        }
    }
}

/// Settings for every command. Each field is a `--kebab-case` flag and a
/// snake_case key of the TOML config file; a flag beats the file. Boolean
/// flags accept `--x`, `--x true` or `--x false`.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Root of the prepared low-quality variants.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (or file, for restore).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trained checkpoint to evaluate or restore with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Quality factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub crf: Option<Vec<u32>>,
    /// Accept quality factors outside 15, 32, 40.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub any_crf: Option<bool>,
    /// Spatial downsampling factor.
    #[arg(long)]
    pub scale: Option<u32>,
    #[arg(long, value_enum)]
    pub codec: Option<CodecKind>,
    /// Encoder executable used by the ffmpeg codec.
    #[arg(long)]
    pub ffmpeg: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Shrunken network and 96x160 fixtures.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub miniature: Option<bool>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    /// Number of fixture clips.
    #[arg(long)]
    pub clips: Option<usize>,
    /// Frames per fixture clip.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Decoded low-quality video to restore.
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Audio track of that video.
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Emotion state of the clip, e.g. `happy-strong`.
    #[arg(long)]
    pub emotion: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<u32>,
    /// Window half-width.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plain_alignment: Option<bool>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),+) => {
        RunConfig { $($f: $a.$f.or($b.$f)),+ }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Fields set here win over those of `file`.
    pub fn over(self, file: RunConfig) -> RunConfig {
        prefer!(self, file; manifest, data, out, checkpoint, resume, crf, any_crf, scale, codec, ffmpeg, seed,
            deterministic, miniature, split, channel, clips, frames, video, audio, emotion, batch_size, lr, beta1,
            beta2, lambda1, lambda2, warmup_epochs, n, epochs, plain_alignment)
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, key: &str, command: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| {
            Error::validation(format!("{command} needs --{} (or `{key}` in the config file)", key.replace('_', "-")))
        })
    }

    pub fn flag(v: Option<bool>) -> bool {
        v.unwrap_or(false)
    }

    pub fn codec(&self) -> Codec {
        match self.codec.unwrap_or(CodecKind::Ffmpeg) {
            CodecKind::Passthrough => Codec::Passthrough,
            CodecKind::Ffmpeg => {
                let mut c = FfmpegCodec::default();
                if let Some(exe) = &self.ffmpeg {
                    c.executable = exe.clone();
                }
                Codec::Ffmpeg(c)
            }
        }
    }

    /// Fresh training schedule: defaults, then every override given.
    pub fn train_config(&self) -> TrainConfig {
        let base = if Self::flag(self.miniature) { TrainConfig::miniature() } else { TrainConfig::default() };
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            lambda1: self.lambda1.unwrap_or(base.lambda1),
            lambda2: self.lambda2.unwrap_or(base.lambda2),
            warmup_epochs: self.warmup_epochs.unwrap_or(base.warmup_epochs),
            n: self.n.unwrap_or(base.n),
            seed: self.seed.unwrap_or(base.seed),
            epochs: self.epochs.unwrap_or(base.epochs),
            miniature: base.miniature,
            plain_alignment: self.plain_alignment.unwrap_or(base.plain_alignment),
        }
    }

    /// Schedule of a resumed run. Only `epochs` may differ from the
    /// checkpoint; any other override must repeat the stored value.
    pub fn resumed_config(&self, stored: &TrainConfig) -> Result<TrainConfig> {
        let mut clashes = Vec::new();
        macro_rules! same {
            ($($f:ident),+) => {$(
                if let Some(v) = self.$f {
                    if v != stored.$f {
                        clashes.push(format!("{} = {:?} (checkpoint has {:?})", stringify!($f), v, stored.$f));
                    }
                }
            )+};
        }
        same!(batch_size, lr, beta1, beta2, lambda1, lambda2, warmup_epochs, n, seed, miniature, plain_alignment);
        if !clashes.is_empty() {
            return Err(Error::validation(format!(
                "only `epochs` can change when resuming; conflicting settings: {}",
                clashes.join(", ")
            )));
        }
        Ok(TrainConfig { epochs: self.epochs.unwrap_or(stored.epochs), ..stored.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        run: RunConfig,
    }

    fn parse(args: &[&str]) -> RunConfig {
        Wrap::parse_from(std::iter::once("x").chain(args.iter().copied())).run
    }

    #[test]
    fn flags_beat_file_values() {
        let file: RunConfig = toml::from_str("lr = 0.001\nepochs = 3\ncrf = [15, 40]\nminiature = true").unwrap();
        let merged = parse(&["--lr", "0.01", "--crf", "32"]).over(file);
        assert_eq!(merged.lr, Some(0.01));
        assert_eq!(merged.epochs, Some(3));
        assert_eq!(merged.crf, Some(vec![32]));
        let t = merged.train_config();
        assert_eq!((t.lr, t.epochs, t.n, t.miniature), (0.01, 3, 1, true));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: std::result::Result<RunConfig, _> = toml::from_str("learning_rate = 0.1");
        assert!(r.unwrap_err().to_string().contains("learning_rate"));
    }

    #[test]
    fn bare_boolean_flag_means_true() {
        assert_eq!(parse(&["--deterministic"]).deterministic, Some(true));
        assert_eq!(parse(&["--deterministic", "false"]).deterministic, Some(false));
        assert_eq!(parse(&[]).deterministic, None);
    }

    #[test]
    fn resume_allows_only_more_epochs() {
        let stored = TrainConfig::miniature();
        let rc = RunConfig { epochs: Some(20), seed: Some(stored.seed), ..Default::default() };
        assert_eq!(rc.resumed_config(&stored).unwrap().epochs, 20);
        let rc = RunConfig { lr: Some(1.0), ..Default::default() };
        assert!(rc.resumed_config(&stored).unwrap_err().to_string().contains("lr"));
    }
}

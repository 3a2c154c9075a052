use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Widths, depths and resolutions of the restoration network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature width shared by every branch.
    pub channels: usize,
    pub lq_height: usize,
    pub lq_width: usize,
    /// Number of ×2 upsampling blocks in reconstruction.
    pub recon_up_levels: usize,
    pub recon_blocks: usize,
    pub video_blocks: usize,
    /// Frames per input window (2N+1).
    pub window_len: usize,
    pub deform_kernel: usize,
    /// Replace deformable sampling by a regular convolution.
    pub plain_alignment: bool,
    pub mfcc_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Share weights between the two LSTM directions.
    pub tied_lstm: bool,
    pub audio_base_channels: usize,
    pub audio_base_height: usize,
    pub audio_base_width: usize,
    pub audio_up_widths: Vec<usize>,
    pub emotion_dim: usize,
    pub au_dim: usize,
    pub au_hidden: Vec<usize>,
    pub attention_hidden: Vec<usize>,
    pub dropout: f64,
    pub embed: usize,
    pub disc_widths: Vec<usize>,
}

impl ModelConfig {
    pub fn full(n: usize) -> Self {
        Self {
            channels: 64,
            lq_height: 72,
            lq_width: 120,
            recon_up_levels: 2,
            recon_blocks: 10,
            video_blocks: 4,
            window_len: 2 * n + 1,
            deform_kernel: 3,
            plain_alignment: false,
            mfcc_dim: crate::dataset::mfcc::MFCC_DIM,
            lstm_hidden: 128,
            lstm_layers: 3,
            tied_lstm: false,
            audio_base_channels: 15,
            audio_base_height: 9,
            audio_base_width: 15,
            audio_up_widths: vec![32, 64, 64],
            emotion_dim: crate::dataset::emotion::EMOTION_STATES,
            au_dim: crate::dataset::au::AU_DIM,
            au_hidden: vec![128, 128, 64],
            attention_hidden: vec![64, 64],
            dropout: 0.5,
            embed: 32,
            disc_widths: vec![64, 128, 256, 512],
        }
    }

    /// Shrunken variant for CPU tests: widths ÷8, spatial ÷3, depths kept.
    pub fn miniature(n: usize) -> Self {
        Self {
            channels: 8,
            lq_height: 24,
            lq_width: 40,
            audio_base_height: 3,
            audio_base_width: 5,
            audio_up_widths: vec![4, 8, 8],
            lstm_hidden: 16,
            au_hidden: vec![16, 16, 8],
            attention_hidden: vec![8, 8],
            embed: 4,
            disc_widths: vec![8, 16, 32, 64],
            ..Self::full(n)
        }
    }

    pub fn scale(&self) -> usize {
        1 << self.recon_up_levels
    }

    pub fn hq_height(&self) -> usize {
        self.lq_height * self.scale()
    }

    pub fn hq_width(&self) -> usize {
        self.lq_width * self.scale()
    }

    pub fn center(&self) -> usize {
        self.window_len / 2
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels > 0 && self.embed > 0, "channel widths must be positive");
        ensure!(self.window_len >= 1, "window must hold at least one frame");
        ensure!(self.deform_kernel % 2 == 1, "deformable kernel must be odd");
        ensure!(self.lstm_layers >= 1 && self.lstm_hidden > 0, "LSTM needs a layer and a hidden width");
        let up = 1usize << self.audio_up_widths.len();
        ensure!(
            self.audio_base_height * up == self.lq_height && self.audio_base_width * up == self.lq_width,
            "audio base grid {}x{} with {} doublings does not reach {}x{}",
            self.audio_base_height,
            self.audio_base_width,
            self.audio_up_widths.len(),
            self.lq_height,
            self.lq_width
        );
        ensure!(
            self.audio_up_widths.last() == Some(&self.channels),
            "audio upsampling must end at {} channels",
            self.channels
        );
        ensure!(self.au_hidden.len() == 3, "AU generator needs three hidden layers");
        ensure!(self.attention_hidden.len() == 2, "channel attention needs two hidden layers");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)");
        ensure!(!self.disc_widths.is_empty(), "discriminator needs at least one block");
        Ok(())
    }
}

/// Optimisation schedule and loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub warmup_epochs: u32,
    /// Window half-width N.
    pub n: usize,
    pub seed: u64,
    pub epochs: u32,
    pub miniature: bool,
    pub plain_alignment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            lambda1: 0.01,
            lambda2: 0.001,
            warmup_epochs: 2,
            n: 2,
            seed: 0,
            epochs: 10,
            miniature: false,
            plain_alignment: false,
        }
    }
}

impl TrainConfig {
    /// Defaults with the miniature switch on (N = 1).
    pub fn miniature() -> Self {
        Self { miniature: true, n: 1, ..Self::default() }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = if self.miniature { ModelConfig::miniature(self.n) } else { ModelConfig::full(self.n) };
        m.plain_alignment = self.plain_alignment;
        m
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "betas must lie in [0, 1)");
        ensure!(self.lambda1 >= 0.0 && self.lambda2 >= 0.0, "loss weights must be non-negative");
        ensure!(self.epochs > 0, "epochs must be positive");
        ensure!(
            self.warmup_epochs <= self.epochs,
            "warmup_epochs ({}) exceeds epochs ({})",
            self.warmup_epochs,
            self.epochs
        );
        Ok(())
    }
}

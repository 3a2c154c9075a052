//! Mel-frequency cepstral coefficients, one row per video frame.
//!
//! Row `k` analyses a 25 ms Hann window centred on `(k + 0.5) / fps`
//! seconds: power spectrum → 26 triangular mel filters (HTK mel scale,
//! [`MEL_FMIN`] to Nyquist) → natural log, floored at [`LOG_FLOOR`] and at
//! [`DYNAMIC_RANGE_DB`] below the row's loudest band → orthonormal DCT-II,
//! keeping the first 13 coefficients.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MFCC_DIM: usize = 13;
pub const N_MELS: usize = 26;
pub const WINDOW_SECONDS: f64 = 0.025;
pub const LOG_FLOOR: f64 = 1e-10;
/// Lowest filter edge in Hz.
pub const MEL_FMIN: f64 = 400.0 / 3.0;
/// Bands quieter than this many dB below the loudest one are clamped, so
/// window-phase leakage far from the signal does not reach the cepstrum.
pub const DYNAMIC_RANGE_DB: f64 = 80.0;

pub type MfccRow = [f64; MFCC_DIM];

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

pub struct MfccExtractor {
    rate: u32,
    win_len: usize,
    n_fft: usize,
    window: Vec<f64>,
    /// Per filter: (first bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
    dct: Vec<[f64; N_MELS]>,
    fft: Arc<dyn Fft<f64>>,
    floor_row: MfccRow,
}

impl MfccExtractor {
    pub fn new(rate: u32) -> Result<Self> {
        if rate < 1000 {
            return Err(Error::validation(format!("sample rate {rate} Hz is too low for MFCC analysis")));
        }
        let win_len = (WINDOW_SECONDS * rate as f64).round() as usize;
        let n_fft = win_len.next_power_of_two();
        let window = (0..win_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (win_len - 1) as f64).cos())
            .collect();

        let nyquist = rate as f64 / 2.0;
        let (mel_lo, mel_hi) = (hz_to_mel(MEL_FMIN), hz_to_mel(nyquist));
        let edges: Vec<f64> =
            (0..N_MELS + 2).map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (N_MELS + 1) as f64)).collect();
        let bin_hz = rate as f64 / n_fft as f64;
        let filters = (0..N_MELS)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = (lo / bin_hz).ceil() as usize;
                let last = ((hi / bin_hz).floor() as usize).min(n_fft / 2);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                        .max(0.0)
                    })
                    .collect();
                (first, weights)
            })
            .collect();

        let dct = (0..MFCC_DIM)
            .map(|i| {
                let s = if i == 0 { (1.0 / N_MELS as f64).sqrt() } else { (2.0 / N_MELS as f64).sqrt() };
                let mut row = [0.0; N_MELS];
                for (m, r) in row.iter_mut().enumerate() {
                    *r = s * (PI * i as f64 * (m as f64 + 0.5) / N_MELS as f64).cos();
                }
                row
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let mut me = Self { rate, win_len, n_fft, window, filters, dct, fft, floor_row: [0.0; MFCC_DIM] };
        me.floor_row = me.cepstrum(&[LOG_FLOOR.ln(); N_MELS]);
        Ok(me)
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn window_len(&self) -> usize {
        self.win_len
    }

    pub fn fft_len(&self) -> usize {
        self.n_fft
    }

    /// The row produced by a window with no energy at all.
    pub fn floor_row(&self) -> MfccRow {
        self.floor_row
    }

    fn cepstrum(&self, log_mel: &[f64; N_MELS]) -> MfccRow {
        let mut out = [0.0; MFCC_DIM];
        for (o, basis) in out.iter_mut().zip(&self.dct) {
            *o = basis.iter().zip(log_mel).map(|(b, l)| b * l).sum();
        }
        out
    }

    /// MFCC row of the window starting at sample `start` (may be negative or
    /// run past the end; missing samples count as zero).
    pub fn row_at(&self, audio: &[f32], start: isize) -> MfccRow {
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut energy = 0.0;
        for (n, w) in self.window.iter().enumerate() {
            let idx = start + n as isize;
            if idx >= 0 && (idx as usize) < audio.len() {
                let s = audio[idx as usize] as f64;
                energy += s * s;
                buf[n].re = s * w;
            }
        }
        if energy == 0.0 {
            return self.floor_row;
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..=self.n_fft / 2].iter().map(|c| c.norm_sqr()).collect();
        let mut log_mel = [0.0; N_MELS];
        for (l, (first, weights)) in log_mel.iter_mut().zip(&self.filters) {
            let e: f64 = weights.iter().enumerate().map(|(i, w)| w * power[first + i]).sum();
            *l = e.max(LOG_FLOOR).ln();
        }
        let floor = log_mel.iter().copied().fold(f64::NEG_INFINITY, f64::max) - DYNAMIC_RANGE_DB * 10f64.ln() / 10.0;
        log_mel.iter_mut().for_each(|l| *l = l.max(floor));
        self.cepstrum(&log_mel)
    }

    /// First sample of the analysis window for video frame `k`.
    pub fn window_start(&self, k: usize, fps: f64) -> isize {
        let centre = ((k as f64 + 0.5) / fps * self.rate as f64).floor() as isize;
        centre - (self.win_len / 2) as isize
    }

    pub fn extract(&self, audio: &[f32], fps: f64, n_frames: usize) -> Result<Vec<MfccRow>> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::validation(format!("fps must be positive, got {fps}")));
        }
        let needed = n_frames as f64 / fps;
        let have = audio.len() as f64 / self.rate as f64;
        if have + 1e-9 < needed {
            return Err(Error::validation(format!(
                "audio lasts {have:.3} s but {n_frames} frames at {fps} fps need {needed:.3} s"
            )));
        }
        Ok((0..n_frames).map(|k| self.row_at(audio, self.window_start(k, fps))).collect())
    }
}

pub fn extract_mfcc(audio: &[f32], rate: u32, fps: f64, n_frames: usize) -> Result<Vec<MfccRow>> {
    MfccExtractor::new(rate)?.extract(audio, fps, n_frames)
}

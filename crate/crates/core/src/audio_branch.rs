//! Audio features: a stacked bidirectional LSTM over the MFCC window, then a
//! fully connected lift to a small grid and ×2 sub-pixel upsampling to the
//! low-quality frame size.
//!
//! LSTM gates are packed `[input, forget, cell, output]` with one bias per
//! cell and zero initial state. Above the first layer each direction reads
//! `concat(own direction, other direction)` of the layer below, which makes
//! reversing the sequence exactly swap the two directions when they share
//! weights.

use mmsd_autograd::{Bound, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::dataset::mfcc::MfccRow;
use crate::error::{ensure, Result};
use crate::layers::{init_linear, init_upsample_block, linear, upsample_block, FeatureMaps, MapTag};

fn cell_name(layer: usize, backward: bool, tied: bool) -> String {
    let dir = if backward && !tied { "bwd" } else { "fwd" };
    format!("audio.lstm.l{layer}.{dir}")
}

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let h = cfg.lstm_hidden;
    let bound = 1.0 / (h as f64).sqrt();
    for l in 0..cfg.lstm_layers {
        let input = if l == 0 { cfg.mfcc_dim } else { 2 * h };
        let dirs: &[bool] = if cfg.tied_lstm { &[false] } else { &[false, true] };
        for &b in dirs {
            let name = cell_name(l, b, cfg.tied_lstm);
            store.insert(format!("{name}.w_ih"), Tensor::uniform(vec![4 * h, input], bound, rng));
            store.insert(format!("{name}.w_hh"), Tensor::uniform(vec![4 * h, h], bound, rng));
            store.insert(format!("{name}.bias"), Tensor::uniform(vec![4 * h], bound, rng));
        }
    }
    let base = cfg.audio_base_channels * cfg.audio_base_height * cfg.audio_base_width;
    init_linear(store, "audio.fc", base, 2 * h, rng);
    let mut cin = cfg.audio_base_channels;
    for (i, &cout) in cfg.audio_up_widths.iter().enumerate() {
        init_upsample_block(store, &format!("audio.up{i}"), cout, cin, rng);
        cin = cout;
    }
}

/// Runs one LSTM direction over `xs`, returning the hidden state after each
/// element in processing order.
fn run_cell<'t>(p: &Bound<'t>, name: &str, xs: &[Var<'t>], hidden: usize) -> Vec<Var<'t>> {
    let tape = xs[0].tape();
    let w_ih = p.get(&format!("{name}.w_ih"));
    let w_hh = p.get(&format!("{name}.w_hh"));
    let b = p.get(&format!("{name}.bias"));
    let mut h = tape.constant(Tensor::zeros(vec![hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![hidden]));
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let gates = x.linear(w_ih, Some(b)) + h.linear(w_hh, None);
        let i = gates.slice(0, hidden).sigmoid();
        let f = gates.slice(hidden, hidden).sigmoid();
        let g = gates.slice(2 * hidden, hidden).tanh();
        let o = gates.slice(3 * hidden, hidden).sigmoid();
        c = f * c + i * g;
        h = o * c.tanh();
        out.push(h);
    }
    out
}

/// Audio feature vector `concat(forward final, backward final)` of the top layer.
pub fn encode_audio<'t>(p: &Bound<'t>, cfg: &ModelConfig, rows: &[Var<'t>]) -> Result<Var<'t>> {
    ensure!(!rows.is_empty(), "empty MFCC window");
    for r in rows {
        ensure!(r.shape() == [cfg.mfcc_dim], "MFCC row has shape {:?}, expected [{}]", r.shape(), cfg.mfcc_dim);
    }
    let h = cfg.lstm_hidden;
    let t_len = rows.len();
    let mut fwd_in: Vec<Var> = rows.to_vec();
    let mut bwd_in: Vec<Var> = rows.to_vec();
    let mut last = (fwd_in[0], bwd_in[0]);
    for l in 0..cfg.lstm_layers {
        let fwd = run_cell(p, &cell_name(l, false, cfg.tied_lstm), &fwd_in, h);
        let rev: Vec<Var> = bwd_in.iter().rev().copied().collect();
        let mut bwd = run_cell(p, &cell_name(l, true, cfg.tied_lstm), &rev, h);
        bwd.reverse();
        last = (fwd[t_len - 1], bwd[0]);
        fwd_in = (0..t_len).map(|t| Var::concat(&[fwd[t], bwd[t]])).collect();
        bwd_in = (0..t_len).map(|t| Var::concat(&[bwd[t], fwd[t]])).collect();
    }
    Ok(Var::concat(&[last.0, last.1]))
}

/// Fully connected lift to `(channels, rows, cols)`, then the upsampling blocks.
pub fn lift_to_maps<'t>(p: &Bound<'t>, cfg: &ModelConfig, v: Var<'t>) -> Result<FeatureMaps<'t>> {
    ensure!(v.shape() == [2 * cfg.lstm_hidden], "audio vector has shape {:?}", v.shape());
    let mut x = linear(p, "audio.fc", v).reshape(&[
        cfg.audio_base_channels,
        cfg.audio_base_height,
        cfg.audio_base_width,
    ]);
    for i in 0..cfg.audio_up_widths.len() {
        x = upsample_block(p, &format!("audio.up{i}"), x);
    }
    Ok(FeatureMaps::new(x, MapTag::Audio))
}

/// MFCC rows as constant vectors on `tape`.
pub fn rows_on_tape<'t>(tape: &'t mmsd_autograd::Tape, rows: &[MfccRow]) -> Vec<Var<'t>> {
    rows.iter().map(|r| tape.constant(Tensor::new(vec![r.len()], r.to_vec()))).collect()
}

pub fn extract_audio_features<'t>(p: &Bound<'t>, cfg: &ModelConfig, rows: &[Var<'t>]) -> Result<FeatureMaps<'t>> {
    ensure!(rows.len() == cfg.window_len, "MFCC window holds {} rows, expected {}", rows.len(), cfg.window_len);
    let v = encode_audio(p, cfg, rows)?;
    lift_to_maps(p, cfg, v)
}

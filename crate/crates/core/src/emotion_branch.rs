//! Action-unit prediction from the emotion state and video features, and the
//! channel attention derived from the predicted AUs.

use mmsd_autograd::{Bound, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::dataset::emotion::EmotionState;
use crate::error::{ensure, Result};
use crate::layers::{init_linear, linear, FeatureMaps, MapTag};

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let mut inp = cfg.channels + cfg.emotion_dim;
    for (i, &w) in cfg.au_hidden.iter().enumerate() {
        init_linear(store, &format!("emotion.au{i}"), w, inp, rng);
        inp = w;
    }
    init_linear(store, "emotion.au_head", cfg.au_dim, inp, rng);
    let mut inp = cfg.au_dim;
    for (i, &w) in cfg.attention_hidden.iter().enumerate() {
        init_linear(store, &format!("emotion.att{i}"), w, inp, rng);
        inp = w;
    }
    let last = cfg.attention_hidden.len();
    init_linear(store, &format!("emotion.att{last}"), cfg.channels, inp, rng);
}

pub fn onehot<'t>(tape: &'t mmsd_autograd::Tape, s: EmotionState) -> Var<'t> {
    tape.constant(Tensor::new(vec![s.onehot().len()], s.onehot().to_vec()))
}

/// Inverted dropout: zero with probability `rate`, otherwise scale by `1/(1-rate)`.
fn dropout<'t>(x: Var<'t>, rate: f64, rng: &mut dyn rand::RngCore) -> Var<'t> {
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
    x * x.tape().constant(mask)
}

/// Predicted AU intensities `f̂_E`. Dropout is applied only when `train_rng` is given.
pub fn predict_aus<'t>(
    p: &Bound<'t>,
    cfg: &ModelConfig,
    s: Var<'t>,
    fv: &FeatureMaps<'t>,
    mut train_rng: Option<&mut dyn rand::RngCore>,
) -> Result<Var<'t>> {
    let fv = fv.expect(MapTag::Video)?;
    ensure!(s.shape() == [cfg.emotion_dim], "emotion code has shape {:?}", s.shape());
    let mut x = Var::concat(&[fv.spatial_mean(), s]);
    for i in 0..cfg.au_hidden.len() {
        x = linear(p, &format!("emotion.au{i}"), x).relu();
        if let Some(rng) = train_rng.as_deref_mut() {
            x = dropout(x, cfg.dropout, rng);
        }
    }
    Ok(linear(p, "emotion.au_head", x))
}

/// Channel attention `ω_VA` in `(0, 1)`, one weight per feature channel.
pub fn channel_attention<'t>(p: &Bound<'t>, cfg: &ModelConfig, au: Var<'t>) -> Var<'t> {
    let n = cfg.attention_hidden.len();
    let mut x = au;
    for i in 0..n {
        x = linear(p, &format!("emotion.att{i}"), x).relu();
    }
    linear(p, &format!("emotion.att{n}"), x).sigmoid()
}

/// `L_E = Σ (pred − target)²`.
pub fn au_loss<'t>(pred: Var<'t>, target: &[f64]) -> Var<'t> {
    pred.squared_distance(std::rc::Rc::new(Tensor::new(vec![target.len()], target.to_vec())))
}

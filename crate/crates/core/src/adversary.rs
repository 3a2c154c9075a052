//! Emotion-conditioned discriminator and the training objective.

use std::rc::Rc;

use mmsd_autograd::{Bound, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ensure, Result};
use crate::layers::{bias, init_conv, init_linear, linear, weight};

/// Floor applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-8;
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let mut inp = 3 + cfg.emotion_dim;
    for (i, &w) in cfg.disc_widths.iter().enumerate() {
        init_conv(store, &format!("disc.block{i}"), w, inp, 4, rng);
        inp = w;
    }
    init_linear(store, "disc.head", 1, inp, rng);
}

/// `D(img, s)`: probability in `(0, 1)` that `img` is a real frame for state `s`.
pub fn discriminate<'t>(p: &Bound<'t>, cfg: &ModelConfig, img: Var<'t>, s: Var<'t>) -> Result<Var<'t>> {
    let shape = img.shape();
    ensure!(shape.len() == 3 && shape[0] == 3, "discriminator input must be (3, H, W), got {shape:?}");
    ensure!(s.shape() == [cfg.emotion_dim], "emotion code has shape {:?}", s.shape());
    let mut x = Var::concat(&[img, s.tile(shape[1], shape[2])]);
    for i in 0..cfg.disc_widths.len() {
        let name = format!("disc.block{i}");
        x = x.conv2d(weight(p, &name), Some(bias(p, &name)), 2, 1).leaky_relu(LEAKY_SLOPE);
    }
    Ok(linear(p, "disc.head", x.spatial_mean()).sigmoid())
}

/// `-ln p` with `p` floored at [`LOG_EPS`].
pub fn generator_adv_loss<'t>(p: Var<'t>) -> Var<'t> {
    p.neg_log(LOG_EPS).mean()
}

/// `-ln p_real - ln(1 - p_fake)`, both floored at [`LOG_EPS`].
pub fn discriminator_loss<'t>(p_real: Var<'t>, p_fake: Var<'t>) -> Var<'t> {
    p_real.neg_log(LOG_EPS).mean() + p_fake.neg_log_complement(LOG_EPS).mean()
}

pub fn l1_loss<'t>(restored: Var<'t>, gt: Rc<Tensor>) -> Var<'t> {
    restored.l1_mean(gt)
}

/// The three loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l_adv: f64,
    pub l_e: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn new(l1: f64, l_adv: f64, l_e: f64, lambda1: f64, lambda2: f64) -> Self {
        Self { l1, l_adv, l_e, total: l1 + lambda1 * l_adv + lambda2 * l_e, lambda1, lambda2 }
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.l_adv.is_finite() && self.l_e.is_finite() && self.total.is_finite()
    }
}

/// Objective terms on the tape plus their values.
pub struct Objective<'t> {
    pub total: Var<'t>,
    pub breakdown: LossBreakdown,
}

/// `L = L1 + λ1·L_adv + λ2·L_E`; the adversarial term is left out when `p` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<'t>(
    restored: Var<'t>,
    gt: Rc<Tensor>,
    p: Option<Var<'t>>,
    au_pred: Var<'t>,
    au_gt: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Objective<'t> {
    let l1 = l1_loss(restored, gt);
    let le = crate::emotion_branch::au_loss(au_pred, au_gt);
    let mut total = l1 + le.scale(lambda2);
    let mut l_adv = 0.0;
    if let Some(p) = p {
        let adv = generator_adv_loss(p);
        l_adv = adv.value().item();
        total = l1 + adv.scale(lambda1) + le.scale(lambda2);
    }
    let breakdown = LossBreakdown::new(l1.value().item(), l_adv, le.value().item(), lambda1, lambda2);
    Objective { total, breakdown }
}

//! Audio-video attention fusion and tri-modal fusion.
//!
//! `ω(x, y) = σ(θ(f_V)(x, y) · φ(f_A)(x, y))` with θ, φ separate 1×1
//! convolutions to the embedding width. `f_VA = conv1×1(concat(f_V, ω ⊙ f_A))`
//! and `f_VAE = conv1×1(concat(ω_VA ⊗ f_VA, tile(s)))`.

use mmsd_autograd::{Bound, ParamStore, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{ensure, Error, Result};
use crate::layers::{conv, init_conv, FeatureMaps, MapTag};

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let c = cfg.channels;
    init_conv(store, "fusion.theta", cfg.embed, c, 1, rng);
    init_conv(store, "fusion.phi", cfg.embed, c, 1, rng);
    init_conv(store, "fusion.av", c, 2 * c, 1, rng);
    init_conv(store, "fusion.tri", c, c + cfg.emotion_dim, 1, rng);
}

/// Per-position gate `(H, W)`; entries lie in `(0, 1)` unless built as a probe.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMap<'t> {
    var: Var<'t>,
}

impl<'t> AttentionMap<'t> {
    /// Wraps a map after checking every entry is finite and inside `(0, 1)`.
    pub fn new(var: Var<'t>) -> Result<Self> {
        let v = var.value();
        ensure!(v.rank() == 2, "attention map must be (H, W), got {:?}", v.shape());
        if let Some(bad) = v.data().iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
            return Err(Error::Runtime(format!("attention weight {bad} outside (0, 1)")));
        }
        Ok(Self { var })
    }

    /// Any `(H, W)` map, range unchecked. For probing limits such as a closed gate.
    pub fn probe(var: Var<'t>) -> Self {
        Self { var }
    }

    pub fn var(&self) -> Var<'t> {
        self.var
    }
}

fn same_dims(a: &Var<'_>, b: &Var<'_>, what: &str) -> Result<()> {
    ensure!(a.shape() == b.shape(), "{what}: shapes {:?} and {:?} differ", a.shape(), b.shape());
    Ok(())
}

/// Embedded inner product `θ(f_V) · φ(f_A)` before the sigmoid.
pub fn attention_logits<'t>(p: &Bound<'t>, fv: &FeatureMaps<'t>, fa: &FeatureMaps<'t>) -> Result<Var<'t>> {
    let (v, a) = (fv.expect(MapTag::Video)?, fa.expect(MapTag::Audio)?);
    same_dims(&v, &a, "attention inputs")?;
    Ok(conv(p, "fusion.theta", v).channel_dot(conv(p, "fusion.phi", a)))
}

pub fn attention_weights<'t>(p: &Bound<'t>, fv: &FeatureMaps<'t>, fa: &FeatureMaps<'t>) -> Result<AttentionMap<'t>> {
    AttentionMap::new(attention_logits(p, fv, fa)?.sigmoid())
}

pub fn fuse_audio_video<'t>(
    p: &Bound<'t>,
    fv: &FeatureMaps<'t>,
    fa: &FeatureMaps<'t>,
    w: &AttentionMap<'t>,
) -> Result<FeatureMaps<'t>> {
    let (v, a) = (fv.expect(MapTag::Video)?, fa.expect(MapTag::Audio)?);
    same_dims(&v, &a, "fusion inputs")?;
    let s = v.shape();
    ensure!(w.var.shape() == s[1..], "attention map {:?} vs maps {:?}", w.var.shape(), s);
    let gated = a.spatial_scale(w.var);
    Ok(FeatureMaps::new(conv(p, "fusion.av", Var::concat(&[v, gated])), MapTag::AudioVideo))
}

pub fn fuse_trimodal<'t>(
    p: &Bound<'t>,
    fva: &FeatureMaps<'t>,
    channel_weights: Var<'t>,
    s: Var<'t>,
) -> Result<FeatureMaps<'t>> {
    let x = fva.expect(MapTag::AudioVideo)?;
    let (c, h, w) = fva.dims();
    ensure!(channel_weights.shape() == [c], "channel attention {:?} vs {c} channels", channel_weights.shape());
    ensure!(s.value().rank() == 1, "emotion code must be a vector");
    let scaled = x.channel_scale(channel_weights);
    Ok(FeatureMaps::new(
        conv(p, "fusion.tri", Var::concat(&[scaled, s.tile(h, w)])),
        MapTag::AudioVideoEmotion,
    ))
}

//! Fused features to the restored high-resolution centre frame.
//!
//! Residual blocks at the feature width, ×2 sub-pixel upsampling blocks, a
//! 3×3 convolution to RGB, plus a bicubic upscale of the low-quality centre
//! frame as a global residual, clamped to `[0, 1]`.

use mmsd_autograd::{Bound, ParamStore, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{ensure, Result};
use crate::layers::{conv, init_conv, init_res_block, init_upsample_block, res_block, upsample_block, FeatureMaps, MapTag};
use crate::metrics::bicubic_upscale;

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let c = cfg.channels;
    for i in 0..cfg.recon_blocks {
        init_res_block(store, &format!("recon.res{i}"), c, rng);
    }
    for i in 0..cfg.recon_up_levels {
        init_upsample_block(store, &format!("recon.up{i}"), c, c, rng);
    }
    init_conv(store, "recon.out", 3, c, 3, rng);
}

/// Pre-clamp output: learned detail plus the bicubic baseline.
pub fn reconstruct_unclamped<'t>(
    p: &Bound<'t>,
    cfg: &ModelConfig,
    fvae: &FeatureMaps<'t>,
    lq_center: Var<'t>,
) -> Result<Var<'t>> {
    let x = fvae.expect(MapTag::AudioVideoEmotion)?;
    let (c, h, w) = fvae.dims();
    ensure!(c == cfg.channels, "fused maps have {c} channels, expected {}", cfg.channels);
    ensure!(
        lq_center.shape() == [3, h, w],
        "low-quality centre frame {:?} does not match maps {h}x{w}",
        lq_center.shape()
    );
    let mut x = x;
    for i in 0..cfg.recon_blocks {
        x = res_block(p, &format!("recon.res{i}"), x);
    }
    for i in 0..cfg.recon_up_levels {
        x = upsample_block(p, &format!("recon.up{i}"), x);
    }
    let detail = conv(p, "recon.out", x);
    let base = lq_center.tape().constant(bicubic_upscale(&lq_center.value(), cfg.scale()));
    Ok(detail + base)
}

pub fn reconstruct<'t>(
    p: &Bound<'t>,
    cfg: &ModelConfig,
    fvae: &FeatureMaps<'t>,
    lq_center: Var<'t>,
) -> Result<Var<'t>> {
    Ok(reconstruct_unclamped(p, cfg, fvae, lq_center)?.clamp01())
}

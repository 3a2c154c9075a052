//! Motion-aligned inter-frame video features.
//!
//! Each frame goes through a shared 3×3 stem. Every frame of the window
//! (the centre included) is aligned to the centre by a deformable 3×3
//! convolution whose sampling offsets come from a regular convolution over
//! `concat(centre, frame)`. The aligned stacks are fused by a 1×1 convolution
//! and refined by residual blocks.

use mmsd_autograd::{ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{ensure, Result};
use crate::layers::{bias, check_dims, conv, init_conv, init_res_block, res_block, weight, FeatureMaps, MapTag};
use mmsd_autograd::Bound;

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let c = cfg.channels;
    let k = cfg.deform_kernel;
    init_conv(store, "video.stem", c, 3, 3, rng);
    if !cfg.plain_alignment {
        // zero offsets at init: alignment starts as a plain convolution
        store.insert("video.offset.weight", Tensor::zeros(vec![2 * k * k, 2 * c, 3, 3]));
        store.insert("video.offset.bias", Tensor::zeros(vec![2 * k * k]));
    }
    init_conv(store, "video.align", c, c, k, rng);
    init_conv(store, "video.fuse", c, c * cfg.window_len, 1, rng);
    for i in 0..cfg.video_blocks {
        init_res_block(store, &format!("video.res{i}"), c, rng);
    }
}

/// Shared-weight stem applied to every `(3, H, W)` frame.
pub fn shallow_embed<'t>(p: &Bound<'t>, frames: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    ensure!(!frames.is_empty(), "empty frame window");
    let s = frames[0].shape();
    ensure!(s.len() == 3 && s[0] == 3, "frames must be (3, H, W), got {s:?}");
    for f in frames {
        check_dims("window frame", f, 3, s[1], s[2])?;
    }
    Ok(frames.iter().map(|f| conv(p, "video.stem", *f).relu()).collect())
}

/// Per-position sampling offsets for aligning `neighbor` to `center`.
pub fn predict_offsets<'t>(p: &Bound<'t>, center: Var<'t>, neighbor: Var<'t>) -> Var<'t> {
    conv(p, "video.offset", Var::concat(&[center, neighbor]))
}

/// Deformable convolution of `neighbor` at offsets predicted from both stacks.
/// With `plain` set this is the regular convolution with the same weights.
pub fn align_features<'t>(p: &Bound<'t>, center: Var<'t>, neighbor: Var<'t>, plain: bool) -> Var<'t> {
    if plain {
        return conv(p, "video.align", neighbor);
    }
    let offsets = predict_offsets(p, center, neighbor);
    neighbor.deform_conv2d(offsets, weight(p, "video.align"), Some(bias(p, "video.align")))
}

/// `f_V` for a window of `2N+1` frames.
pub fn extract_video_features<'t>(p: &Bound<'t>, cfg: &ModelConfig, window: &[Var<'t>]) -> Result<FeatureMaps<'t>> {
    ensure!(
        window.len() == cfg.window_len,
        "window holds {} frames, config expects {}",
        window.len(),
        cfg.window_len
    );
    let stacks = shallow_embed(p, window)?;
    let center = stacks[cfg.center()];
    let aligned: Vec<Var> = stacks.iter().map(|s| align_features(p, center, *s, cfg.plain_alignment)).collect();
    let mut x = conv(p, "video.fuse", Var::concat(&aligned)).relu();
    for i in 0..cfg.video_blocks {
        x = res_block(p, &format!("video.res{i}"), x);
    }
    Ok(FeatureMaps::new(x, MapTag::Video))
}

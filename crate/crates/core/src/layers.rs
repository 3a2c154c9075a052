//! Parameter initialisation and the small building blocks every branch uses.

use mmsd_autograd::{Bound, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Which stage of the network produced a feature stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapTag {
    Video,
    Audio,
    AudioVideo,
    AudioVideoEmotion,
}

/// A `(C, H, W)` feature stack tagged with its origin.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMaps<'t> {
    var: Var<'t>,
    tag: MapTag,
}

impl<'t> FeatureMaps<'t> {
    pub fn new(var: Var<'t>, tag: MapTag) -> Self {
        Self { var, tag }
    }

    pub fn var(&self) -> Var<'t> {
        self.var
    }

    pub fn tag(&self) -> MapTag {
        self.tag
    }

    /// The maps, provided they carry `tag`.
    pub fn expect(&self, tag: MapTag) -> Result<Var<'t>> {
        if self.tag != tag {
            return Err(Error::validation(format!("expected {tag:?} feature maps, got {:?}", self.tag)));
        }
        Ok(self.var)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.var.value().dims3()
    }
}

/// Default initialisation: weights and bias uniform in `±1/√fan_in`.
pub fn init_conv(store: &mut ParamStore, name: &str, out: usize, inp: usize, k: usize, rng: &mut impl Rng) {
    let bound = 1.0 / ((inp * k * k) as f64).sqrt();
    store.insert(format!("{name}.weight"), Tensor::uniform(vec![out, inp, k, k], bound, rng));
    store.insert(format!("{name}.bias"), Tensor::uniform(vec![out], bound, rng));
}

pub fn init_linear(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (inp as f64).sqrt();
    store.insert(format!("{name}.weight"), Tensor::uniform(vec![out, inp], bound, rng));
    store.insert(format!("{name}.bias"), Tensor::uniform(vec![out], bound, rng));
}

pub fn init_res_block(store: &mut ParamStore, name: &str, ch: usize, rng: &mut impl Rng) {
    init_conv(store, &format!("{name}.conv1"), ch, ch, 3, rng);
    init_conv(store, &format!("{name}.conv2"), ch, ch, 3, rng);
}

pub fn weight<'t>(p: &Bound<'t>, name: &str) -> Var<'t> {
    p.get(&format!("{name}.weight"))
}

pub fn bias<'t>(p: &Bound<'t>, name: &str) -> Var<'t> {
    p.get(&format!("{name}.bias"))
}

/// Square convolution with "same" padding for odd kernels.
pub fn conv<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    let w = weight(p, name);
    let k = w.shape()[2];
    x.conv2d(w, Some(bias(p, name)), 1, k / 2)
}

pub fn linear<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    x.linear(weight(p, name), Some(bias(p, name)))
}

/// conv3×3 → ReLU → conv3×3, plus the input.
pub fn res_block<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    let y = conv(p, &format!("{name}.conv1"), x).relu();
    conv(p, &format!("{name}.conv2"), y) + x
}

/// conv3×3 to `4·out` channels → pixel shuffle ×2 → ReLU.
pub fn upsample_block<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    conv(p, name, x).pixel_shuffle(2).relu()
}

pub fn init_upsample_block(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut impl Rng) {
    init_conv(store, name, out * 4, inp, 3, rng);
}

/// Checks a `(C, H, W)` value against an expected shape.
pub fn check_dims(what: &str, v: &Var<'_>, c: usize, h: usize, w: usize) -> Result<()> {
    let s = v.shape();
    if s != [c, h, w] {
        return Err(Error::validation(format!("{what}: expected shape [{c}, {h}, {w}], got {s:?}")));
    }
    Ok(())
}

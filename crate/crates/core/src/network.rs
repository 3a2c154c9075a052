//! The composed restoration network and its discriminator.
//!
//! Topology per window: video branch → `f_V`; audio branch → `f_A`;
//! `ω = attention(f_V, f_A)`; `f_VA = fuse(f_V, f_A, ω)`;
//! `f̂_E = AU generator(s, f_V)`; `ω_VA = channel attention(f̂_E)`;
//! `f_VAE = fuse(f_VA, ω_VA, s)`; `Î = reconstruct(f_VAE, centre frame)`.

use mmsd_autograd::{Bound, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::dataset::degrade::SampleWindow;
use crate::error::{ensure, Error, Result};
use crate::layers::FeatureMaps;
use crate::{adversary, audio_branch, emotion_branch, fusion, reconstruction, video_branch};

/// Parameters of the generator and the discriminator, kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct Mmsd {
    pub config: ModelConfig,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
}

impl Mmsd {
    /// Default-initialised network; deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut generator = ParamStore::new();
        video_branch::init_params(&config, &mut generator, &mut rng);
        audio_branch::init_params(&config, &mut generator, &mut rng);
        emotion_branch::init_params(&config, &mut generator, &mut rng);
        fusion::init_params(&config, &mut generator, &mut rng);
        reconstruction::init_params(&config, &mut generator, &mut rng);
        let mut discriminator = ParamStore::new();
        adversary::init_params(&config, &mut discriminator, &mut rng);
        Ok(Self { config, generator, discriminator })
    }
}

/// Everything one generator pass leaves on the tape.
pub struct Forward<'t> {
    pub restored: Var<'t>,
    pub au_pred: Var<'t>,
    pub emotion: Var<'t>,
    pub fv: FeatureMaps<'t>,
    pub fa: FeatureMaps<'t>,
    pub omega: Var<'t>,
    pub fva: FeatureMaps<'t>,
    pub omega_va: Var<'t>,
    pub fvae: FeatureMaps<'t>,
}

impl Forward<'_> {
    /// Range and finiteness checks on the intermediate values.
    pub fn check_invariants(&self) -> Result<()> {
        let open = |name: &str, v: &Tensor| -> Result<()> {
            match v.data().iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
                Some(bad) => Err(Error::Runtime(format!("{name} entry {bad} outside (0, 1)"))),
                None => Ok(()),
            }
        };
        open("ω", &self.omega.value())?;
        open("ω_VA", &self.omega_va.value())?;
        for (name, v) in [
            ("f_V", self.fv.var()),
            ("f_A", self.fa.var()),
            ("f_VA", self.fva.var()),
            ("f_VAE", self.fvae.var()),
            ("f̂_E", self.au_pred),
            ("restored frame", self.restored),
        ] {
            if !v.value().is_finite() {
                return Err(Error::Runtime(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }
}

/// Checks a window against the configured sizes.
pub fn check_window(cfg: &ModelConfig, w: &SampleWindow) -> Result<()> {
    ensure!(
        w.lq_window.len() == cfg.window_len && w.mfcc_window.len() == cfg.window_len,
        "window has {} frames and {} MFCC rows, config expects {}",
        w.lq_window.len(),
        w.mfcc_window.len(),
        cfg.window_len
    );
    for f in &w.lq_window {
        ensure!(
            f.shape() == [3, cfg.lq_height, cfg.lq_width],
            "low-quality frame {:?}, config expects [3, {}, {}]",
            f.shape(),
            cfg.lq_height,
            cfg.lq_width
        );
    }
    ensure!(
        w.hq_center.shape() == [3, cfg.hq_height(), cfg.hq_width()],
        "ground-truth frame {:?}, config expects [3, {}, {}]",
        w.hq_center.shape(),
        cfg.hq_height(),
        cfg.hq_width()
    );
    Ok(())
}

/// Generator pass over one window. Dropout is active only when `train_rng` is given.
pub fn forward<'t>(
    p: &Bound<'t>,
    cfg: &ModelConfig,
    tape: &'t Tape,
    window: &SampleWindow,
    train_rng: Option<&mut dyn rand::RngCore>,
) -> Result<Forward<'t>> {
    check_window(cfg, window)?;
    let frames: Vec<Var> = window.lq_window.iter().map(|f| tape.constant((**f).clone())).collect();
    let rows = audio_branch::rows_on_tape(tape, &window.mfcc_window);
    let s = emotion_branch::onehot(tape, window.emotion);

    let fv = video_branch::extract_video_features(p, cfg, &frames)?;
    let fa = audio_branch::extract_audio_features(p, cfg, &rows)?;
    let omega = fusion::attention_weights(p, &fv, &fa)?;
    let fva = fusion::fuse_audio_video(p, &fv, &fa, &omega)?;
    let au_pred = emotion_branch::predict_aus(p, cfg, s, &fv, train_rng)?;
    let omega_va = emotion_branch::channel_attention(p, cfg, au_pred);
    let fvae = fusion::fuse_trimodal(p, &fva, omega_va, s)?;
    let restored = reconstruction::reconstruct(p, cfg, &fvae, frames[cfg.center()])?;
    Ok(Forward { restored, au_pred, emotion: s, fv, fa, omega: omega.var(), fva, omega_va, fvae })
}

/// Result of restoring one window in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Restoration {
    pub frame: Tensor,
    pub au: Tensor,
    /// `f_V, f_A, ω, f_VA, ω_VA, f_VAE` when requested.
    pub intermediates: Option<Intermediates>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Intermediates {
    pub fv: Tensor,
    pub fa: Tensor,
    pub omega: Tensor,
    pub fva: Tensor,
    pub omega_va: Tensor,
    pub fvae: Tensor,
}

/// Eval-mode restoration of the window's centre frame. With `debug` set the
/// intermediate maps are returned and their invariants checked.
pub fn restore_window(model: &Mmsd, window: &SampleWindow, debug: bool) -> Result<Restoration> {
    let tape = Tape::new();
    let p = model.generator.bind(&tape, false);
    let f = forward(&p, &model.config, &tape, window, None)?;
    if debug || cfg!(debug_assertions) {
        f.check_invariants()?;
    }
    let intermediates = debug.then(|| Intermediates {
        fv: (*f.fv.var().value()).clone(),
        fa: (*f.fa.var().value()).clone(),
        omega: (*f.omega.value()).clone(),
        fva: (*f.fva.var().value()).clone(),
        omega_va: (*f.omega_va.value()).clone(),
        fvae: (*f.fvae.var().value()).clone(),
    });
    Ok(Restoration { frame: (*f.restored.value()).clone(), au: (*f.au_pred.value()).clone(), intermediates })
}

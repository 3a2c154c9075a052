//! Alternating generator/discriminator optimisation with a warmup period
//! during which only the generator trains, without the adversarial term.
//!
//! Within a step: generator forward on every sample, then (once warmup is
//! over) one discriminator update on real/fake pairs, then the generator
//! update against the freshly updated discriminator. Losses and gradients
//! are averaged over the batch. All randomness comes from the state RNG, so a
//! run is a pure function of its seed and data.

use std::collections::BTreeMap;
use std::rc::Rc;

use mmsd_autograd::{Adam, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{discriminate, discriminator_loss, total_loss, LossBreakdown};
use crate::config::TrainConfig;
use crate::dataset::degrade::SampleWindow;
use crate::emotion_branch::onehot;
use crate::error::{ensure, Error, Result};
use crate::network::{forward, Mmsd};

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Mmsd,
    pub config: TrainConfig,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Completed epochs.
    pub epoch: u32,
    /// Completed optimisation steps.
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Mmsd::init(config.model_config(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let adam = || Adam::new(config.lr, config.beta1, config.beta2);
        Ok(Self { model, gen_opt: adam(), disc_opt: adam(), epoch: 0, step: 0, rng, config })
    }

    pub fn adv_enabled(&self) -> bool {
        self.epoch >= self.config.warmup_epochs
    }
}

/// What one optimisation step did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based global step number.
    pub step: u64,
    pub epoch: u32,
    pub batch: usize,
    pub adv_enabled: bool,
    pub loss: LossBreakdown,
    pub d_loss: Option<f64>,
}

fn sample_ids(batch: &[SampleWindow]) -> String {
    batch.iter().map(|w| format!("{}:{}", w.clip_id, w.t)).collect::<Vec<_>>().join(", ")
}

fn add_into(acc: &mut BTreeMap<String, Tensor>, g: BTreeMap<String, Tensor>) {
    for (k, v) in g {
        match acc.get_mut(&k) {
            Some(a) => a.add_assign(&v),
            None => {
                acc.insert(k, v);
            }
        }
    }
}

fn scale_all(g: &mut BTreeMap<String, Tensor>, s: f64) {
    g.values_mut().for_each(|t| t.scale_assign(s));
}

/// Batch-mean discriminator loss and gradients for real frames against
/// the given fakes.
pub fn discriminator_gradients(
    model: &Mmsd,
    batch: &[SampleWindow],
    fakes: &[Tensor],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut grads = BTreeMap::new();
    let mut loss = 0.0;
    for (w, fake) in batch.iter().zip(fakes) {
        let tape = Tape::new();
        let p = model.discriminator.bind(&tape, true);
        let s = onehot(&tape, w.emotion);
        let real = discriminate(&p, &model.config, tape.constant((*w.hq_center).clone()), s)?;
        let fake = discriminate(&p, &model.config, tape.constant(fake.clone()), s)?;
        let l = discriminator_loss(real, fake);
        loss += l.value().item();
        add_into(&mut grads, p.grads(&tape.backward(l)));
    }
    let n = batch.len() as f64;
    scale_all(&mut grads, 1.0 / n);
    Ok((loss / n, grads))
}

/// Batch-mean generator objective and gradients. `seeds` seed each sample's
/// dropout; `disc` (held fixed) supplies the adversarial term when given.
pub fn generator_gradients(
    model: &Mmsd,
    config: &TrainConfig,
    batch: &[SampleWindow],
    seeds: &[u64],
    disc: Option<&ParamStore>,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let mut grads = BTreeMap::new();
    let (mut l1, mut ladv, mut le) = (0.0, 0.0, 0.0);
    for (w, &seed) in batch.iter().zip(seeds) {
        let tape = Tape::new();
        let p = model.generator.bind(&tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = forward(&p, &model.config, &tape, w, Some(&mut rng))?;
        if cfg!(debug_assertions) {
            f.check_invariants()?;
        }
        let score = match disc {
            Some(d) => Some(discriminate(&d.bind(&tape, false), &model.config, f.restored, f.emotion)?),
            None => None,
        };
        let obj = total_loss(
            f.restored,
            Rc::new((*w.hq_center).clone()),
            score,
            f.au_pred,
            w.au_target.values(),
            config.lambda1,
            config.lambda2,
        );
        l1 += obj.breakdown.l1;
        ladv += obj.breakdown.l_adv;
        le += obj.breakdown.l_e;
        add_into(&mut grads, p.grads(&tape.backward(obj.total)));
    }
    let n = batch.len() as f64;
    scale_all(&mut grads, 1.0 / n);
    Ok((LossBreakdown::new(l1 / n, ladv / n, le / n, config.lambda1, config.lambda2), grads))
}

/// Eval-free generator pass producing the restored frames of a batch.
fn generate(model: &Mmsd, batch: &[SampleWindow], seeds: &[u64]) -> Result<Vec<Tensor>> {
    batch
        .iter()
        .zip(seeds)
        .map(|(w, &seed)| {
            let tape = Tape::new();
            let p = model.generator.bind(&tape, false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((*forward(&p, &model.config, &tape, w, Some(&mut rng))?.restored.value()).clone())
        })
        .collect()
}

fn all_finite(g: &BTreeMap<String, Tensor>) -> Option<&str> {
    g.iter().find(|(_, t)| !t.is_finite()).map(|(k, _)| k.as_str())
}

/// One optimisation step on `batch`. `batch_id` only labels diagnostics.
pub fn train_step(state: &mut TrainState, batch: &[SampleWindow], batch_id: usize) -> Result<StepReport> {
    ensure!(!batch.is_empty(), "empty batch");
    let adv = state.adv_enabled();
    let seeds: Vec<u64> = batch.iter().map(|_| state.rng.random()).collect();
    let fail = |what: String| {
        Error::Runtime(format!(
            "{what} at epoch {} step {} in batch {batch_id} (samples {})",
            state.epoch,
            state.step + 1,
            sample_ids(batch)
        ))
    };

    let mut d_loss = None;
    if adv {
        let fakes = generate(&state.model, batch, &seeds)?;
        let (l, g) = discriminator_gradients(&state.model, batch, &fakes)?;
        if !l.is_finite() {
            return Err(fail(format!("non-finite discriminator loss {l}")));
        }
        if let Some(name) = all_finite(&g) {
            return Err(fail(format!("non-finite gradient for `{name}`")));
        }
        state.disc_opt.step(&mut state.model.discriminator, &g);
        d_loss = Some(l);
    }

    let disc = adv.then_some(&state.model.discriminator);
    let (loss, grads) = generator_gradients(&state.model, &state.config, batch, &seeds, disc)?;
    if !loss.is_finite() {
        return Err(fail(format!("non-finite loss {loss:?}")));
    }
    if let Some(name) = all_finite(&grads) {
        return Err(fail(format!("non-finite gradient for `{name}`")));
    }
    state.gen_opt.step(&mut state.model.generator, &grads);
    state.step += 1;
    Ok(StepReport { step: state.step, epoch: state.epoch, batch: batch_id, adv_enabled: adv, loss, d_loss })
}

/// One pass over `windows` in a freshly shuffled order.
pub fn train_epoch(
    state: &mut TrainState,
    windows: &[SampleWindow],
    mut on_step: impl FnMut(&StepReport) -> Result<()>,
) -> Result<Vec<StepReport>> {
    ensure!(!windows.is_empty(), "no training windows");
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut state.rng);
    let mut reports = Vec::new();
    for (b, chunk) in order.chunks(state.config.batch_size).enumerate() {
        let batch: Vec<SampleWindow> = chunk.iter().map(|&i| windows[i].clone()).collect();
        let r = train_step(state, &batch, b)?;
        on_step(&r)?;
        reports.push(r);
    }
    state.epoch += 1;
    Ok(reports)
}

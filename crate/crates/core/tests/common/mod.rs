//! Independent reference implementations and helpers shared by the
//! integration tests.
#![allow(dead_code)]

use mmsd_autograd::{Bound, ParamStore, Tape, Tensor, Var};
use mmsd_core::config::TrainConfig;
use mmsd_core::dataset::degrade::{degrade_clip, windows, Codec, SampleWindow};
use mmsd_core::dataset::fixture::synth_clip;
use mmsd_core::dataset::FaceBox;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rand_t(shape: &[usize], bound: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), bound, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Miniature windows (N = 1) from `clips` synthetic clips of `frames` frames.
pub fn mini_windows(seed: u64, clips: usize, frames: usize) -> Vec<SampleWindow> {
    (0..clips)
        .flat_map(|i| {
            let clip = degrade_clip(&synth_clip(i, frames, 96, 160, seed), 32, 4, &Codec::Passthrough).unwrap();
            windows(&clip, 1).collect::<Vec<_>>()
        })
        .collect()
}

pub fn mini_train_config() -> TrainConfig {
    TrainConfig { batch_size: 2, epochs: 4, ..TrainConfig::miniature() }
}

pub type Probe<'a> = dyn for<'t> Fn(&Bound<'t>, &[Var<'t>]) -> Var<'t> + 'a;

/// Worst gradient mismatch found by [`fd_check`].
#[derive(Debug)]
pub struct GradReport {
    pub worst: f64,
    pub worst_name: String,
    pub checked: usize,
}

/// Compares analytic gradients of `Σ probe ⊙ f(params, inputs)` with central
/// differences, on up to `per_tensor` sampled entries of every input and
/// every parameter whose name starts with one of `prefixes`.
pub fn fd_check(
    store: &ParamStore,
    prefixes: &[&str],
    inputs: &[Tensor],
    per_tensor: usize,
    step: f64,
    f: &Probe<'_>,
) -> GradReport {
    let tape = Tape::new();
    let p = store.bind(&tape, true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&p, &vars);
    let probe = rand_t(&out.shape(), 1.0, 4242);
    let loss = (out * tape.constant(probe.clone())).sum();
    let grads = tape.backward(loss);
    let pgrads = p.grads(&grads);

    let eval = |s: &ParamStore, xs: &[Tensor]| -> f64 {
        let t = Tape::new();
        let b = s.bind(&t, false);
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&b, &vs);
        o.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut report = GradReport { worst: 0.0, worst_name: String::new(), checked: 0 };
    let mut note = |name: String, a: Vec<f64>, n: Vec<f64>| {
        let len = a.len();
        let err = mmsd_autograd::gradcheck::relative_error(&Tensor::new(vec![len], a), &Tensor::new(vec![len], n));
        report.checked += len;
        if err >= report.worst {
            report.worst = err;
            report.worst_name = name;
        }
    };

    let names: Vec<String> =
        store.names().filter(|n| prefixes.iter().any(|p| n.starts_with(p))).map(String::from).collect();
    assert!(!names.is_empty() || prefixes.is_empty(), "no parameters match {prefixes:?}");
    for name in names {
        let len = store.get(&name).unwrap().len();
        let idx = sample(&mut rng, len, per_tensor.min(len)).into_vec();
        let mut work = store.clone();
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for i in idx {
            let orig = work.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + step;
            let up = eval(&work, inputs);
            work.get_mut(&name).unwrap().data_mut()[i] = orig - step;
            let down = eval(&work, inputs);
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            nu.push((up - down) / (2.0 * step));
            an.push(pgrads[&name].data()[i]);
        }
        note(name, an, nu);
    }
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v);
        let idx = sample(&mut rng, inputs[k].len(), per_tensor.min(inputs[k].len())).into_vec();
        let mut work = inputs.to_vec();
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for i in idx {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let up = eval(store, &work);
            work[k].data_mut()[i] = orig - step;
            let down = eval(store, &work);
            work[k].data_mut()[i] = orig;
            nu.push((up - down) / (2.0 * step));
            an.push(g.data()[i]);
        }
        note(format!("input {k}"), an, nu);
    }
    report
}

// ---- scalar references ----

pub fn ref_luma(img: &Tensor, y: usize, x: usize) -> f64 {
    let (_, h, w) = img.dims3();
    let d = img.data();
    let p = y * w + x;
    0.299 * d[p] + 0.587 * d[h * w + p] + 0.114 * d[2 * h * w + p]
}

pub fn ref_psnr(a: &Tensor, b: &Tensor, m: &FaceBox) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in m.y as usize..(m.y + m.h) as usize {
        for x in m.x as usize..(m.x + m.w) as usize {
            let d = ref_luma(a, y, x) - ref_luma(b, y, x);
            se += d * d;
            n += 1.0;
        }
    }
    10.0 * (1.0 / (se / n)).log10()
}

/// Mean SSIM over every 11×11 window inside the mask, each window weighted
/// by a 2-D Gaussian (σ = 1.5) summed directly.
pub fn ref_ssim(a: &Tensor, b: &Tensor, m: &FaceBox) -> f64 {
    let k = 11usize;
    let mut w2 = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (i, row) in w2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0.0;
    for y0 in m.y as usize..=(m.y + m.h) as usize - k {
        for x0 in m.x as usize..=(m.x + m.w) as usize - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = w2[i][j] / total;
                    let u = ref_luma(a, y0 + i, x0 + j);
                    let v = ref_luma(b, y0 + i, x0 + j);
                    mx += wt * u;
                    my += wt * v;
                    sxx += wt * u * u;
                    syy += wt * v * v;
                    sxy += wt * u * v;
                }
            }
            let (vx, vy, cv) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += (2.0 * mx * my + c1) * (2.0 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    acc / count
}

/// 1×1 convolution by explicit loops. `w` is `(O, I, 1, 1)`.
pub fn ref_conv1x1(w: &Tensor, b: &Tensor, x: &Tensor) -> Tensor {
    let (ci, h, wd) = x.dims3();
    let co = w.shape()[0];
    let mut out = Tensor::zeros(vec![co, h, wd]);
    for o in 0..co {
        for p in 0..h * wd {
            let mut s = b.data()[o];
            for i in 0..ci {
                s += w.data()[o * ci + i] * x.data()[i * h * wd + p];
            }
            out.data_mut()[o * h * wd + p] = s;
        }
    }
    out
}

fn stack(parts: &[&Tensor]) -> Tensor {
    let (_, h, w) = parts[0].dims3();
    let c: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(vec![c, h, w], data)
}

/// Per-position gate `1/(1+e^{-⟨θ f_V, φ f_A⟩})`.
pub fn ref_attention(store: &ParamStore, fv: &Tensor, fa: &Tensor) -> Tensor {
    let g = |n: &str| store.get(n).unwrap();
    let th = ref_conv1x1(g("fusion.theta.weight"), g("fusion.theta.bias"), fv);
    let ph = ref_conv1x1(g("fusion.phi.weight"), g("fusion.phi.bias"), fa);
    let (e, h, w) = th.dims3();
    Tensor::from_fn(vec![h, w], |p| {
        let dot: f64 = (0..e).map(|c| th.data()[c * h * w + p] * ph.data()[c * h * w + p]).sum();
        1.0 / (1.0 + (-dot).exp())
    })
}

pub fn ref_fuse_av(store: &ParamStore, fv: &Tensor, fa: &Tensor, omega: &Tensor) -> Tensor {
    let (c, h, w) = fa.dims3();
    let gated = Tensor::from_fn(vec![c, h, w], |i| fa.data()[i] * omega.data()[i % (h * w)]);
    ref_conv1x1(store.get("fusion.av.weight").unwrap(), store.get("fusion.av.bias").unwrap(), &stack(&[fv, &gated]))
}

pub fn ref_fuse_tri(store: &ParamStore, fva: &Tensor, cw: &[f64], s: &[f64]) -> Tensor {
    let (c, h, w) = fva.dims3();
    let scaled = Tensor::from_fn(vec![c, h, w], |i| fva.data()[i] * cw[i / (h * w)]);
    let tiled = Tensor::from_fn(vec![s.len(), h, w], |i| s[i / (h * w)]);
    ref_conv1x1(store.get("fusion.tri.weight").unwrap(), store.get("fusion.tri.bias").unwrap(), &stack(&[&scaled, &tiled]))
}

/// Directional derivative along a random direction over every parameter and
/// input: `(analytic, central difference)`.
pub fn jvp_check(store: &ParamStore, inputs: &[Tensor], step: f64, f: &Probe<'_>) -> (f64, f64) {
    let tape = Tape::new();
    let p = store.bind(&tape, true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&p, &vars);
    let probe = rand_t(&out.shape(), 1.0, 777);
    let grads = tape.backward((out * tape.constant(probe.clone())).sum());
    let pg = p.grads(&grads);

    let dir_p: Vec<(String, Tensor)> =
        store.iter().enumerate().map(|(i, (k, v))| (k.clone(), rand_t(v.shape(), 1.0, 1000 + i as u64))).collect();
    let dir_x: Vec<Tensor> = inputs.iter().enumerate().map(|(i, x)| rand_t(x.shape(), 1.0, 2000 + i as u64)).collect();
    let mut analytic = 0.0;
    for (k, d) in &dir_p {
        analytic += pg[k].data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>();
    }
    for (v, d) in vars.iter().zip(&dir_x) {
        analytic += grads.get_or_zeros(*v).data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>();
    }
    let eval = |sign: f64| {
        let mut s = store.clone();
        for (k, d) in &dir_p {
            let t = s.get_mut(k).unwrap();
            *t = t.zip_map(d, |a, b| a + sign * step * b);
        }
        let xs: Vec<Tensor> = inputs.iter().zip(&dir_x).map(|(x, d)| x.zip_map(d, |a, b| a + sign * step * b)).collect();
        let t = Tape::new();
        let b = s.bind(&t, false);
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&b, &vs);
        o.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    (analytic, (eval(1.0) - eval(-1.0)) / (2.0 * step))
}

pub fn init_store(cfg: &mmsd_core::config::ModelConfig, f: fn(&mmsd_core::config::ModelConfig, &mut ParamStore, &mut ChaCha8Rng)) -> ParamStore {
    let mut s = ParamStore::new();
    f(cfg, &mut s, &mut ChaCha8Rng::seed_from_u64(3));
    s
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::time::{Duration, Instant};

use common::*;
use mmsd_autograd::{ParamStore, Tape, Tensor};
use mmsd_core::adversary::{generator_adv_loss, total_loss, LossBreakdown};
use mmsd_core::checkpoint::{encode, load_checkpoint, save_checkpoint};
use mmsd_core::config::{ModelConfig, TrainConfig};
use mmsd_core::dataset::degrade::{degrade_clip, windows, Codec};
use mmsd_core::dataset::emotion::all_state_names;
use mmsd_core::dataset::fixture::synth_clip;
use mmsd_core::dataset::{encode_emotion, EmotionState, FaceBox, EMOTION_STATES};
use mmsd_core::emotion_branch::{au_loss, channel_attention, onehot};
use mmsd_core::fusion::{attention_weights, fuse_audio_video, fuse_trimodal, AttentionMap};
use mmsd_core::layers::{FeatureMaps, MapTag};
use mmsd_core::metrics::{bicubic_upscale, psnr, ssim, MetricChannel};
use mmsd_core::network::{restore_window, Mmsd};
use mmsd_core::trainer::{train_epoch, train_step, TrainState};
use mmsd_core::{audio_branch, emotion_branch, fusion, reconstruction, video_branch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! require {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn store_with(cfg: &ModelConfig, init: &[fn(&ModelConfig, &mut ParamStore, &mut ChaCha8Rng)]) -> ParamStore {
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in init {
        f(cfg, &mut s, &mut rng);
    }
    s
}

fn gradient_suite() -> Outcome {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let cfg = ModelConfig::miniature(1);
    let (c, h, w) = (cfg.channels, cfg.lq_height, cfg.lq_width);
    let maps = || vec![rand_t(&[c, h, w], 1.0, 10), rand_t(&[c, h, w], 1.0, 11)];
    let mut lines = Vec::new();
    let mut worst = 0.0f64;
    let mut run = |label: &str, r: GradReport| {
        lines.push(format!("{label} {:.1e} ({})", r.worst, r.worst_name));
        worst = worst.max(r.worst);
    };

    let fus = store_with(&cfg, &[fusion::init_params]);
    run(
        "attention",
        fd_check(&fus, &["fusion.theta", "fusion.phi"], &maps(), 8, 1e-6, &|p, v| {
            let fv = FeatureMaps::new(v[0], MapTag::Video);
            let fa = FeatureMaps::new(v[1], MapTag::Audio);
            attention_weights(p, &fv, &fa).unwrap().var()
        }),
    );
    run(
        "audio-video fusion",
        fd_check(&fus, &["fusion.theta", "fusion.phi", "fusion.av"], &maps(), 8, 1e-6, &|p, v| {
            let fv = FeatureMaps::new(v[0], MapTag::Video);
            let fa = FeatureMaps::new(v[1], MapTag::Audio);
            let om = attention_weights(p, &fv, &fa).unwrap();
            fuse_audio_video(p, &fv, &fa, &om).unwrap().var()
        }),
    );
    let tri = store_with(&cfg, &[emotion_branch::init_params, fusion::init_params]);
    let s = EmotionState::from_index(6).unwrap();
    run(
        "tri-modal fusion",
        fd_check(
            &tri,
            &["emotion.att", "fusion.tri"],
            &[rand_t(&[c, h, w], 1.0, 12), rand_t(&[cfg.au_dim], 2.0, 13)],
            8,
            1e-6,
            &|p, v| {
                let fva = FeatureMaps::new(v[0], MapTag::AudioVideo);
                let cw = channel_attention(p, &cfg, v[1]);
                fuse_trimodal(p, &fva, cw, onehot(v[0].tape(), s)).unwrap().var()
            },
        ),
    );
    let mut vid = store_with(&cfg, &[video_branch::init_params]);
    // non-zero offsets so the bilinear sampling path is exercised
    let ow = vid.get("video.offset.weight").unwrap().shape().to_vec();
    *vid.get_mut("video.offset.weight").unwrap() = rand_t(&ow, 0.05, 14);
    *vid.get_mut("video.offset.bias").unwrap() = rand_t(&[ow[0]], 0.5, 15);
    run(
        "deformable alignment",
        fd_check(&vid, &["video.offset", "video.align"], &maps(), 8, 1e-7, &|p, v| {
            video_branch::align_features(p, v[0], v[1], false)
        }),
    );
    let aud = store_with(&cfg, &[audio_branch::init_params]);
    let rows: Vec<Tensor> = (0..cfg.window_len).map(|i| rand_t(&[cfg.mfcc_dim], 1.0, 20 + i as u64)).collect();
    run(
        "audio LSTM",
        fd_check(&aud, &["audio.lstm"], &rows, 6, 1e-6, &|p, v| audio_branch::encode_audio(p, &cfg, v).unwrap()),
    );
    run(
        "audio lift",
        fd_check(&aud, &["audio.fc", "audio.up"], &[rand_t(&[2 * cfg.lstm_hidden], 1.0, 25)], 8, 1e-7, &|p, v| {
            audio_branch::lift_to_maps(p, &cfg, v[0]).unwrap().var()
        }),
    );
    let rcfg = ModelConfig { recon_blocks: 2, ..cfg.clone() };
    let rec = store_with(&rcfg, &[reconstruction::init_params]);
    let lq = rand_t(&[3, h, w], 0.5, 30).map(|x| x + 0.5);
    run(
        "2-block reconstruction",
        fd_check(&rec, &["recon."], &[rand_t(&[c, h, w], 1.0, 31)], 8, 1e-7, &|p, v| {
            let f = FeatureMaps::new(v[0], MapTag::AudioVideoEmotion);
            reconstruction::reconstruct_unclamped(p, &rcfg, &f, v[0].tape().constant(lq.clone())).unwrap()
        }),
    );
    let elapsed = start.elapsed();
    let detail = format!("max rel err {worst:.2e} < {TOL:.0e}; {}; {:.1}s", lines.join(", "), elapsed.as_secs_f64());
    require!(worst < TOL, "{detail}");
    require!(elapsed < Duration::from_secs(120), "{detail} (over 2 min)");
    Ok(detail)
}

fn fusion_invariants() -> Outcome {
    const TOL: f64 = 1e-10;
    let cfg = ModelConfig::miniature(1);
    let (c, h, w) = (cfg.channels, cfg.lq_height, cfg.lq_width);
    let store = store_with(&cfg, &[fusion::init_params]);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let fv_t = rand_t(&[c, h, w], 1.0, 1);
    let fa_t = rand_t(&[c, h, w], 1.0, 2);
    let fv = FeatureMaps::new(tape.constant(fv_t.clone()), MapTag::Video);
    let fa = FeatureMaps::new(tape.constant(fa_t.clone()), MapTag::Audio);
    let om = attention_weights(&p, &fv, &fa).map_err(|e| e.to_string())?;
    let omv = om.var().value();
    require!(omv.data().iter().all(|&x| x > 0.0 && x < 1.0), "ω outside (0,1)");
    let e_om = omv.max_abs_diff(&ref_attention(&store, &fv_t, &fa_t));
    let fva = fuse_audio_video(&p, &fv, &fa, &om).unwrap();
    let e_av = fva.var().value().max_abs_diff(&ref_fuse_av(&store, &fv_t, &fa_t, &omv));
    let cw: Vec<f64> = rand_t(&[c], 0.5, 3).data().iter().map(|x| x + 0.5).collect();
    let s = EmotionState::from_index(9).unwrap();
    let fvae = fuse_trimodal(&p, &fva, tape.constant(Tensor::new(vec![c], cw.clone())), onehot(&tape, s)).unwrap();
    let e_tri = fvae.var().value().max_abs_diff(&ref_fuse_tri(&store, &fva.var().value(), &cw, &s.onehot()));

    // saturating logits stay strictly inside the interval
    let big = FeatureMaps::new(tape.constant(fv_t.map(|x| x * 1e4)), MapTag::Video);
    let bigw = attention_weights(&p, &big, &fa).map_err(|e| format!("large inputs: {e}"))?;
    require!(bigw.var().value().data().iter().all(|&x| x > 0.0 && x < 1.0), "saturated ω left (0,1)");

    // zero inner product everywhere: φ ≡ 0
    let mut zs = store.clone();
    zs.get_mut("fusion.phi.weight").unwrap().scale_assign(0.0);
    zs.get_mut("fusion.phi.bias").unwrap().scale_assign(0.0);
    let zp = zs.bind(&tape, false);
    let half = attention_weights(&zp, &fv, &fa).unwrap();
    require!(half.var().value().data().iter().all(|&x| x == 0.5), "ω ≠ 0.5 at zero inner product");

    let worst = e_om.max(e_av).max(e_tri);
    let detail = format!("ω err {e_om:.1e}, f_VA err {e_av:.1e}, f_VAE err {e_tri:.1e} (≤ {TOL:.0e}); ω=0.5 exact at zero product");
    require!(worst <= TOL, "{detail}");
    let _ = AttentionMap::probe;
    Ok(detail)
}

fn loss_identities() -> Outcome {
    let tc = TrainConfig::default();
    require!(tc.lambda1 == 0.01 && tc.lambda2 == 0.001, "default weights {} {}", tc.lambda1, tc.lambda2);
    let tape = Tape::new();
    let restored = tape.param(rand_t(&[3, 8, 8], 0.5, 1).map(|x| x + 0.5));
    let gt = Rc::new(rand_t(&[3, 8, 8], 0.5, 2).map(|x| x + 0.5));
    let au = tape.param(rand_t(&[17], 2.0, 3));
    let au_gt: Vec<f64> = rand_t(&[17], 2.0, 4).data().to_vec();
    let p = tape.constant(Tensor::new(vec![1], vec![0.3]));
    let obj = total_loss(restored, gt, Some(p), au, &au_gt, tc.lambda1, tc.lambda2);
    let b = obj.breakdown;
    let expect = b.l1 + 0.01 * b.l_adv + 0.001 * b.l_e;
    let e_total = (b.total - expect).abs().max((obj.total.value().item() - expect).abs());
    require!(e_total <= 1e-12, "total off by {e_total:e}");
    let ln2 = generator_adv_loss(tape.constant(Tensor::new(vec![1], vec![0.5]))).value().item();
    let e_ln2 = (ln2 - std::f64::consts::LN_2).abs();
    require!(e_ln2 <= 1e-12, "−log 0.5 = {ln2}");
    let exact = au_loss(tape.constant(Tensor::new(vec![17], au_gt.clone())), &au_gt).value().item();
    require!(exact == 0.0, "L_E = {exact} on matching AUs");
    for i in 0..17 {
        let mut off = au_gt.clone();
        off[i] += 1e-6;
        let v = au_loss(tape.constant(Tensor::new(vec![17], off)), &au_gt).value().item();
        require!(v > 0.0, "L_E = 0 with AU {i} perturbed");
    }
    let _ = LossBreakdown::default();
    Ok(format!("total err {e_total:.1e} (≤ 1e-12); −log(0.5) err {e_ln2:.1e}; L_E = 0 iff AUs match"))
}

fn warmup_schedule() -> Outcome {
    let data = mini_windows(5, 2, 3);
    let mut st = TrainState::new(TrainConfig { warmup_epochs: 2, ..mini_train_config() }).unwrap();
    let d0 = st.model.discriminator.clone();
    let mut steps = 0;
    for epoch in 0..2 {
        let reports = train_epoch(&mut st, &data, |_| Ok(())).map_err(|e| e.to_string())?;
        for r in &reports {
            require!(!r.adv_enabled && r.loss.l_adv == 0.0 && r.d_loss.is_none(), "epoch {epoch}: adversarial term active");
        }
        steps += reports.len();
        require!(st.model.discriminator == d0, "discriminator changed during epoch {epoch}");
    }
    let r = train_epoch(&mut st, &data, |_| Ok(())).map_err(|e| e.to_string())?;
    require!(r.iter().all(|r| r.adv_enabled && r.loss.l_adv > 0.0), "epoch 2 did not enable the adversarial term");
    require!(st.model.discriminator != d0, "discriminator frozen after warmup");
    Ok(format!("{steps} warmup steps: D bit-unchanged, l_adv = 0; epoch 2 adversarial"))
}

fn shape_topology() -> Outcome {
    let cfg = ModelConfig::full(2);
    let clip = degrade_clip(&synth_clip(0, 5, 288, 480, 1), 32, 4, &Codec::Passthrough).unwrap();
    let w = windows(&clip, 2).nth(2).unwrap();
    let model = Mmsd::init(cfg, 0).unwrap();
    let r = restore_window(&model, &w, true).map_err(|e| e.to_string())?;
    let lq = w.lq_center().shape().to_vec();
    require!(r.frame.shape() == [3, 288, 480], "restored frame {:?}", r.frame.shape());
    require!(r.frame.shape()[1] == 4 * lq[1] && r.frame.shape()[2] == 4 * lq[2], "not ×4 of {lq:?}");
    let im = r.intermediates.unwrap();
    for (n, t) in [("f_V", &im.fv), ("f_A", &im.fa), ("f_VA", &im.fva), ("f_VAE", &im.fvae)] {
        require!(t.shape() == [64, 72, 120], "{n} {:?}", t.shape());
    }
    require!(im.omega.shape() == [72, 120], "ω {:?}", im.omega.shape());
    require!(im.omega_va.shape() == [64], "ω_VA {:?}", im.omega_va.shape());
    Ok(format!("{lq:?} → [3, 288, 480]; f_V, f_A, f_VA, f_VAE all [64, 72, 120]"))
}

struct Overfit {
    l1_initial: f64,
    l1_final: f64,
    psnr_model: f64,
    psnr_bicubic: f64,
    elapsed: Duration,
}

fn overfit(lr: f64) -> Overfit {
    let start = Instant::now();
    let clip = degrade_clip(&synth_clip(0, 3, 96, 160, 7), 32, 4, &Codec::Passthrough).unwrap();
    let sample = windows(&clip, 1).nth(1).unwrap();
    let cfg = TrainConfig { lr, warmup_epochs: 10, epochs: 10, ..TrainConfig::miniature() };
    let mut st = TrainState::new(cfg).unwrap();
    let l1 = |img: &Tensor| img.data().iter().zip(sample.hq_center.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / img.len() as f64;
    let l1_initial = l1(&restore_window(&st.model, &sample, false).unwrap().frame);
    for _ in 0..200 {
        train_step(&mut st, std::slice::from_ref(&sample), 0).unwrap();
    }
    let out = restore_window(&st.model, &sample, false).unwrap().frame;
    let bic = bicubic_upscale(sample.lq_center(), 4).map(|v| v.clamp(0.0, 1.0));
    Overfit {
        l1_initial,
        l1_final: l1(&out),
        psnr_model: psnr(&out, &sample.hq_center, &sample.face_box, MetricChannel::Luma).unwrap(),
        psnr_bicubic: psnr(&bic, &sample.hq_center, &sample.face_box, MetricChannel::Luma).unwrap(),
        elapsed: start.elapsed(),
    }
}

fn describe(o: &Overfit) -> String {
    format!(
        "L1 {:.4} → {:.4} (−{:.0}%), face PSNR {:.3} vs bicubic {:.3} dB, {:.1}s",
        o.l1_initial,
        o.l1_final,
        100.0 * (1.0 - o.l1_final / o.l1_initial),
        o.psnr_model,
        o.psnr_bicubic,
        o.elapsed.as_secs_f64()
    )
}

fn overfit_smoke() -> Outcome {
    let o = overfit(1e-3);
    let d = format!("lr 1e-3: {}", describe(&o));
    require!(o.l1_final <= 0.5 * o.l1_initial, "{d}");
    require!(o.psnr_model > o.psnr_bicubic, "{d}");
    require!(o.elapsed < Duration::from_secs(300), "{d} (over 5 min)");
    Ok(d)
}

fn metric_oracles() -> Outcome {
    let mut worst = 0.0f64;
    for (i, &n) in [8usize, 16].iter().enumerate() {
        for k in 0..4 {
            let seed = (i * 10 + k) as u64;
            let a = rand_t(&[3, n, n], 0.5, seed).map(|x| x + 0.5);
            let b = rand_t(&[3, n, n], 0.5, seed + 100).map(|x| x + 0.5);
            let m = FaceBox::full(n as u32, n as u32);
            worst = worst.max((psnr(&a, &b, &m, MetricChannel::Luma).unwrap() - ref_psnr(&a, &b, &m)).abs());
            if n >= 11 {
                worst = worst.max((ssim(&a, &b, &m, MetricChannel::Luma).unwrap() - ref_ssim(&a, &b, &m)).abs());
                let sub = FaceBox { x: 2, y: 1, w: 12, h: 13 };
                worst = worst.max((ssim(&a, &b, &sub, MetricChannel::Luma).unwrap() - ref_ssim(&a, &b, &sub)).abs());
                let same = ssim(&a, &a, &m, MetricChannel::Luma).unwrap();
                require!(same == 1.0, "ssim(x, x) = {same}");
            }
        }
    }
    require!(worst <= 1e-9, "max deviation from scalar references {worst:e}");
    let a = Tensor::full(vec![3, 16, 16], 0.25);
    let b = Tensor::full(vec![3, 16, 16], 0.75);
    let p = psnr(&a, &b, &FaceBox::full(16, 16), MetricChannel::Luma).unwrap();
    let analytic = 20.0 * 2f64.log10();
    require!((p - analytic).abs() < 1e-9, "uniform 0.5 difference gives {p} dB");
    Ok(format!("max deviation {worst:.1e} (≤ 1e-9); ssim(x,x) = 1; 0.5 offset → {p:.4} dB"))
}

fn zero_weight_identity() -> Outcome {
    let data = mini_windows(2, 1, 3);
    let mut model = Mmsd::init(ModelConfig::miniature(1), 4).unwrap();
    model.generator.iter_mut().for_each(|(_, t)| t.scale_assign(0.0));
    for w in &data {
        let out = restore_window(&model, w, false).map_err(|e| e.to_string())?.frame;
        let bic = bicubic_upscale(w.lq_center(), 4).map(|v| v.clamp(0.0, 1.0));
        require!(out == bic, "window {}: max diff {:e}", w.t, out.max_abs_diff(&bic));
    }
    Ok(format!("{} windows bit-identical to clamped bicubic", data.len()))
}

fn determinism() -> Outcome {
    let data = mini_windows(3, 2, 3);
    let cfg = TrainConfig { warmup_epochs: 1, ..mini_train_config() };
    let run = |epochs: u32| {
        let mut st = TrainState::new(cfg.clone()).unwrap();
        for _ in 0..epochs {
            train_epoch(&mut st, &data, |_| Ok(())).unwrap();
        }
        st
    };
    let a = run(2);
    let b = run(2);
    require!(a == b, "two seeded runs diverged");
    let r1 = restore_window(&a.model, &data[1], false).unwrap();
    let r2 = restore_window(&b.model, &data[1], false).unwrap();
    require!(r1 == r2, "restorations differ");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("epoch1.ckpt");
    let half = run(1);
    save_checkpoint(&half, &path).map_err(|e| e.to_string())?;
    let mut resumed = load_checkpoint(&path).map_err(|e| e.to_string())?;
    require!(resumed == half, "checkpoint round trip changed the state");
    train_epoch(&mut resumed, &data, |_| Ok(())).map_err(|e| e.to_string())?;
    require!(resumed == a, "resumed training differs from uninterrupted training");
    require!(encode(&resumed) == encode(&a), "checkpoint bytes differ");
    Ok(format!("2 epochs × {} steps reproduced bit-exactly; resume after epoch 1 matches", a.step / 2))
}

fn emotion_encoding() -> Outcome {
    let states: Vec<EmotionState> = EmotionState::all().collect();
    require!(states.len() == EMOTION_STATES && EMOTION_STATES == 15, "{} states", states.len());
    let names = all_state_names();
    for (i, s) in states.iter().enumerate() {
        require!(s.index() == i && EmotionState::from_index(i).unwrap() == *s, "index {i}");
        let hot = s.onehot();
        require!(hot.iter().sum::<f64>() == 1.0 && hot[i] == 1.0, "one-hot of {i}");
        require!(EmotionState::from_name(&names[i]).unwrap() == *s, "name {}", names[i]);
        let (t, intensity) = s.decode();
        let back = encode_emotion(t, intensity.map_or("normal", |x| x.as_str())).unwrap();
        require!(back == *s, "decode/encode of {i}");
    }
    let mut uniq = names.clone();
    uniq.sort();
    uniq.dedup();
    require!(uniq.len() == 15, "names not unique");
    require!(encode_emotion("neutral", "strong").is_err(), "neutral-strong accepted");
    require!(EmotionState::from_name("neutral-strong").is_err(), "neutral-strong name accepted");
    require!(EmotionState::from_index(15).is_err(), "index 15 accepted");
    Ok("15 states round-trip through index, name and (type, intensity); neutral-strong rejected".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("fusion invariants", fusion_invariants),
        ("loss identities", loss_identities),
        ("warmup schedule", warmup_schedule),
        ("shape/topology", shape_topology),
        ("overfit smoke test", overfit_smoke),
        ("metric oracles", metric_oracles),
        ("zero-weight restoration", zero_weight_identity),
        ("determinism", determinism),
        ("emotion encoding", emotion_encoding),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    let slow = overfit(1e-4);
    println!("INFO overfit at lr 1e-4 (published rate): {}", describe(&slow));
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

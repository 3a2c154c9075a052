mod common;

use common::*;
use mmsd_autograd::Tensor;
use mmsd_core::config::ModelConfig;
use mmsd_core::dataset::degrade::{degrade_clip, Codec};
use mmsd_core::dataset::fixture::synth_clip;
use mmsd_core::dataset::FaceBox;
use mmsd_core::eval::{evaluate, ClipScore, BICUBIC, MMSD};
use mmsd_core::metrics::{bicubic_upscale, psnr, ssim, MetricChannel};
use mmsd_core::network::Mmsd;
use serde::Deserialize;

#[derive(Deserialize)]
struct Checkerboard {
    scale: usize,
    input: Vec<Vec<Vec<f64>>>,
    output: Vec<Vec<Vec<f64>>>,
}

fn planes(p: &[Vec<Vec<f64>>]) -> Tensor {
    let (c, h, w) = (p.len(), p[0].len(), p[0][0].len());
    Tensor::new(vec![c, h, w], p.iter().flatten().flatten().copied().collect())
}

#[test]
fn checkerboard_matches_stored_reference() {
    let f: Checkerboard = serde_json::from_str(include_str!("data/bicubic_checkerboard.json")).unwrap();
    let got = bicubic_upscale(&planes(&f.input), f.scale);
    let want = planes(&f.output);
    assert!(got.max_abs_diff(&want) < 1e-12, "deviation {:e}", got.max_abs_diff(&want));
}

#[test]
fn bilinear_ramp_is_reproduced_away_from_borders() {
    let (h, w, s) = (10, 12, 4);
    let f = |y: f64, x: f64| 0.1 + 0.03 * x + 0.05 * y + 0.004 * x * y;
    let img = Tensor::from_fn(vec![1, h, w], |i| f((i / w) as f64, (i % w) as f64));
    let up = bicubic_upscale(&img, s);
    for oy in 2 * s..(h - 2) * s {
        for ox in 2 * s..(w - 2) * s {
            let (sy, sx) = ((oy as f64 + 0.5) / s as f64 - 0.5, (ox as f64 + 0.5) / s as f64 - 0.5);
            assert!((up.data()[oy * w * s + ox] - f(sy, sx)).abs() < 1e-6);
        }
    }
}

#[test]
fn inverted_binary_pattern_has_negative_ssim() {
    let x = Tensor::from_fn(vec![3, 16, 16], |i| if ((i % 256) / 16 / 2 + (i % 16) / 2) % 2 == 0 { 0.9 } else { 0.1 });
    let inv = x.map(|v| 1.0 - v);
    let m = FaceBox::full(16, 16);
    let got = ssim(&x, &inv, &m, MetricChannel::Luma).unwrap();
    let reference = ref_ssim(&x, &inv, &m);
    assert!(got < 0.0, "{got}");
    assert!((got - reference).abs() < 1e-9);
    assert_eq!(psnr(&x, &x, &m, MetricChannel::Luma).unwrap(), f64::INFINITY);
}

#[test]
fn report_accounts_for_every_frame() {
    let model = Mmsd::init(ModelConfig::miniature(1), 1).unwrap();
    let mut clips = Vec::new();
    for crf in [15, 32, 40] {
        for i in 0..2 {
            clips.push(degrade_clip(&synth_clip(i, 2 + i, 96, 160, 6), crf, 4, &Codec::Passthrough).unwrap());
        }
    }
    let r = evaluate(Some(&model), &clips, MetricChannel::Luma, true).unwrap();
    for crf in [15, 32, 40] {
        for method in [BICUBIC, MMSD] {
            let a = r.aggregate(method, crf).unwrap();
            assert_eq!(a.frames, 5);
            assert_eq!(a.clips, 2);
            assert!((-1.0..=1.0).contains(&a.ssim));
        }
    }
    let table = r.table();
    let header = table.lines().next().unwrap();
    assert!(header.contains("CRF=15") && header.contains("CRF=32") && header.contains("CRF=40"));
    assert!(table.lines().any(|l| l.starts_with(BICUBIC)) && table.lines().any(|l| l.starts_with(MMSD)));
    let records: Vec<ClipScore> = r.jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 12);
    assert_eq!(records.iter().map(|c| c.frames).sum::<usize>(), 30);

    let without = evaluate(None, &clips, MetricChannel::Luma, false).unwrap();
    assert!(without.aggregate(MMSD, 32).is_none());
    assert_eq!(without.aggregate(BICUBIC, 32), r.aggregate(BICUBIC, 32));
}

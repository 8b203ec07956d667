//! Acceptance gate. Each criterion prints one `criterion N ... PASS|FAIL` line
//! and then asserts. Criteria run one at a time so runtime limits are
//! measured without contention.

use std::io::Write as _;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rwta::data::{
    decode_videos, encode_idx, encode_videos, images_from_idx, load_idx, load_videos,
    rotated_videos, save_videos, scanned_videos, DigitSynth, ImageDataset, VideoDataset,
    ZcaEpsilon, ZcaTransform,
};
use rwta::engine::{
    conv2d, grad_check_piecewise, GradCheckConfig, Padding, SeededRng, Shape4, Tensor4,
};
use rwta::eval::{
    extract_dataset_features, raw_frame_features, report, temporal_coherence, CodeSource,
    FeatureMode, LinearClassifier, SvmConfig,
};
use rwta::model::{wta, wta_backward, ModelConfig, TwoStreamNet, WtaRule};
use rwta::par::Execution;
use rwta::train::{
    finetune_supervised, train_unsupervised, with_head, AdamConfig, Checkpoint, MetricsLog,
    TrainConfig, TrainRun,
};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to stderr so the line survives test output capture.
fn verdict(n: u32, name: &str, ok: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "criterion {n} ({name}): {} [{:.1}s] {detail}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

const EXEC: Execution = Execution::Parallel;

fn rotated_digits(count: usize, seed: u64) -> VideoDataset<f32> {
    let (imgs, labels) = DigitSynth::default().dataset::<f32>(count, seed);
    let ids = ImageDataset::new(imgs, labels, 10).unwrap();
    rotated_videos(&ids, 5, 18.0, EXEC).unwrap()
}

fn digit_model() -> ModelConfig {
    ModelConfig {
        channels: 16,
        enc_kernel: 3,
        dec_kernel: 11,
        input_channels: 1,
    }
}

const TRAIN_SEED: u64 = 7;

fn unsupervised_config(updates: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        batch_size: 100,
        frames: 5,
        seed: TRAIN_SEED,
        max_updates: Some(updates),
        deterministic: true,
        adam: AdamConfig::with_lr(1e-3),
        ..TrainConfig::default()
    }
}

fn pretrain(ds: &VideoDataset<f32>, model: ModelConfig, init_seed: u64, cfg: &TrainConfig) -> TrainRun<f32> {
    let net = TwoStreamNet::glorot(model, &mut SeededRng::new(init_seed)).unwrap();
    let start = Checkpoint::fresh(net, None, cfg.adam, cfg.seed);
    train_unsupervised(start, ds, cfg).unwrap_or_else(|e| panic!("training failed: {e}"))
}

struct DigitRun {
    ds: VideoDataset<f32>,
    run: TrainRun<f32>,
    elapsed: Duration,
}

/// The criterion-4 training run, shared with criteria 7 and 8.
fn digit_run() -> &'static DigitRun {
    static RUN: OnceLock<DigitRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let ds = rotated_digits(500, 1);
        let run = pretrain(&ds, digit_model(), TRAIN_SEED, &unsupervised_config(300));
        DigitRun {
            ds,
            run,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn criterion_1_gradient_correctness() {
    let _g = gate();
    let t = Instant::now();
    let cfg = ModelConfig {
        channels: 8,
        enc_kernel: 3,
        dec_kernel: 5,
        input_channels: 1,
    };
    let mut worst = 0.0f64;
    let (mut coords, mut skipped) = (0, 0);
    for seed in 0..3u64 {
        let mut rng = SeededRng::new(100 + seed);
        let mut net = TwoStreamNet::<f64>::glorot(cfg, &mut rng).unwrap();
        for p in net.params_mut() {
            if p.shape().h() == 1 {
                p.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.1, 0.1));
            }
        }
        let frames: Vec<_> = (0..3)
            .map(|_| Tensor4::from_fn(Shape4::new(2, 1, 8, 8), |_| rng.uniform(-1.0, 1.0)))
            .collect();
        let lv = net.loss_and_grads(&frames, WtaRule::Mask).unwrap();
        let mut params: Vec<_> = net.params().iter().map(|p| (*p).clone()).collect();
        let report = grad_check_piecewise(
            |p| TwoStreamNet::from_params(cfg, p.to_vec())?.loss_with_pattern(&frames, WtaRule::Mask),
            &mut params,
            &lv.grads,
            GradCheckConfig {
                eps: 1e-5,
                samples_per_tensor: 20,
                seed,
            },
        )
        .unwrap();
        assert_eq!(report.per_tensor.len(), 9);
        worst = worst.max(report.max_rel_error);
        coords += report.coordinates;
        skipped += report.skipped;
    }
    let elapsed = t.elapsed();
    let ok = worst < 1e-4 && elapsed < Duration::from_secs(120);
    verdict(1, "gradient correctness", ok, elapsed, &format!("max_rel_error={worst:.3e} coordinates={coords} kink_skipped={skipped}"));
    assert!(ok);
}

/// Direct evaluation of the multi-channel true-convolution sum.
fn naive_conv(x: &Tensor4<f64>, k: &Tensor4<f64>, b: &[f64], pad: usize) -> Tensor4<f64> {
    let [n, cin, h, w] = x.dims();
    let [cout, _, kh, kw] = k.dims();
    let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
    Tensor4::from_fn(Shape4::new(n, cout, oh, ow), |[s, f, i, j]| {
        let mut acc = b[f];
        for a in 0..cin {
            for u in 0..kh {
                for v in 0..kw {
                    let r = (i + kh - 1 - u) as isize - pad as isize;
                    let c = (j + kw - 1 - v) as isize - pad as isize;
                    if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                        acc += k.get([f, a, u, v]) * x.get([s, a, r as usize, c as usize]);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn criterion_2_convolution_oracle() {
    let _g = gate();
    let t = Instant::now();
    let mut rng = SeededRng::new(2);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let k = [1, 3, 5][rng.index(3)];
        let (h, w) = (k + rng.index(7), k + rng.index(7));
        let (n, cin, cout) = (1 + rng.index(2), 1 + rng.index(3), 1 + rng.index(6));
        let density = [1.0, 0.3, 0.05][trial % 3];
        let x = Tensor4::from_fn(Shape4::new(n, cin, h, w), |_| {
            let v = rng.uniform(-1.0, 1.0);
            if rng.uniform(0.0, 1.0) < density { v } else { 0.0 }
        });
        let kern = Tensor4::from_fn(Shape4::new(cout, cin, k, k), |_| rng.uniform(-1.0, 1.0));
        let bias: Vec<f64> = (0..cout).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (padding, pad) = if trial % 2 == 0 { (Padding::Same, (k - 1) / 2) } else { (Padding::Valid, 0) };
        let got = conv2d(&x, &kern, Some(&bias), padding).unwrap();
        let want = naive_conv(&x, &kern, &bias, pad);
        assert_eq!(got.dims(), want.dims());
        worst = worst.max(got.max_abs_diff(&want).unwrap());
    }
    let elapsed = t.elapsed();
    let ok = worst <= 1e-10 && elapsed < Duration::from_secs(60);
    verdict(2, "convolution oracle", ok, elapsed, &format!("max_abs_diff={worst:.3e} configs=100"));
    assert!(ok);
}

#[test]
fn criterion_3_wta_invariants() {
    let _g = gate();
    let t = Instant::now();
    let mut rng = SeededRng::new(3);
    let mut violations = 0;
    for _ in 0..1000 {
        let shape = Shape4::new(1 + rng.index(3), 1 + rng.index(4), 1 + rng.index(8), 1 + rng.index(8));
        let map = Tensor4::from_fn(shape, |_| rng.uniform(-1.0, 1.0));
        let upstream = Tensor4::from_fn(shape, |_| rng.uniform(-1.0, 1.0));
        let (sparse, mask) = wta(&map);
        let grad = wta_backward(&mask, &upstream).unwrap();
        let plane = shape.plane();
        for p in 0..shape.n() * shape.c() {
            let src = &map.data()[p * plane..(p + 1) * plane];
            let out = &sparse.data()[p * plane..(p + 1) * plane];
            let m = &mask.data()[p * plane..(p + 1) * plane];
            let g = &grad.data()[p * plane..(p + 1) * plane];
            let up = &upstream.data()[p * plane..(p + 1) * plane];
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<usize> = (0..plane).filter(|&i| m[i] != 0.0).collect();
            let nonzero = out.iter().filter(|v| **v != 0.0).count();
            let kept_ok = winners.len() == 1 && out[winners[0]] == max && src[winners[0]] == max;
            let routed_ok = (0..plane).all(|i| if m[i] != 0.0 { g[i] == up[i] } else { g[i] == 0.0 });
            if nonzero > 1 || !kept_ok || !routed_ok {
                violations += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    let ok = violations == 0 && elapsed < Duration::from_secs(10);
    verdict(3, "wta invariants", ok, elapsed, &format!("maps=1000 violations={violations}"));
    assert!(ok);
}

#[test]
fn criterion_4_training_convergence() {
    let _g = gate();
    let r = digit_run();
    let head = r.run.log.head_mean(20).unwrap();
    let tail = r.run.log.tail_mean(20).unwrap();
    let finite = r.run.log.rows.iter().all(|row| row.loss_total.is_finite());
    let ok = r.run.log.rows.len() == 300
        && finite
        && tail <= 0.5 * head
        && r.elapsed < Duration::from_secs(15 * 60);
    verdict(
        4,
        "training convergence",
        ok,
        r.elapsed,
        &format!("initial20={head:.5} final20={tail:.5} ratio={:.3} videos={}", tail / head, r.ds.len()),
    );
    assert!(ok);
}

#[test]
fn criterion_5_classification_benefit() {
    let _g = gate();
    let t = Instant::now();
    let train = rotated_digits(2000, 1);
    let test = rotated_digits(1000, 2);
    let run = pretrain(&train, digit_model(), TRAIN_SEED, &unsupervised_config(300));
    let net = &run.checkpoint.net;
    let svm = SvmConfig::default();
    let feats = |ds| extract_dataset_features(net, ds, 5, FeatureMode::SumCollapse, CodeSource::Sparse, EXEC).unwrap();
    let (ftr, fte) = (feats(&train), feats(&test));
    let rwta = LinearClassifier::fit(&ftr, train.labels(), 10, &svm).unwrap();
    let rwta_acc = report(&rwta.predict_all(&fte).unwrap(), test.labels(), 10).unwrap().accuracy;
    let (rtr, rte) = (raw_frame_features(&train, 4).unwrap(), raw_frame_features(&test, 4).unwrap());
    let raw = LinearClassifier::fit(&rtr, train.labels(), 10, &svm).unwrap();
    let raw_acc = report(&raw.predict_all(&rte).unwrap(), test.labels(), 10).unwrap().accuracy;
    let elapsed = t.elapsed();
    let gain = rwta_acc - raw_acc;
    let ok = gain >= 0.02 && elapsed < Duration::from_secs(30 * 60);
    verdict(
        5,
        "classification benefit",
        ok,
        elapsed,
        &format!("rwta_sum_collapse={rwta_acc:.4} raw_last_frame={raw_acc:.4} gain_pp={:.2}", 100.0 * gain),
    );
    assert!(ok);
}

#[test]
fn criterion_6_pretraining_benefit() {
    let _g = gate();
    let t = Instant::now();
    let synth = DigitSynth {
        size: 32,
        glyph_box: 24.0,
    };
    let (imgs, labels) = synth.dataset::<f32>(5000, 11);
    let all = scanned_videos(&ImageDataset::new(imgs, labels, 10).unwrap(), 16, 8, EXEC).unwrap();
    let mut train = all.subset(&(0..4000).collect::<Vec<_>>());
    let mut val = all.subset(&(4000..5000).collect::<Vec<_>>());
    let zca = ZcaTransform::fit(&train.all_frames(), ZcaEpsilon::default()).unwrap();
    zca.apply_videos(&mut train).unwrap();
    zca.apply_videos(&mut val).unwrap();

    let model = ModelConfig {
        channels: 16,
        enc_kernel: 3,
        dec_kernel: 7,
        input_channels: 1,
    };
    let (mut pre_sum, mut scratch_sum) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let pcfg = TrainConfig {
            seed,
            ..unsupervised_config(300)
        };
        let pre = pretrain(&train, model, 100 + seed, &pcfg).checkpoint.net;
        let scratch = TwoStreamNet::glorot(model, &mut SeededRng::new(100 + seed)).unwrap();
        let fcfg = TrainConfig {
            epochs: 2,
            batch_size: 50,
            frames: 9,
            seed,
            deterministic: true,
            adam: AdamConfig::with_lr(1e-3),
            ..TrainConfig::default()
        };
        let accs: Vec<f64> = [pre, scratch]
            .into_iter()
            .map(|net| {
                let start = with_head(net, 10, fcfg.adam, seed).unwrap();
                let run = finetune_supervised(start, &train, Some(&val), &fcfg)
                    .unwrap_or_else(|e| panic!("fine-tuning failed: {e}"));
                run.log.final_val_accuracy().unwrap()
            })
            .collect();
        pre_sum += accs[0];
        scratch_sum += accs[1];
        per_seed.push(format!("{:.3}/{:.3}", accs[0], accs[1]));
    }
    let (pre, scratch) = (pre_sum / 3.0, scratch_sum / 3.0);
    let elapsed = t.elapsed();
    let ok = pre >= scratch && elapsed < Duration::from_secs(60 * 60);
    verdict(
        6,
        "pretraining benefit",
        ok,
        elapsed,
        &format!("pretrained={pre:.4} scratch={scratch:.4} per_seed={}", per_seed.join(",")),
    );
    assert!(ok);
}

#[test]
fn criterion_7_temporal_coherence() {
    let _g = gate();
    let r = digit_run();
    let t = Instant::now();
    let net = &r.run.checkpoint.net;
    let c = temporal_coherence(net, &r.ds, 5, CodeSource::Sparse, 3, EXEC).unwrap();
    let elapsed = t.elapsed();
    // Reference only: the same distances on the dense states behind the codes.
    let dense = temporal_coherence(net, &r.ds, 5, CodeSource::Dense, 3, EXEC).unwrap();
    let ok = c.ratio < 0.8 && elapsed < Duration::from_secs(120);
    verdict(
        7,
        "temporal coherence",
        ok,
        elapsed,
        &format!(
            "consecutive={:.4} random={:.4} ratio={:.4} (dense-state ratio {:.4})",
            c.consecutive, c.random, c.ratio, dense.ratio
        ),
    );
    assert!(ok, "code distance ratio {:.4} is not below 0.8", c.ratio);
}

#[test]
fn criterion_8_determinism() {
    let _g = gate();
    let first = digit_run();
    let t = Instant::now();
    let again = pretrain(&first.ds, digit_model(), TRAIN_SEED, &unsupervised_config(300));
    let a = MetricsLog::from_csv(&first.run.log.to_csv()).unwrap();
    let b = MetricsLog::from_csv(&again.log.to_csv()).unwrap();
    let mut worst = 0.0f64;
    let same_rows = a.rows.len() == b.rows.len();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.step, x.epoch), (y.step, y.epoch));
        for (p, q) in [
            (x.loss_recon, y.loss_recon),
            (x.loss_pred, y.loss_pred),
            (x.loss_total, y.loss_total),
            (x.wall_ms as f64, y.wall_ms as f64),
        ] {
            worst = worst.max((p - q).abs());
        }
    }
    let bytes_equal =
        first.run.checkpoint.to_bytes().unwrap() == again.checkpoint.to_bytes().unwrap();
    let elapsed = t.elapsed();
    let ok = same_rows && worst <= 1e-12 && bytes_equal;
    verdict(
        8,
        "determinism",
        ok,
        elapsed,
        &format!("rows={} max_csv_diff={worst:.3e} checkpoints_identical={bytes_equal}", a.rows.len()),
    );
    assert!(ok);
}

/// Hand-assembled IDX pair: two 2x3 images with labels 7 and 0.
fn idx_fixture() -> (Vec<u8>, Vec<u8>, [[u8; 6]; 2]) {
    let pixels = [[0u8, 255, 128, 1, 2, 3], [10, 20, 30, 40, 50, 254]];
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    img.extend(pixels.iter().flatten());
    let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 0];
    (img, lab, pixels)
}

#[test]
fn criterion_9_round_trips() {
    let _g = gate();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let ds = rotated_digits(12, 5);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        frames: 3,
        seed: 4,
        deterministic: true,
        ..TrainConfig::default()
    };
    let small = ModelConfig {
        channels: 4,
        enc_kernel: 3,
        dec_kernel: 5,
        input_channels: 1,
    };
    let trained = pretrain(&ds, small, 4, &cfg).checkpoint;
    let with = with_head(trained.net.clone(), 10, cfg.adam, 4).unwrap();
    let mut ck_ok = true;
    for (i, ck) in [trained, with].into_iter().enumerate() {
        let path = dir.path().join(format!("ck{i}.bin"));
        ck.save(&path).unwrap();
        let back = Checkpoint::<f32>::load(&path).unwrap();
        ck_ok &= back == ck && back.to_bytes().unwrap() == std::fs::read(&path).unwrap();
    }

    let path = dir.path().join("videos.bin");
    save_videos(&ds, &path).unwrap();
    let back: VideoDataset<f32> = load_videos(&path).unwrap();
    let wide: VideoDataset<f64> = decode_videos(&encode_videos(&ds).unwrap()).unwrap();
    let videos_ok = back.raw() == ds.raw()
        && back.labels() == ds.labels()
        && back.meta() == ds.meta()
        && back.frame_shape() == ds.frame_shape()
        && wide.raw().iter().zip(ds.raw()).all(|(a, b)| *a == f64::from(*b));

    let (img, lab, pixels) = idx_fixture();
    let parsed = images_from_idx::<f64>(&img, &lab).unwrap();
    let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    std::fs::write(&ip, &img).unwrap();
    std::fs::write(&lp, &lab).unwrap();
    let loaded = load_idx::<f64>(&ip, &lp).unwrap();
    let expected: Vec<f64> = pixels.iter().flatten().map(|&p| p as f64 / 255.0).collect();
    let idx_ok = parsed.images.dims() == [2, 1, 2, 3]
        && parsed.images.data() == expected.as_slice()
        && parsed.labels == vec![7, 0]
        && loaded.images == parsed.images
        && encode_idx(&parsed).unwrap() == (img, lab);

    let elapsed = t.elapsed();
    let ok = ck_ok && videos_ok && idx_ok;
    verdict(
        9,
        "round trips",
        ok,
        elapsed,
        &format!("checkpoint={ck_ok} container={videos_ok} idx={idx_ok}"),
    );
    assert!(ok);
}

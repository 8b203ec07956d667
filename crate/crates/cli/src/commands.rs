use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rwta::data::{
    load_idx, load_videos, rotated_videos, save_videos, scanned_videos, DigitSynth, ImageDataset,
    VideoDataset, ZcaEpsilon, ZcaTransform,
};
use rwta::engine::{grad_check_piecewise, GradCheckConfig, Real, SeededRng, Shape4, Tensor4};
use rwta::eval::{
    extract_dataset_features, report, sliding_window_vote, CodeSource, FeatureMatrix,
    LinearClassifier,
};
use rwta::model::{ModelConfig, TwoStreamNet};
use rwta::train::{
    finetune_supervised, train_unsupervised, with_head, Checkpoint, TrainError,
};

use crate::config::{Mode, RunConfig};
use crate::error::CliError;
use crate::pgm;

pub const CONFIG_FILE: &str = "run.cfg";

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("`{key}` must be set for this command")))
}

/// Creates the output directory and records the resolved configuration there.
pub fn prepare_out(c: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&c.out)?;
    std::fs::write(c.out.join(CONFIG_FILE), c.serialize())?;
    Ok(())
}

fn source_images<T: Real>(c: &RunConfig) -> Result<ImageDataset<T>, CliError> {
    match (&c.images, &c.labels) {
        (Some(i), Some(l)) => Ok(load_idx(i, l)?),
        (None, None) if c.synth_digits > 0 => {
            let synth = DigitSynth {
                size: c.digit_size,
                glyph_box: c.digit_size as f64 * 20.0 / 28.0,
            };
            let (imgs, labels) = synth.dataset::<T>(c.synth_digits, c.seed);
            Ok(ImageDataset::new(imgs, labels, 10)?)
        }
        _ => Err(CliError::Usage(
            "set both `images` and `labels`, or `synth_digits` for procedural digits".into(),
        )),
    }
}

pub fn synth<T: Real>(c: &RunConfig) -> Result<(), CliError> {
    let images = source_images::<T>(c)?;
    let exec = c.train().execution();
    let videos = match c.mode {
        Mode::Rotate => rotated_videos(&images, c.frames, c.step, exec)?,
        Mode::Scan => scanned_videos(&images, c.window, c.stride, exec)?,
        m => return Err(CliError::Usage(format!("synth mode must be rotate or scan, got {}", m.as_str()))),
    };
    if c.holdout >= videos.len() && c.holdout > 0 {
        return Err(CliError::Usage(format!(
            "holdout {} leaves no videos out of {}",
            c.holdout,
            videos.len()
        )));
    }
    let cut = videos.len() - c.holdout;
    let mut main = videos.subset(&(0..cut).collect::<Vec<_>>());
    let mut held = videos.subset(&(cut..videos.len()).collect::<Vec<_>>());
    if c.zca {
        let z = ZcaTransform::fit(&main.all_frames(), ZcaEpsilon::RelativeToMean(c.zca_epsilon))?;
        z.apply_videos(&mut main)?;
        if !held.is_empty() {
            z.apply_videos(&mut held)?;
        }
    }
    save_videos(&main, &c.out.join("videos.rwv"))?;
    if !held.is_empty() {
        save_videos(&held, &c.out.join("holdout.rwv"))?;
    }
    let s = main.frame_shape();
    println!(
        "videos={} holdout={} frames={} size={}x{}x{}",
        main.len(),
        held.len(),
        main.frames(),
        s.c(),
        s.h(),
        s.w()
    );
    Ok(())
}

fn initial<T: Real>(c: &RunConfig) -> Result<Checkpoint<T>, CliError> {
    Ok(match &c.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => {
            let net = TwoStreamNet::glorot(c.model(), &mut SeededRng::new(c.seed))?;
            Checkpoint::fresh(net, None, c.adam(), c.seed)
        }
    })
}

fn diverged<T: Real>(c: &RunConfig, e: TrainError<T>) -> CliError {
    match e {
        TrainError::Diverged {
            step,
            reason,
            last_good,
            log,
        } => {
            let _ = last_good.save(&c.out.join("last_good.bin"));
            let _ = log.write_csv(&c.out.join("metrics.csv"));
            CliError::Core(rwta::Error::Training(format!(
                "diverged at step {step}: {reason}; last good checkpoint saved"
            )))
        }
        TrainError::Failed(e) => e.into(),
    }
}

pub fn train<T: Real>(c: &RunConfig) -> Result<(), CliError> {
    let ds: VideoDataset<T> = load_videos(require(&c.data, "data")?)?;
    let start = initial::<T>(c)?;
    let run = train_unsupervised(start, &ds, &c.train()).map_err(|e| diverged(c, e))?;
    run.checkpoint.save(&c.out.join("checkpoint.bin"))?;
    run.log.write_csv(&c.out.join("metrics.csv"))?;
    let head = run.log.head_mean(20).unwrap_or(f64::NAN);
    let tail = run.log.tail_mean(20).unwrap_or(f64::NAN);
    println!(
        "steps={} first20_loss={head:.6} last20_loss={tail:.6}",
        run.checkpoint.step
    );
    Ok(())
}

pub fn finetune<T: Real>(c: &RunConfig) -> Result<(), CliError> {
    let train: VideoDataset<T> = load_videos(require(&c.data, "data")?)?;
    let val: Option<VideoDataset<T>> = c.val_data.as_deref().map(load_videos).transpose()?;
    let start = match initial::<T>(c)? {
        ck if ck.head.as_ref().is_some_and(|h| h.classes() == c.classes) => ck,
        ck => with_head(ck.net, c.classes, c.adam(), c.seed)?,
    };
    let run = finetune_supervised(start, &train, val.as_ref(), &c.train()).map_err(|e| diverged(c, e))?;
    run.checkpoint.save(&c.out.join("checkpoint.bin"))?;
    run.log.write_csv(&c.out.join("finetune.csv"))?;
    if let Some(last) = run.log.epochs.last() {
        let val = last.val_accuracy.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "epochs={} train_accuracy={:.4} val_accuracy={val}",
            run.log.epochs.len(),
            last.train_accuracy
        );
    }
    Ok(())
}

fn features<T: Real>(
    net: &TwoStreamNet<T>,
    ds: &VideoDataset<T>,
    frames: usize,
    c: &RunConfig,
) -> Result<FeatureMatrix, CliError> {
    if frames > ds.frames() {
        return Err(CliError::Usage(format!(
            "{frames} frames requested but videos have {}",
            ds.frames()
        )));
    }
    Ok(extract_dataset_features(net, ds, frames, c.feature_mode, c.code_source, c.train().execution())?)
}

pub fn eval<T: Real>(c: &RunConfig) -> Result<(), CliError> {
    let ck: Checkpoint<T> = Checkpoint::load(require(&c.checkpoint, "checkpoint")?)?;
    let train: VideoDataset<T> = load_videos(require(&c.data, "data")?)?;
    let test: VideoDataset<T> = load_videos(require(&c.test_data, "test_data")?)?;
    let classes = train.class_count().max(test.class_count());
    let (window, name) = match c.mode {
        Mode::Svm => (c.frames, "svm"),
        Mode::Vote => (c.vote_window, "vote"),
        m => return Err(CliError::Usage(format!("eval mode must be svm or vote, got {}", m.as_str()))),
    };
    let ftr = features(&ck.net, &train, window, c)?;
    ftr.write_csv(train.labels(), &c.out.join("features_train.csv"))?;
    let clf = LinearClassifier::fit(&ftr, train.labels(), classes, &c.svm())?;

    let mut rep = if c.mode == Mode::Svm {
        let fte = features(&ck.net, &test, window, c)?;
        fte.write_csv(test.labels(), &c.out.join("features_test.csv"))?;
        report(&clf.predict_all(&fte)?, test.labels(), classes)?
    } else {
        if c.code_source != CodeSource::Sparse {
            return Err(CliError::Usage("vote mode classifies sparse codes only".into()));
        }
        let votes = (0..test.len())
            .map(|i| sliding_window_vote(&ck.net, &clf, &test.video(i), window, c.feature_mode))
            .collect::<Result<Vec<_>, _>>()?;
        let preds: Vec<usize> = votes.iter().map(|v| v.class).collect();
        let mut rep = report(&preds, test.labels(), classes)?;
        rep.votes = Some(votes.into_iter().map(|v| v.histogram).collect());
        rep
    };
    std::fs::write(c.out.join("confusion.csv"), rep.to_csv())?;
    if let Some(votes) = rep.votes.take() {
        let mut s = String::from("video_id,label,predicted");
        for k in 0..classes {
            let _ = write!(s, ",votes_{k}");
        }
        s.push('\n');
        for (i, h) in votes.iter().enumerate() {
            let pred = h.iter().enumerate().fold(0, |b, (k, &n)| if n > h[b] { k } else { b });
            let _ = write!(s, "{i},{},{pred}", test.labels()[i]);
            for n in h {
                let _ = write!(s, ",{n}");
            }
            s.push('\n');
        }
        std::fs::write(c.out.join("votes.csv"), s)?;
    }
    println!("mode={name} {}", rep.summary_line());
    Ok(())
}

/// Model used by `gradcheck`: 8 channels, 3x3 encoder, 5x5 decoder.
pub fn gradcheck_model() -> ModelConfig {
    ModelConfig {
        channels: 8,
        enc_kernel: 3,
        dec_kernel: 5,
        input_channels: 1,
    }
}

pub fn gradcheck<T: Real>(c: &RunConfig) -> Result<(), CliError> {
    let cfg = gradcheck_model();
    let mut rng = SeededRng::new(c.seed);
    let mut net = TwoStreamNet::<T>::glorot(cfg, &mut rng)?;
    // Nonzero biases so every bias gradient is exercised.
    for p in net.params_mut() {
        if p.shape().h() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = T::lit(rng.uniform(-0.1, 0.1)));
        }
    }
    let frames: Vec<Tensor4<T>> = (0..3)
        .map(|_| Tensor4::from_fn(Shape4::new(2, 1, 8, 8), |_| T::lit(rng.uniform(-1.0, 1.0))))
        .collect();
    let lv = net.loss_and_grads(&frames, c.wta_rule)?;
    let mut params: Vec<_> = net.params().iter().map(|p| (*p).clone()).collect();
    let rep = grad_check_piecewise(
        |p| TwoStreamNet::from_params(cfg, p.to_vec())?.loss_with_pattern(&frames, c.wta_rule),
        &mut params,
        &lv.grads,
        GradCheckConfig {
            eps: c.gradcheck_eps,
            samples_per_tensor: c.gradcheck_samples,
            seed: c.seed,
        },
    )?;
    let mut csv = String::from("tensor,max_rel_error\n");
    for (name, e) in rwta::model::PARAM_NAMES.iter().zip(&rep.per_tensor) {
        let _ = writeln!(csv, "{name},{e:e}");
        println!("{name:<12} {e:.3e}");
    }
    std::fs::write(c.out.join("gradcheck.csv"), csv)?;
    println!(
        "max_rel_error={:.3e} threshold={:e} coordinates={} kink_skipped={} precision={}",
        rep.max_rel_error,
        c.gradcheck_threshold,
        rep.coordinates,
        rep.skipped,
        T::PRECISION.bits()
    );
    if rep.passes(c.gradcheck_threshold) {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {:.3e} is not below {:e}",
            rep.max_rel_error, c.gradcheck_threshold
        )))
    }
}

pub fn dump_filters<T: Real>(c: &RunConfig) -> Result<(), CliError> {
    let ck: Checkpoint<T> = Checkpoint::load(require(&c.checkpoint, "checkpoint")?)?;
    let kernel = &ck.net.dec.kernel;
    let [inputs, hidden, k, _] = kernel.dims();
    let dir = c.out.join("filters");
    std::fs::create_dir_all(&dir)?;
    for i in 0..inputs {
        let mut planes = Vec::with_capacity(hidden);
        for f in 0..hidden {
            let plane: Vec<f64> = (0..k * k)
                .map(|p| kernel.get([i, f, p / k, p % k]).as_f64())
                .collect();
            let name = if inputs == 1 {
                format!("dec_{f:03}.pgm")
            } else {
                format!("dec_{f:03}_c{i}.pgm")
            };
            pgm::write(&dir.join(name), &plane, k, k)?;
            planes.push(pgm::normalise(&plane));
        }
        let per_row = (hidden as f64).sqrt().ceil() as usize;
        let (grid, rows, cols) = pgm::tile(&planes, k, per_row);
        let name = if inputs == 1 {
            "grid.pgm".to_string()
        } else {
            format!("grid_c{i}.pgm")
        };
        std::fs::write(dir.join(name), pgm::encode(&grid, rows, cols))?;
    }
    println!("filters={} size={k}x{k} dir={}", hidden * inputs, dir.display());
    Ok(())
}

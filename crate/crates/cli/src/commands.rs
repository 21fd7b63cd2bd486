use std::fs;
use std::path::Path;
use std::time::Instant;

use riconv_core::bench::{run_bench, write_bench_csv, BenchShape};
use riconv_core::data::{
    checkpoint_hashes, git_blob_hash, load_mnist, synth_fixture, write_epoch_log, write_sidecar, write_sweep_csv,
    DatasetBundle, EpochRecord, Sidecar, Split, SweepResult,
};
use riconv_core::nn::{checkpoint_files, checkpoint_info, Network};
use riconv_core::train::{rotation_sweep, train as fit, TrainConfig};
use riconv_core::verify::{corrupted_sobel, run_checks, VerifyOptions};
use riconv_core::{Error, Precision, Scalar};

use crate::angles::parse_angles;
use crate::manifest::{manifest_beside, RunManifest};
use crate::{BenchArgs, Failure, SweepArgs, TrainArgs, VerifyArgs};

fn to_value<S: serde::Serialize>(v: &S) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize to JSON")
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::Io(e).into()),
        _ => Ok(()),
    }
}

/// Defaults, then the config file, then flags.
fn resolve(a: &TrainArgs) -> Result<(TrainConfig, Option<String>), Failure> {
    let (mut cfg, hash) = match &a.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            let cfg: TrainConfig =
                serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            (cfg, Some(git_blob_hash(&bytes)))
        }
        None => (TrainConfig::default(), None),
    };
    macro_rules! flag {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    flag!(
        calibrator,
        arch,
        epochs,
        batch,
        lr,
        lr_decay,
        lr_interval,
        seed,
        precision,
        data_dir,
        out
    );
    if let Some(n) = a.train_size {
        cfg.train_size = Some(n);
    }
    if a.augment_rotate {
        cfg.augment_rotate = true;
    }
    cfg.validate()?;
    Ok((cfg, hash))
}

fn load(dir: &Path, split: Split) -> Result<DatasetBundle, Failure> {
    load_mnist(dir, split).map_err(|e| match e {
        Error::Io(io) => Failure::Io(format!("cannot read MNIST {split} files from {}: {io}", dir.display())),
        other => other.into(),
    })
}

fn fit_and_save<T: Scalar>(cfg: &TrainConfig, data: &DatasetBundle) -> Result<Vec<EpochRecord>, Error> {
    let mut net = Network::<T>::new(cfg.arch.build(cfg.calibrator), cfg.seed)?;
    let report = fit(&mut net, data, cfg)?;
    fs::create_dir_all(&cfg.out)?;
    net.save(&cfg.out)?;
    Ok(report.epochs)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (cfg, config_hash) = resolve(&a)?;
    let data = match a.fixture {
        Some(kind) => synth_fixture(kind, cfg.train_size.unwrap_or(1000), cfg.seed)?,
        None => load(&cfg.data_dir, Split::Train)?,
    };
    let mut epochs = match cfg.precision {
        Precision::F32 => fit_and_save::<f32>(&cfg, &data)?,
        Precision::F64 => fit_and_save::<f64>(&cfg, &data)?,
    };
    if a.no_timing {
        epochs.iter_mut().for_each(|e| e.seconds = 0.0);
    }
    for e in &epochs {
        println!(
            "epoch {:>3}  lr {:.3e}  loss {:.4}  acc {:.4}  {:.1}s",
            e.epoch, e.lr, e.train_loss, e.train_acc, e.seconds
        );
    }
    let mut config = to_value(&cfg);
    config["fixture"] = to_value(&a.fixture.map(|k| k.id()));
    config["no_timing"] = a.no_timing.into();
    let log = cfg.out.join("epochs.csv");
    write_epoch_log(&epochs, &log)?;
    let files = checkpoint_files(&cfg.out);
    let sidecar = write_sidecar(
        &log,
        &Sidecar {
            config: config.clone(),
            seed: cfg.seed,
            checkpoint: checkpoint_hashes(&files)?,
        },
    )?;
    let mut m = RunManifest::new("train", config, cfg.seed);
    m.precision = Some(cfg.precision.to_string());
    m.calibrator = Some(cfg.calibrator.to_string());
    m.config_file_hash = config_hash;
    m.artifacts = files.into_iter().chain([log, sidecar]).collect();
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&cfg.out.join("manifest.json"))?;
    println!("checkpoint written to {}", cfg.out.display());
    Ok(())
}

fn sweep_with<T: Scalar>(
    model: &Path,
    test: &DatasetBundle,
    angles: &[f64],
    id: &str,
    seed: u64,
) -> Result<SweepResult, Error> {
    let net = Network::<T>::load(model)?;
    rotation_sweep(&net, test, angles, id, seed)
}

pub fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let angles = parse_angles(&a.angles).map_err(Failure::Usage)?;
    let (precision, graph) = checkpoint_info(&a.model)?;
    let mut test = match a.fixture {
        Some(kind) => synth_fixture(kind, a.test_size.unwrap_or(1000), a.seed)?,
        None => load(&a.data_dir, Split::Test)?,
    };
    if let Some(n) = a.test_size {
        test = test.take(n)?;
    }
    let id = graph.calibrator.to_string();
    let result = match precision {
        Precision::F32 => sweep_with::<f32>(&a.model, &test, &angles, &id, a.seed)?,
        Precision::F64 => sweep_with::<f64>(&a.model, &test, &angles, &id, a.seed)?,
    };
    for r in &result.records {
        println!("{:>7}  {:.4}", r.angle_deg, r.accuracy);
    }
    println!(
        "mean accuracy {:.4} over {} angles",
        result.mean_accuracy(),
        result.records.len()
    );
    ensure_parent(&a.out)?;
    write_sweep_csv(&result, &a.out)?;
    let config = serde_json::json!({
        "model": a.model,
        "angles": a.angles,
        "test_size": a.test_size,
        "data_dir": a.data_dir,
        "fixture": a.fixture.map(|k| k.id()),
        "out": a.out,
    });
    let files = checkpoint_files(&a.model);
    let sidecar = write_sidecar(
        &a.out,
        &Sidecar {
            config: config.clone(),
            seed: a.seed,
            checkpoint: checkpoint_hashes(&files)?,
        },
    )?;
    let mut m = RunManifest::new("sweep", config, a.seed);
    m.precision = Some(precision.to_string());
    m.calibrator = Some(id);
    m.artifacts = vec![a.out.clone(), sidecar];
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&manifest_beside(&a.out))?;
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let opts = VerifyOptions {
        seed: a.seed,
        pairs: a.pairs,
        patches: a.patches,
        only: a.only.clone(),
        sobel_override: a.mutate_sobel.then(corrupted_sobel),
    };
    let report = run_checks(&opts)?;
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<13} {:<32} {}", c.group, c.name, c.detail);
    }
    println!(
        "{} of {} checks passed",
        report.checks.len() - report.failures(),
        report.checks.len()
    );
    fs::create_dir_all(&a.out).map_err(Error::Io)?;
    let path = a.out.join("report.json");
    let json = serde_json::to_vec_pretty(&report).map_err(Error::Json)?;
    fs::write(&path, json).map_err(Error::Io)?;
    let config = serde_json::json!({
        "only": a.only,
        "pairs": a.pairs,
        "patches": a.patches,
        "mutate_sobel": a.mutate_sobel,
        "out": a.out,
    });
    let mut m = RunManifest::new("verify", config, a.seed);
    m.artifacts = vec![path];
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&a.out.join("manifest.json"))?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} checks failed", report.failures())))
    }
}

pub fn bench(a: BenchArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let shape = BenchShape {
        k: a.k,
        h: a.h,
        w: a.w,
        c_in: a.c_in,
        c_out: a.c_out,
    };
    let rows = run_bench(shape, a.reps, a.seed)?;
    write_bench_csv(&rows, std::io::stdout().lock())?;
    ensure_parent(&a.out)?;
    let file = fs::File::create(&a.out).map_err(Error::Io)?;
    write_bench_csv(&rows, file)?;
    let config = serde_json::json!({
        "k": a.k, "h": a.h, "w": a.w, "c_in": a.c_in, "c_out": a.c_out,
        "reps": a.reps, "out": a.out,
    });
    let mut m = RunManifest::new("bench", config, a.seed);
    m.precision = Some(Precision::F32.to_string());
    m.artifacts = vec![a.out.clone()];
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&manifest_beside(&a.out))?;
    Ok(())
}

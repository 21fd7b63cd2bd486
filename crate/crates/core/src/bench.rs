//! Wall-clock comparison of the plain convolution against every RIConv.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calib::CalibratorKind;
use crate::error::Result;
use crate::nn::{KernelSpec, RiConv};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchShape {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Default for BenchShape {
    fn default() -> Self {
        BenchShape {
            k: 3,
            h: 64,
            w: 64,
            c_in: 16,
            c_out: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `conv` for the plain convolution, else a calibrator id.
    pub label: String,
    pub shape: BenchShape,
    pub median_us: f64,
    pub p95_us: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn time(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    f()?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e6);
    }
    samples.sort_by(f64::total_cmp);
    Ok((percentile(&samples, 50.0), percentile(&samples, 95.0)))
}

/// One `conv` row followed by one row per calibrator (`none` included),
/// `reps` timed runs each after a warm-up.
pub fn run_bench(shape: BenchShape, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let BenchShape { k, h, w, c_in, c_out } = shape;
    let spec = KernelSpec::new(
        k,
        c_in,
        c_out,
        1,
        (0..c_out * c_in * k * k).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        vec![0.0; c_out],
    )?;
    let x = Tensor::from_vec(
        (1, c_in, h, w),
        (0..c_in * h * w).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
    )?;
    let conv = spec.to_conv2d();
    let reps = reps.max(1);
    let mut rows = Vec::with_capacity(1 + CalibratorKind::ALL.len());
    let (median_us, p95_us) = time(reps, || conv.forward(&x).map(drop))?;
    rows.push(BenchRow {
        label: "conv".into(),
        shape,
        median_us,
        p95_us,
    });
    for kind in CalibratorKind::ALL {
        let layer = RiConv::new(spec.clone(), kind)?;
        let (median_us, p95_us) = time(reps, || layer.forward(&x).map(drop))?;
        rows.push(BenchRow {
            label: kind.id().into(),
            shape,
            median_us,
            p95_us,
        });
    }
    Ok(rows)
}

/// `calibrator,K,h,w,c_in,c_out,median_us,p95_us`.
pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["calibrator", "K", "h", "w", "c_in", "c_out", "median_us", "p95_us"])?;
    for r in rows {
        let s = r.shape;
        w.write_record([
            r.label.clone(),
            s.k.to_string(),
            s.h.to_string(),
            s.w.to_string(),
            s.c_in.to_string(),
            s.c_out.to_string(),
            format!("{:.1}", r.median_us),
            format!("{:.1}", r.p95_us),
        ])?;
    }
    w.flush()?;
    Ok(())
}

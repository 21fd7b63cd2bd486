//! The executable oracle suite run by `riconv verify`.
//!
//! Every check carries tags (its group and, where it applies, a calibrator
//! id); `--only` keeps the checks carrying any of the requested tags.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calib::{lbp_code, lbp_min_rotation, Alignment, Calibrator, CalibratorKind, GradientKernelPair, LbpMode};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Conv2d, KernelSpec, LayerGraph, LayerKind, Network, RiConv};
use crate::polar::{rotate_tensor, PolarPatch, RotationSpec};
use crate::tensor::{Scalar, Tensor};

pub const GROUPS: [&str; 7] = [
    "equivariance",
    "ring-shift",
    "conv-witness",
    "gradient",
    "parity",
    "tiling",
    "lbp-example",
];

pub const EQUIVARIANCE_TOL_F32: f64 = 1e-4;
pub const EQUIVARIANCE_TOL_F64: f64 = 1e-10;
/// Smallest deviation the plain convolution must show under a quarter turn.
pub const WITNESS_MIN: f64 = 1e-2;
pub const GRADIENT_TOL: f64 = 1e-6;
/// Lower bound on the denominator of the relative gradient error, so
/// parameters with (near) zero gradient are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random (input, weight) pairs per calibrator and precision.
    pub pairs: usize,
    /// Random patches per calibrator for the ring-shift oracle.
    pub patches: usize,
    /// Tags to keep; empty keeps everything.
    pub only: Vec<String>,
    /// Replaces the Sobel table of `sb` (mutation testing).
    pub sobel_override: Option<GradientKernelPair>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            pairs: 20,
            patches: 100,
            only: Vec::new(),
            sobel_override: None,
        }
    }
}

impl VerifyOptions {
    /// Rejects tags that match no check.
    pub fn validate(&self) -> Result<()> {
        for tag in &self.only {
            let known = GROUPS.contains(&tag.as_str()) || tag.parse::<CalibratorKind>().is_ok();
            if !known {
                return Err(Error::InvalidConfig(format!(
                    "unknown check tag `{tag}`; expected a group ({}) or a calibrator id",
                    GROUPS.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn wants(&self, tags: &[&str]) -> bool {
        self.only.is_empty() || self.only.iter().any(|o| tags.contains(&o.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub group: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    /// Logical AND of every check.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

fn max_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn calibrator<T: Scalar>(kind: CalibratorKind, k: usize, opts: &VerifyOptions) -> Result<Calibrator<T>> {
    match (&opts.sobel_override, kind) {
        (Some(pair), CalibratorKind::Sb) => {
            let mut pair = pair.clone();
            if pair.k != k {
                // The override is a 3x3 table; larger SB kernels embed it.
                let mut embedded = GradientKernelPair::sobel_embedded(k)?;
                embedded.wx[..9].copy_from_slice(&pair.wx[..9]);
                embedded.wy[..9].copy_from_slice(&pair.wy[..9]);
                pair = embedded;
            }
            Calibrator::with_gradient_kernels(kind, &pair)
        }
        _ => Calibrator::new(kind, k),
    }
}

/// Largest `|riconv(rot90 x) - rot90 riconv(x)|` over `pairs` random layers
/// (K cycling through 3, 5, 7).
pub fn equivariance_deviation<T: Scalar>(kind: CalibratorKind, opts: &VerifyOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xe9);
    let quarter = RotationSpec::new(90.0);
    let mut worst = 0.0f64;
    for i in 0..opts.pairs {
        let k = [3, 5, 7][i % 3];
        let (cin, cout, side) = (3, 4, 12);
        let spec = KernelSpec::new(
            k,
            cin,
            cout,
            1,
            uniform(&mut rng, cout * cin * k * k, -1.0, 1.0)
                .into_iter()
                .map(T::of)
                .collect(),
            uniform(&mut rng, cout, -0.5, 0.5).into_iter().map(T::of).collect(),
        )?;
        let layer = RiConv::with_calibrator(spec, calibrator::<T>(kind, k, opts)?)?;
        let x = Tensor::from_vec(
            (1, cin, side, side),
            uniform(&mut rng, cin * side * side, 0.0, 1.0)
                .into_iter()
                .map(T::of)
                .collect(),
        )?;
        let a = layer.forward(&rotate_tensor(&x, quarter)?)?;
        let b = rotate_tensor(&layer.forward(&x)?, quarter)?;
        worst = worst.max(max_diff(&a, &b));
    }
    Ok(worst)
}

/// Ring shifts (in inner-ring positions) under which `kind` must calibrate
/// identically: quarter turns only for SB, every 45 degrees otherwise.
pub fn applicable_shifts(kind: CalibratorKind) -> Vec<isize> {
    match kind {
        CalibratorKind::Sb => vec![0, 2, 4, 6],
        _ => (0..8).collect(),
    }
}

/// Number of (patch, shift) pairs whose calibration differs from the
/// unshifted patch, out of the total compared.
pub fn ring_shift_mismatches(kind: CalibratorKind, opts: &VerifyOptions) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5a);
    let (mut bad, mut total) = (0, 0);
    for i in 0..opts.patches {
        let k = [3, 5, 7][i % 3];
        let channels = 1 + i % 3;
        let patch = PolarPatch::new(k, channels, uniform(&mut rng, channels * k * k, -1.0, 1.0))?;
        let cal = calibrator::<f64>(kind, k, opts)?;
        let base = cal.calibrate(&patch)?.calibrated;
        for s in applicable_shifts(kind) {
            total += 1;
            if cal.calibrate(&patch.rotated(s))?.calibrated != base {
                bad += 1;
            }
        }
    }
    Ok((bad, total))
}

/// Quarter-turn deviation of a plain convolution with random weights.
pub fn conv_witness_deviation(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
    let (k, cin, cout, side) = (3, 3, 4, 12);
    let conv = Conv2d::new(
        k,
        cin,
        cout,
        1,
        k / 2,
        uniform(&mut rng, cout * cin * k * k, -1.0, 1.0),
        vec![0.0; cout],
    )?;
    let x = Tensor::from_vec((1, cin, side, side), uniform(&mut rng, cin * side * side, 0.0, 1.0))?;
    let quarter = RotationSpec::new(90.0);
    let a = conv.forward(&rotate_tensor(&x, quarter)?)?;
    let b = rotate_tensor(&conv.forward(&x)?, quarter)?;
    Ok(max_diff(&a, &b))
}

/// A network of at most a few hundred parameters containing every layer
/// kind.
pub fn gradient_check_graph(kind: CalibratorKind) -> LayerGraph {
    LayerGraph {
        input: [1, 6, 6],
        calibrator: kind,
        layers: vec![
            LayerKind::Conv {
                k: 3,
                in_channels: 1,
                out_channels: 3,
                stride: 1,
            },
            LayerKind::Relu,
            LayerKind::MaxPool2,
            LayerKind::Conv {
                k: 3,
                in_channels: 3,
                out_channels: 4,
                stride: 1,
            },
            LayerKind::Relu,
            LayerKind::AvgPool { extent: 3 },
            LayerKind::Dense { inputs: 4, outputs: 3 },
        ],
    }
}

/// Worst relative error between analytic and central-difference parameter
/// gradients, and the parameter count of the network checked.
pub fn gradient_error(kind: CalibratorKind, seed: u64) -> Result<(f64, usize)> {
    let graph = gradient_check_graph(kind);
    let mut net = Network::<f64>::new(graph, seed ^ 0x9d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e);
    let x = Tensor::from_vec((2, 1, 6, 6), uniform(&mut rng, 72, 0.0, 1.0))?;
    let labels = [1, 2];
    let (_, grads) = net.loss_and_gradients(&x, &labels)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for t in 0..grads.tensors.len() {
        for i in 0..grads.tensors[t].len() {
            let w0 = net.params()[t][i];
            net.params_mut()[t][i] = w0 + h;
            let up = net.loss_and_gradients(&x, &labels)?.0;
            net.params_mut()[t][i] = w0 - h;
            let down = net.loss_and_gradients(&x, &labels)?.0;
            net.params_mut()[t][i] = w0;
            let fd = (up - down) / (2.0 * h);
            let a = grads.tensors[t][i];
            worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(GRADIENT_FLOOR));
        }
    }
    Ok((worst, net.param_count()))
}

/// Calibrator, parameter count, per-layer output shapes.
pub type ParityRow = (CalibratorKind, usize, Vec<[usize; 3]>);

/// Parameter counts and per-layer output shapes of `paper6` for every
/// calibrator, as instantiated networks report them.
pub fn paper6_parity() -> Result<Vec<ParityRow>> {
    CalibratorKind::ALL
        .iter()
        .map(|&kind| {
            let net = Network::<f32>::new(Architecture::Paper6.build(kind), 0)?;
            Ok((kind, net.param_count(), net.shapes().to_vec()))
        })
        .collect()
}

/// Largest difference between the direct and the tiled execution.
pub fn tiling_deviation(kind: CalibratorKind, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x71);
    let mut worst = 0.0f64;
    for (k, stride) in [(3, 1), (5, 2), (7, 1)] {
        let (cin, cout) = (2, 3);
        let spec = KernelSpec::new(
            k,
            cin,
            cout,
            stride,
            uniform(&mut rng, cout * cin * k * k, -1.0, 1.0),
            uniform(&mut rng, cout, -0.5, 0.5),
        )?;
        let layer = RiConv::new(spec, kind)?;
        let x = Tensor::from_vec((2, cin, 9, 11), uniform(&mut rng, 2 * cin * 99, 0.0, 1.0))?;
        worst = worst.max(max_diff(&layer.forward(&x)?, &layer.forward_tiled(&x)?));
    }
    Ok(worst)
}

/// The worked LBP example: inner-ring bits `P8..P1 = 01001001`.
pub fn lbp_example() -> Result<(u8, u8, usize, bool)> {
    let bits = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    let patch = PolarPatch::from_rings(0.5, &[&bits])?;
    let code = lbp_code(patch.values(), LbpMode::Center);
    let (min_code, shift) = lbp_min_rotation(code);
    let cal = Calibrator::<f64>::new(CalibratorKind::Lbp, 3)?.calibrate(&patch)?;
    let aligned = matches!(cal.alignment, Alignment::BitRotation { rotations: 2, .. })
        && cal.calibrated.ring(0, 1)[0] == bits[6]
        && lbp_code(cal.calibrated.values(), LbpMode::Center) == min_code;
    Ok((code, min_code, shift, aligned))
}

struct Runner<'a> {
    opts: &'a VerifyOptions,
    checks: Vec<CheckOutcome>,
}

impl Runner<'_> {
    fn run(&mut self, group: &str, name: String, tags: &[&str], check: impl FnOnce() -> Result<(bool, String)>) {
        let mut all = vec![group];
        all.extend_from_slice(tags);
        if !self.opts.wants(&all) {
            return;
        }
        let start = Instant::now();
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(CheckOutcome {
            group: group.to_string(),
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
}

/// Runs every selected check.
pub fn run_checks(opts: &VerifyOptions) -> Result<VerifyReport> {
    opts.validate()?;
    let mut r = Runner {
        opts,
        checks: Vec::new(),
    };
    let seed = opts.seed;
    for kind in CalibratorKind::CALIBRATED {
        let id = kind.id();
        r.run("equivariance", format!("{id} f32"), &[id], || {
            let d = equivariance_deviation::<f32>(kind, opts)?;
            Ok((
                d <= EQUIVARIANCE_TOL_F32,
                format!("max deviation {d:.3e} (tol {EQUIVARIANCE_TOL_F32:e})"),
            ))
        });
        r.run("equivariance", format!("{id} f64"), &[id], || {
            let d = equivariance_deviation::<f64>(kind, opts)?;
            Ok((
                d <= EQUIVARIANCE_TOL_F64,
                format!("max deviation {d:.3e} (tol {EQUIVARIANCE_TOL_F64:e})"),
            ))
        });
        r.run("ring-shift", id.to_string(), &[id], || {
            let (bad, total) = ring_shift_mismatches(kind, opts)?;
            Ok((
                bad == 0,
                format!("{bad} of {total} shifted patches calibrate differently"),
            ))
        });
    }
    r.run(
        "conv-witness",
        "plain conv is not equivariant".into(),
        &["none"],
        || {
            let d = conv_witness_deviation(seed)?;
            Ok((
                d > WITNESS_MIN,
                format!("max deviation {d:.3e} (must exceed {WITNESS_MIN:e})"),
            ))
        },
    );
    for kind in CalibratorKind::ALL {
        let id = kind.id();
        r.run("gradient", id.to_string(), &[id], || {
            let (err, params) = gradient_error(kind, seed)?;
            Ok((
                err <= GRADIENT_TOL && params <= 1000,
                format!("max relative error {err:.3e} over {params} parameters (tol {GRADIENT_TOL:e})"),
            ))
        });
    }
    r.run("parity", "paper6 parameters and shapes".into(), &[], || {
        let rows = paper6_parity()?;
        let (_, p0, s0) = &rows[0];
        let same = rows.iter().all(|(_, p, s)| p == p0 && s == s0);
        Ok((
            same,
            format!("{} calibrators, {p0} parameters, {} layers", rows.len(), s0.len()),
        ))
    });
    for kind in CalibratorKind::ALL {
        let id = kind.id();
        r.run("tiling", id.to_string(), &[id], || {
            let d = tiling_deviation(kind, seed)?;
            Ok((d == 0.0, format!("max deviation {d:e}")))
        });
    }
    r.run("lbp-example", "01001001 -> 37".into(), &["lbp"], || {
        let (code, min_code, shift, aligned) = lbp_example()?;
        Ok((
            code == 73 && min_code == 37 && shift == 2 && aligned,
            format!("code {code} -> {min_code} after {shift} moves, P7 on P1: {aligned}"),
        ))
    });
    Ok(VerifyReport { checks: r.checks })
}

/// The Sobel table with one weight flipped, which breaks its symmetry.
pub fn corrupted_sobel() -> GradientKernelPair {
    let mut pair = GradientKernelPair::sobel_embedded(3).expect("K=3 is supported");
    pair.wx[1] += 1.0;
    pair
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only(tags: &[&str]) -> VerifyOptions {
        VerifyOptions {
            pairs: 3,
            patches: 6,
            only: tags.iter().map(|s| s.to_string()).collect(),
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn filtering_by_tag() {
        let report = run_checks(&only(&["lbp"])).unwrap();
        let groups: Vec<&str> = report.checks.iter().map(|c| c.group.as_str()).collect();
        assert!(groups.contains(&"lbp-example") && groups.contains(&"ring-shift"));
        assert!(!groups.contains(&"parity"));
        assert!(report.passed(), "{report:#?}");
        assert!(only(&["bogus"]).validate().is_err());
    }

    #[test]
    fn corrupted_sobel_breaks_equivariance() {
        let mut opts = only(&["sb"]);
        assert!(equivariance_deviation::<f64>(CalibratorKind::Sb, &opts).unwrap() <= EQUIVARIANCE_TOL_F64);
        opts.sobel_override = Some(corrupted_sobel());
        let d = equivariance_deviation::<f64>(CalibratorKind::Sb, &opts).unwrap();
        assert!(d > 1e-3, "{d}");
    }

    #[test]
    fn witness_and_example() {
        assert!(conv_witness_deviation(0).unwrap() > WITNESS_MIN);
        assert_eq!(lbp_example().unwrap(), (73, 37, 2, true));
    }
}

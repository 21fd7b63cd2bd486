use crate::calib::{break_tie, Alignment};
use crate::polar::PolarLattice;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbpMode {
    /// `b_i = [v(P_i) >= v(X_0)]`.
    Center,
    /// `b_i = [v(P_i) >= v(P_{i+1})]`.
    Adjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxMode {
    /// `d_i = v(P_i)`.
    Value,
    /// `d_i = v(P_i) - v(P_{i+1})`.
    Adjacent,
}

fn inner<T: Scalar>(key: &[T]) -> &[T] {
    &key[PolarLattice::ring_range(1)]
}

/// LBP code of the inner ring: bit `i` (least significant first) belongs to
/// `P_{i+1}`, so the string reads `P8 ... P1`.
pub fn lbp_code<T: Scalar>(key: &[T], mode: LbpMode) -> u8 {
    let ring = inner(key);
    (0..8).fold(0u8, |code, i| {
        let reference = match mode {
            LbpMode::Center => key[0],
            LbpMode::Adjacent => ring[(i + 1) % 8],
        };
        code | (u8::from(ring[i] - reference >= T::zero()) << i)
    })
}

/// Smallest value reachable by repeatedly moving the leading bit to the end,
/// and the fewest moves reaching it.
pub fn lbp_min_rotation(code: u8) -> (u8, usize) {
    (0..8)
        .map(|r| (code.rotate_left(r as u32), r))
        .min()
        .expect("eight rotations")
}

pub(crate) fn decide_lbp<T: Scalar>(key: &[T], k: usize, mode: LbpMode) -> Alignment {
    let code = lbp_code(key, mode);
    let (min_code, _) = lbp_min_rotation(code);
    let candidates: Vec<Alignment> = (0..8)
        .filter(|&r| code.rotate_left(r as u32) == min_code)
        .map(|rotations| Alignment::BitRotation {
            code,
            min_code,
            rotations,
        })
        .collect();
    if candidates.len() == 1 {
        candidates[0].clone()
    } else {
        break_tie(key, k, &candidates)
    }
}

pub(crate) fn decide_max<T: Scalar>(key: &[T], k: usize, mode: MaxMode) -> Alignment {
    let ring = inner(key);
    let d: Vec<T> = (0..8)
        .map(|i| match mode {
            MaxMode::Value => ring[i],
            MaxMode::Adjacent => ring[i] - ring[(i + 1) % 8],
        })
        .collect();
    let mut best = 0;
    for i in 1..8 {
        if d[i] > d[best] {
            best = i;
        }
    }
    let candidates: Vec<Alignment> = (best..8)
        .filter(|&i| d[i] == d[best])
        .map(|index| Alignment::MaxAlign { index })
        .collect();
    if candidates.len() == 1 {
        candidates[0].clone()
    } else {
        break_tie(key, k, &candidates)
    }
}

/// Every ring sorted ascending on its own; the centre stays put. Equal key
/// values are ordered by the per-channel samples (`channels` planes of
/// `K^2` values), so ties do not fall back on ring position, which a
/// rotation changes.
pub(crate) fn decide_sort<T: Scalar>(key: &[T], k: usize, samples: &[T], channels: usize) -> Alignment {
    let n = k * k;
    let mut perm: Vec<usize> = (0..n).collect();
    let by_channels = |a: usize, b: usize| {
        (0..channels)
            .map(|ch| samples[ch * n + a].as_f64().total_cmp(&samples[ch * n + b].as_f64()))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    for j in 1..=(k - 1) / 2 {
        let range = PolarLattice::ring_range(j);
        perm[range.clone()].sort_by(|&a, &b| {
            key[a]
                .as_f64()
                .total_cmp(&key[b].as_f64())
                .then_with(|| by_channels(a, b))
        });
    }
    Alignment::Sorted { perm }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{calibrate_lbp, calibrate_max, calibrate_sort};
    use crate::polar::PolarPatch;

    fn ring3(center: f64, ring: [f64; 8]) -> PolarPatch<f64> {
        PolarPatch::from_rings(center, &[&ring]).unwrap()
    }

    fn ring_of(p: &PolarPatch<f64>) -> Vec<f64> {
        p.ring(0, 1).to_vec()
    }

    #[test]
    fn sort_examples() {
        let cal = calibrate_sort(&ring3(9.0, [3., 1., 2., 0., 7., 5., 6., 4.])).unwrap();
        assert_eq!(ring_of(&cal.calibrated), [0., 1., 2., 3., 4., 5., 6., 7.]);
        assert_eq!(cal.calibrated.center(0), 9.0);
        let again = calibrate_sort(&cal.calibrated).unwrap();
        assert_eq!(again.calibrated, cal.calibrated);
    }

    #[test]
    fn sort_orders_key_ties_by_channel_values() {
        // Samples 1 and 5 share the key 0.5 but not their channels.
        let c0 = [0.0, 0.9, 0.3, 0.2, 0.8, 0.1, 0.6, 0.4, 0.7];
        let c1 = [0.0, 0.1, 0.3, 0.2, 0.8, 0.9, 0.6, 0.4, 0.7];
        let p = PolarPatch::new(3, 2, c0.iter().chain(&c1).copied().collect()).unwrap();
        let base = calibrate_sort(&p).unwrap().calibrated;
        for steps in 0..8 {
            assert_eq!(calibrate_sort(&p.rotated(steps)).unwrap().calibrated, base, "{steps}");
        }
    }

    #[test]
    fn sort_handles_every_ring_separately() {
        let r1 = [3., 1., 2., 0., 7., 5., 6., 4.];
        let r2: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let p = PolarPatch::from_rings(-1.0, &[&r1, &r2]).unwrap();
        let cal = calibrate_sort(&p).unwrap();
        assert_eq!(cal.calibrated.ring(0, 2), (0..16).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn lbp_paper_example() {
        // Bits P8..P1 = 0 1 0 0 1 0 0 1.
        let bits = [1., 0., 0., 1., 0., 0., 1., 0.];
        let p = ring3(0.5, bits);
        assert_eq!(lbp_code(p.values(), LbpMode::Center), 73);
        assert_eq!(lbp_min_rotation(73), (37, 2));
        let cal = calibrate_lbp(&p, LbpMode::Center).unwrap();
        assert_eq!(
            cal.alignment,
            Alignment::BitRotation {
                code: 73,
                min_code: 37,
                rotations: 2
            }
        );
        // P7 lands on P1's position.
        let ring = ring_of(&cal.calibrated);
        assert_eq!(ring[0], bits[6]);
        assert_eq!(lbp_code(cal.calibrated.values(), LbpMode::Center), 37);
    }

    #[test]
    fn lbp_flat_patch_is_identity() {
        let p = ring3(2.0, [2.0; 8]);
        let cal = calibrate_lbp(&p, LbpMode::Center).unwrap();
        assert_eq!(lbp_code(p.values(), LbpMode::Center), 255);
        assert!(matches!(cal.alignment, Alignment::BitRotation { rotations: 0, .. }));
        assert_eq!(cal.calibrated, p);
        let below = ring3(3.0, [2.0; 8]);
        let cal = calibrate_lbp(&below, LbpMode::Center).unwrap();
        assert!(matches!(
            cal.alignment,
            Alignment::BitRotation {
                code: 0,
                min_code: 0,
                rotations: 0
            }
        ));
    }

    #[test]
    fn lbp_adjacent_bits() {
        let p = ring3(0.0, [5., 1., 2., 3., 4., 5., 6., 7.]);
        // P1 >= P2, P2 < P3, ..., P7 < P8, P8 >= P1.
        assert_eq!(lbp_code(p.values(), LbpMode::Adjacent), 0b1000_0001);
    }

    #[test]
    fn max_examples() {
        let cal = calibrate_max(&ring3(0.0, [0., 0., 9., 0., 0., 0., 0., 0.]), MaxMode::Value).unwrap();
        assert_eq!(cal.alignment, Alignment::MaxAlign { index: 2 });
        assert_eq!(ring_of(&cal.calibrated), [9., 0., 0., 0., 0., 0., 0., 0.]);

        let tied = ring3(0.0, [5., 5., 0., 0., 0., 0., 0., 0.]);
        let cal = calibrate_max(&tied, MaxMode::Value).unwrap();
        assert_eq!(cal.alignment, Alignment::MaxAlign { index: 0 });
        assert_eq!(cal.calibrated, tied);

        let spike = ring3(0.0, [1., 0., 0., 0., 0., 0., 0., 0.]);
        let cal = calibrate_max(&spike, MaxMode::Adjacent).unwrap();
        assert_eq!(cal.alignment, Alignment::MaxAlign { index: 0 });
    }

    #[test]
    fn max_ties_follow_the_values_not_the_index() {
        // Two equal maxima; whichever is chosen must not depend on where the
        // ring starts.
        let base = [4., 1., 0., 4., 2., 0., 0., 0.];
        let expect = calibrate_max(&ring3(0.0, base), MaxMode::Value).unwrap().calibrated;
        for m in 0..8 {
            let mut r = [0.0; 8];
            for i in 0..8 {
                r[(i + m) % 8] = base[i];
            }
            let cal = calibrate_max(&ring3(0.0, r), MaxMode::Value).unwrap();
            assert_eq!(cal.calibrated, expect, "shift {m}");
        }
    }

    #[test]
    fn periodic_lbp_codes_still_align_consistently() {
        let base = [0.9, -0.3, 0.8, -0.2, 0.7, -0.4, 0.6, -0.1];
        let p = ring3(0.0, base);
        assert_eq!(lbp_code(p.values(), LbpMode::Center), 0b0101_0101);
        let expect = calibrate_lbp(&p, LbpMode::Center).unwrap().calibrated;
        for m in 0..8 {
            let shifted = p.rotated(m);
            let cal = calibrate_lbp(&shifted, LbpMode::Center).unwrap();
            assert_eq!(cal.calibrated, expect, "shift {m}");
        }
    }
}

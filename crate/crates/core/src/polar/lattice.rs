use std::ops::Range;

use crate::error::{Error, Result};

/// One weighted integer-offset read of a sampling stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub dr: isize,
    pub dc: isize,
    pub weight: f64,
}

impl Tap {
    fn quarter_turn(self) -> Tap {
        Tap {
            dr: self.dc,
            dc: -self.dr,
            weight: self.weight,
        }
    }
}

/// How a polar sample reads the input plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    /// Bilinear blend at the exact polar offset.
    Bilinear,
    /// The grid cell paired with the sample by [`PolarLattice::grid_cell`].
    Grid,
}

/// Canonical polar sampling of a `K x K` neighbourhood: the centre, then
/// rings `j = 1..=(K-1)/2` of `8j` samples each, clockwise from `+column`.
///
/// Offsets are `(row, col)` in image coordinates (rows grow downwards). Only
/// the first quarter of each ring is evaluated trigonometrically; the rest is
/// produced by exact quarter turns, so rotating an image by 90 degrees maps
/// every stencil onto another one bit for bit.
#[derive(Debug, Clone)]
pub struct PolarLattice {
    k: usize,
    offsets: Vec<(f64, f64)>,
    grid: Vec<(isize, isize)>,
    bilinear: Vec<Vec<Tap>>,
}

impl PolarLattice {
    pub fn new(k: usize) -> Result<Self> {
        if !matches!(k, 3 | 5 | 7) {
            return Err(Error::UnsupportedKernel(k));
        }
        let rings = (k - 1) / 2;
        let mut offsets = vec![(0.0, 0.0)];
        let mut grid = vec![(0, 0)];
        let mut bilinear = vec![vec![Tap {
            dr: 0,
            dc: 0,
            weight: 1.0,
        }]];

        for j in 1..=rings {
            let quarter = 2 * j;
            let radius = j as f64;
            let base_offsets: Vec<(f64, f64)> = (0..quarter)
                .map(|i| {
                    let theta = i as f64 * std::f64::consts::PI / (4 * j) as f64;
                    if i == 0 {
                        (0.0, radius)
                    } else {
                        (radius * theta.sin(), radius * theta.cos())
                    }
                })
                .collect();
            let base_grid: Vec<(isize, isize)> = (0..quarter)
                .map(|i| {
                    let (i, j) = (i as isize, j as isize);
                    if i <= j {
                        (i, j)
                    } else {
                        (j, 2 * j - i)
                    }
                })
                .collect();
            let base_taps: Vec<Vec<Tap>> = base_offsets.iter().map(|&(r, c)| bilinear_taps(r, c)).collect();

            for turn in 0..4 {
                for i in 0..quarter {
                    let mut off = base_offsets[i];
                    let mut cell = base_grid[i];
                    let mut taps = base_taps[i].clone();
                    for _ in 0..turn {
                        off = (off.1, -off.0);
                        cell = (cell.1, -cell.0);
                        taps.iter_mut().for_each(|t| *t = t.quarter_turn());
                    }
                    // -0.0 would leak into printed offsets; keep signs tidy.
                    offsets.push((off.0 + 0.0, off.1 + 0.0));
                    grid.push(cell);
                    bilinear.push(taps);
                }
            }
        }

        Ok(PolarLattice {
            k,
            offsets,
            grid,
            bilinear,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Total number of samples, always `K^2`.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rings(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn ring_len(j: usize) -> usize {
        8 * j
    }

    /// Flat indices of ring `j` (1-based) in canonical order.
    pub fn ring_range(j: usize) -> Range<usize> {
        let start = 1 + 4 * j * (j - 1);
        start..start + 8 * j
    }

    /// Ring number (0 for the centre) and position within the ring.
    pub fn ring_of(s: usize) -> (usize, usize) {
        if s == 0 {
            return (0, 0);
        }
        let mut j = 1;
        while s > 4 * j * (j + 1) {
            j += 1;
        }
        (j, s - (1 + 4 * j * (j - 1)))
    }

    /// `(row, col)` offsets of every sample, centre first.
    pub fn offsets(&self) -> &[(f64, f64)] {
        &self.offsets
    }

    pub fn angle_degrees(s: usize) -> f64 {
        let (j, i) = Self::ring_of(s);
        if j == 0 {
            0.0
        } else {
            i as f64 * 360.0 / Self::ring_len(j) as f64
        }
    }

    /// Grid cell paired with sample `s`: ring `j` walks the square of
    /// Chebyshev radius `j` clockwise from `(0, j)`. For `K = 3` this is the
    /// nearest cell of every sample.
    pub fn grid_cell(&self, s: usize) -> (isize, isize) {
        self.grid[s]
    }

    /// For each grid cell in row-major order, the polar sample mapped onto it.
    pub fn grid_to_polar(&self) -> Vec<usize> {
        let half = (self.k / 2) as isize;
        let mut out = vec![usize::MAX; self.len()];
        for (s, &(r, c)) in self.grid.iter().enumerate() {
            out[((r + half) as usize) * self.k + (c + half) as usize] = s;
        }
        out
    }

    pub fn taps(&self, s: usize, mode: SamplingMode) -> Vec<Tap> {
        match mode {
            SamplingMode::Bilinear => self.bilinear[s].clone(),
            SamplingMode::Grid => {
                let (dr, dc) = self.grid[s];
                vec![Tap { dr, dc, weight: 1.0 }]
            }
        }
    }

    /// Index of the sample that ring position `s` moves to when every ring
    /// `j` is rotated by `steps * j` positions (45 degrees per step).
    pub fn shifted_index(s: usize, steps: isize) -> usize {
        let (j, i) = Self::ring_of(s);
        if j == 0 {
            return 0;
        }
        let n = Self::ring_len(j) as isize;
        let start = Self::ring_range(j).start;
        start + (i as isize + steps * j as isize).rem_euclid(n) as usize
    }
}

fn bilinear_taps(dr: f64, dc: f64) -> Vec<Tap> {
    let (r0, c0) = (dr.floor(), dc.floor());
    let (fr, fc) = (dr - r0, dc - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ]
    .into_iter()
    .filter(|&(_, _, w)| w != 0.0)
    .map(|(dr, dc, weight)| Tap { dr, dc, weight })
    .collect()
}

/// `(row, col)` offsets of the canonical polar samples of a `K x K` kernel.
pub fn lattice_offsets(k: usize) -> Result<Vec<(f64, f64)>> {
    Ok(PolarLattice::new(k)?.offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_counts_are_k_squared() {
        for k in [3, 5, 7] {
            assert_eq!(lattice_offsets(k).unwrap().len(), k * k);
        }
        assert!(matches!(PolarLattice::new(4), Err(Error::UnsupportedKernel(4))));
        assert!(PolarLattice::new(9).is_err());
    }

    #[test]
    fn axis_aligned_samples_k3() {
        let off = lattice_offsets(3).unwrap();
        assert_eq!(off[0], (0.0, 0.0));
        assert_eq!(off[1], (0.0, 1.0));
        assert_eq!(off[3], (1.0, 0.0));
        assert_eq!(off[5], (0.0, -1.0));
        assert_eq!(off[7], (-1.0, 0.0));
    }

    #[test]
    fn diagonal_sample_k3() {
        let (r, c) = lattice_offsets(3).unwrap()[2];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r - h).abs() < 1e-15 && (c - h).abs() < 1e-15);
        assert_eq!((r * 1e4).round(), 7071.0);
    }

    #[test]
    fn ring_radii_and_spacing() {
        for k in [3, 5, 7] {
            let lat = PolarLattice::new(k).unwrap();
            for j in 1..=lat.rings() {
                let n = PolarLattice::ring_len(j);
                let ring: Vec<_> = PolarLattice::ring_range(j).map(|s| lat.offsets()[s]).collect();
                assert_eq!(ring.len(), n);
                for (i, &(r, c)) in ring.iter().enumerate() {
                    assert!(((r * r + c * c).sqrt() - j as f64).abs() < 1e-12);
                    let angle = r.atan2(c).to_degrees().rem_euclid(360.0);
                    let expect = i as f64 * 360.0 / n as f64;
                    let diff = (angle - expect + 180.0).rem_euclid(360.0) - 180.0;
                    assert!(diff.abs() < 1e-12, "k={k} j={j} i={i}: {angle} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn ring_bookkeeping() {
        assert_eq!(PolarLattice::ring_range(1), 1..9);
        assert_eq!(PolarLattice::ring_range(2), 9..25);
        assert_eq!(PolarLattice::ring_range(3), 25..49);
        assert_eq!(PolarLattice::ring_of(0), (0, 0));
        assert_eq!(PolarLattice::ring_of(8), (1, 7));
        assert_eq!(PolarLattice::ring_of(9), (2, 0));
        assert_eq!(PolarLattice::ring_of(48), (3, 23));
        assert_eq!(PolarLattice::shifted_index(1, 2), 3);
        assert_eq!(PolarLattice::shifted_index(9, 1), 11);
        assert_eq!(PolarLattice::shifted_index(8, 1), 1);
        assert_eq!(PolarLattice::shifted_index(0, 3), 0);
    }

    #[test]
    fn grid_pairing_is_a_bijection() {
        for k in [3, 5, 7] {
            let lat = PolarLattice::new(k).unwrap();
            let g2p = lat.grid_to_polar();
            let mut seen = vec![false; k * k];
            for &s in &g2p {
                assert!(s < k * k);
                assert!(!seen[s]);
                seen[s] = true;
            }
            for s in 0..k * k {
                let (j, _) = PolarLattice::ring_of(s);
                let (r, c) = lat.grid_cell(s);
                assert_eq!(r.abs().max(c.abs()) as usize, j);
            }
        }
    }

    #[test]
    fn grid_pairing_is_nearest_for_k3() {
        let lat = PolarLattice::new(3).unwrap();
        for s in 0..9 {
            let (r, c) = lat.offsets()[s];
            assert_eq!(lat.grid_cell(s), (r.round() as isize, c.round() as isize));
        }
    }

    #[test]
    fn quarter_turn_maps_stencils_exactly() {
        for k in [3, 5, 7] {
            let lat = PolarLattice::new(k).unwrap();
            for s in 1..k * k {
                let (j, _) = PolarLattice::ring_of(s);
                let t = PolarLattice::shifted_index(s, 2);
                let rotated: Vec<Tap> = lat.bilinear[s].iter().map(|t| t.quarter_turn()).collect();
                assert_eq!(rotated, lat.bilinear[t], "k={k} s={s} j={j}");
                let (r, c) = lat.grid_cell(s);
                assert_eq!(lat.grid_cell(t), (c, -r));
            }
        }
    }

    #[test]
    fn bilinear_taps_sum_to_one() {
        let lat = PolarLattice::new(7).unwrap();
        for s in 0..49 {
            let sum: f64 = lat.taps(s, SamplingMode::Bilinear).iter().map(|t| t.weight).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

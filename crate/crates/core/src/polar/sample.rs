use crate::error::{Error, Result};
use crate::polar::lattice::{PolarLattice, SamplingMode};
use crate::tensor::{Scalar, Tensor};

/// Samples of one `K x K` neighbourhood in canonical polar order, for every
/// channel: `values[ch * K^2 + s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarPatch<T> {
    k: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Scalar> PolarPatch<T> {
    pub fn new(k: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        if !matches!(k, 3 | 5 | 7) {
            return Err(Error::UnsupportedKernel(k));
        }
        if channels == 0 || values.len() != channels * k * k {
            return Err(Error::shape(
                format!("{} values for {channels} channels of K={k}", channels * k * k),
                values.len(),
            ));
        }
        Ok(PolarPatch { k, channels, values })
    }

    /// Single-channel patch from a centre value and the rings in order.
    pub fn from_rings(center: T, rings: &[&[T]]) -> Result<Self> {
        let k = 2 * rings.len() + 1;
        let mut values = vec![center];
        for (j, ring) in rings.iter().enumerate() {
            if ring.len() != PolarLattice::ring_len(j + 1) {
                return Err(Error::shape(PolarLattice::ring_len(j + 1), ring.len()));
            }
            values.extend_from_slice(ring);
        }
        Self::new(k, 1, values)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.k * self.k
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.samples();
        &self.values[ch * n..(ch + 1) * n]
    }

    pub fn center(&self, ch: usize) -> T {
        self.channel(ch)[0]
    }

    pub fn ring(&self, ch: usize, j: usize) -> &[T] {
        &self.channel(ch)[PolarLattice::ring_range(j)]
    }

    /// Rotates every ring `j` of every channel by `steps * j` positions so
    /// that sample `i` of the result holds sample `i - steps * j` of `self`.
    /// `steps = 2` is what a clockwise quarter turn of the image does.
    pub fn rotated(&self, steps: isize) -> Self {
        let n = self.samples();
        let mut values = self.values.clone();
        for ch in 0..self.channels {
            for s in 0..n {
                values[ch * n + PolarLattice::shifted_index(s, steps)] = self.values[ch * n + s];
            }
        }
        PolarPatch {
            k: self.k,
            channels: self.channels,
            values,
        }
    }
}

/// Precomputed sampling stencils for one lattice, converted to `T`.
#[derive(Debug, Clone)]
pub struct TapTable<T> {
    k: usize,
    starts: Vec<usize>,
    taps: Vec<(isize, isize, T)>,
}

impl<T: Scalar> TapTable<T> {
    pub fn new(lattice: &PolarLattice, mode: SamplingMode) -> Self {
        let mut starts = Vec::with_capacity(lattice.len() + 1);
        let mut taps = Vec::new();
        for s in 0..lattice.len() {
            starts.push(taps.len());
            taps.extend(lattice.taps(s, mode).into_iter().map(|t| (t.dr, t.dc, T::of(t.weight))));
        }
        starts.push(taps.len());
        TapTable {
            k: lattice.k(),
            starts,
            taps,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn stencil(&self, s: usize) -> &[(isize, isize, T)] {
        &self.taps[self.starts[s]..self.starts[s + 1]]
    }

    /// Samples one plane around `(row, col)` into `out` (length `K^2`).
    /// Reads outside the plane contribute zero.
    #[inline]
    pub fn sample_plane(&self, plane: &[T], h: usize, w: usize, row: usize, col: usize, out: &mut [T]) {
        let half = (self.k / 2) as isize;
        let (r, c) = (row as isize, col as isize);
        let interior = r >= half && c >= half && r + half < h as isize && c + half < w as isize;
        for (s, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &(dr, dc, wt) in self.stencil(s) {
                let (rr, cc) = (r + dr, c + dc);
                let v = if interior || (rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w) {
                    plane[rr as usize * w + cc as usize]
                } else {
                    T::zero()
                };
                acc += wt * v;
            }
            *o = acc;
        }
    }

    /// Adjoint of [`Self::sample_plane`]: scatters sample gradients back onto
    /// the plane.
    #[inline]
    pub fn scatter_plane(&self, grad: &[T], h: usize, w: usize, row: usize, col: usize, plane: &mut [T]) {
        let (r, c) = (row as isize, col as isize);
        for (s, &g) in grad.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for &(dr, dc, wt) in self.stencil(s) {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    plane[rr as usize * w + cc as usize] += wt * g;
                }
            }
        }
    }
}

/// Bilinear read at real coordinates `(r, c)`; neighbours outside the plane
/// read as zero.
pub fn bilinear_sample<T: Scalar>(plane: &[T], h: usize, w: usize, r: f64, c: f64) -> T {
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (T::of(r - r0), T::of(c - c0));
    let (r0, c0) = (r0 as i64, c0 as i64);
    let at = |rr: i64, cc: i64| -> T {
        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
            plane[rr as usize * w + cc as usize]
        } else {
            T::zero()
        }
    };
    let one = T::one();
    let top = (one - fc) * at(r0, c0) + fc * at(r0, c0 + 1);
    let bottom = (one - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1);
    (one - fr) * top + fr * bottom
}

/// Extracts the polar patch centred at `(row, col)` of batch item `b`, with
/// bilinear sampling and zero fill.
pub fn extract_patch<T: Scalar>(
    input: &Tensor<T>,
    b: usize,
    row: usize,
    col: usize,
    k: usize,
) -> Result<PolarPatch<T>> {
    let lattice = PolarLattice::new(k)?;
    extract_patch_with(input, b, row, col, &TapTable::new(&lattice, SamplingMode::Bilinear))
}

pub fn extract_patch_with<T: Scalar>(
    input: &Tensor<T>,
    b: usize,
    row: usize,
    col: usize,
    taps: &TapTable<T>,
) -> Result<PolarPatch<T>> {
    let shape = input.shape();
    if b >= shape.n {
        return Err(Error::IndexOutOfRange {
            index: [b, 0, row, col],
            shape: shape.dims(),
        });
    }
    if row >= shape.h || col >= shape.w {
        return Err(Error::OutsideDomain {
            row,
            col,
            height: shape.h,
            width: shape.w,
        });
    }
    let n = taps.k() * taps.k();
    let mut values = vec![T::zero(); shape.c * n];
    for ch in 0..shape.c {
        taps.sample_plane(
            input.plane(b, ch),
            shape.h,
            shape.w,
            row,
            col,
            &mut values[ch * n..(ch + 1) * n],
        );
    }
    PolarPatch::new(taps.k(), shape.c, values)
}

/// `(1 - f) * a + f * b`, the one interpolation used for every ring shift.
#[inline(always)]
pub fn blend<T: Scalar>(a: T, b: T, f: T) -> T {
    if f == T::zero() {
        a
    } else {
        (T::one() - f) * a + f * b
    }
}

/// Cyclic shift by `whole + frac` positions:
/// `out[i] = (1 - frac) * ring[i + whole] + frac * ring[i + whole + 1]`.
pub fn ring_shift_parts<T: Scalar>(ring: &[T], whole: isize, frac: T, out: &mut [T]) {
    let n = ring.len() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let a = (i as isize + whole).rem_euclid(n) as usize;
        let b = (i as isize + whole + 1).rem_euclid(n) as usize;
        *o = blend(ring[a], ring[b], frac);
    }
}

/// Rotates a ring by `shift` sample positions (fractional part by linear
/// interpolation between neighbours).
pub fn ring_shift<T: Scalar>(ring: &[T], shift: f64) -> Vec<T> {
    let whole = shift.floor();
    let mut out = vec![T::zero(); ring.len()];
    if !ring.is_empty() {
        ring_shift_parts(ring, whole as isize, T::of(shift - whole), &mut out);
    }
    out
}

//! Dense rank-4 tensors in `(batch, channels, height, width)` row-major layout.
//!
//! Everything numeric in the crate is generic over [`Scalar`], implemented for
//! `f32` (training default) and `f64` (verification). Operations are pure and
//! deterministic within one precision.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::InvalidConfig(format!(
                "unknown precision `{other}`; expected f32 or f64"
            ))),
        }
    }
}

/// Floating-point element type of tensors and layers.
pub trait Scalar:
    Float
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const PRECISION: Precision;

    /// Gradient magnitude below which an orientation is treated as undefined.
    const GRAD_EPS: Self;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn extend_le_bytes(self, out: &mut Vec<u8>);

    /// Decodes one element from exactly `PRECISION.byte_width()` bytes.
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;
    const GRAD_EPS: Self = 1e-6;

    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn extend_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes per f32"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;
    const GRAD_EPS: Self = 1e-8;

    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn extend_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes per f64"))
    }
}

/// Extents of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::InvalidExtent(self.dims()));
        }
        Ok(())
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape::new(n, c, h, w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Axis selector for [`Tensor::sum_axis`] and [`Tensor::mean_axis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::Batch => 0,
            Axis::Channel => 1,
            Axis::Height => 2,
            Axis::Width => 3,
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: impl Into<Shape>, value: T) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(
                format!("{} elements for {shape}", shape.numel()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, index: [usize; 4]) -> Result<usize> {
        let dims = self.shape.dims();
        if index.iter().zip(dims.iter()).any(|(i, d)| i >= d) {
            return Err(Error::IndexOutOfRange { index, shape: dims });
        }
        let [b, c, r, col] = index;
        Ok(((b * self.shape.c + c) * self.shape.h + r) * self.shape.w + col)
    }

    pub fn get(&self, b: usize, c: usize, r: usize, col: usize) -> Result<T> {
        Ok(self.data[self.offset([b, c, r, col])?])
    }

    pub fn set(&mut self, b: usize, c: usize, r: usize, col: usize, value: T) -> Result<()> {
        let at = self.offset([b, c, r, col])?;
        self.data[at] = value;
        Ok(())
    }

    /// One batch item as a `(c, h, w)` slice.
    pub fn item(&self, b: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let len = self.shape.item();
        &mut self.data[b * len..(b + 1) * len]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|x| x + s)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Treats both operands as matrices (`n*c*h` rows by `w` columns) and
    /// multiplies them. The result has shape `(1, 1, rows, cols)`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.shape.n * self.shape.c * self.shape.h, self.shape.w);
        let (k2, n) = (other.shape.n * other.shape.c * other.shape.h, other.shape.w);
        if k != k2 {
            return Err(Error::shape(
                format!("inner dimension {k}"),
                format!("inner dimension {k2}"),
            ));
        }
        let out = gemm::matmul(&self.data, &other.data, m, k, n);
        Tensor::from_vec(Shape::new(1, 1, m, n), out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    /// Flat index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data).expect("tensors are never empty")
    }

    /// Sums over one axis, keeping it with extent 1.
    pub fn sum_axis(&self, axis: Axis) -> Self {
        let dims = self.shape.dims();
        let mut out_dims = dims;
        out_dims[axis.index()] = 1;
        let out_shape = Shape::from(out_dims);
        let mut out = vec![T::zero(); out_shape.numel()];
        for b in 0..dims[0] {
            for c in 0..dims[1] {
                for r in 0..dims[2] {
                    for col in 0..dims[3] {
                        let mut idx = [b, c, r, col];
                        let src = self.data[((b * dims[1] + c) * dims[2] + r) * dims[3] + col];
                        idx[axis.index()] = 0;
                        let dst = ((idx[0] * out_dims[1] + idx[1]) * out_dims[2] + idx[2]) * out_dims[3] + idx[3];
                        out[dst] += src;
                    }
                }
            }
        }
        Tensor {
            shape: out_shape,
            data: out,
        }
    }

    pub fn mean_axis(&self, axis: Axis) -> Self {
        let extent = self.shape.dims()[axis.index()];
        self.sum_axis(axis).scale(T::one() / T::of(extent as f64))
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax<T: Scalar>(values: &[T]) -> Result<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyReduction)
}

/// One entry of a tensor bundle manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub precision: Precision,
    /// Byte offset of the first element in the raw array file.
    pub offset: usize,
}

/// Manifest describing a set of named tensors stored back to back as raw
/// little-endian elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub entries: Vec<TensorEntry>,
}

/// Encodes tensors into a manifest plus one contiguous little-endian buffer.
pub fn encode_tensors<T: Scalar>(tensors: &[(&str, &Tensor<T>)]) -> (TensorManifest, Vec<u8>) {
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().dims(),
            precision: T::PRECISION,
            offset: bytes.len(),
        });
        for &x in t.data() {
            x.extend_le_bytes(&mut bytes);
        }
    }
    (TensorManifest { entries }, bytes)
}

/// Decodes tensors previously produced by [`encode_tensors`].
pub fn decode_tensors<T: Scalar>(manifest: &TensorManifest, bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let width = T::PRECISION.byte_width();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if e.precision != T::PRECISION {
            return Err(Error::shape(T::PRECISION, e.precision));
        }
        let shape = Shape::from(e.shape);
        let end = e.offset + shape.numel() * width;
        let raw = bytes.get(e.offset..end).ok_or_else(|| {
            Error::format(
                "<tensor data>",
                format!("tensor `{}` extends past the end of the data", e.name),
            )
        })?;
        let data = raw.chunks_exact(width).map(T::from_le_slice).collect();
        out.push((e.name.clone(), Tensor::from_vec(shape, data)?));
    }
    Ok(out)
}

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (raw elements).
pub fn save_tensors<T: Scalar>(stem: &Path, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    let (manifest, bytes) = encode_tensors(tensors);
    let mut json = fs::File::create(stem.with_extension("json"))?;
    serde_json::to_writer_pretty(&mut json, &manifest)?;
    json.write_all(b"\n")?;
    fs::write(stem.with_extension("bin"), bytes)?;
    Ok(())
}

pub fn load_tensors<T: Scalar>(stem: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let manifest: TensorManifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    let bytes = fs::read(stem.with_extension("bin"))?;
    decode_tensors(&manifest, &bytes)
}

use crate::calib::{channel_mean, Alignment, Calibrator, CalibratorKind, Route};
use crate::error::{Error, Result};
use crate::nn::conv::{col2im, im2col, output_extent, Conv2d, ConvGrads};
use crate::polar::{PolarLattice, TapTable};
use crate::tensor::{Scalar, Shape, Tensor};

/// Learnable weights of one convolution layer, indexed by the canonical polar
/// ordering: `weights[(o * in + i) * K^2 + s]` multiplies sample `s`.
/// Padding is always zero and "same" (`K / 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<T> {
    pub k: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(
        k: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        PolarLattice::new(k)?;
        if in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel needs positive channels and stride, got in={in_channels} out={out_channels} stride={stride}"
            )));
        }
        let expected = out_channels * in_channels * k * k;
        if weights.len() != expected || bias.len() != out_channels {
            return Err(Error::shape(
                format!("{expected} weights and {out_channels} biases"),
                format!("{} weights and {} biases", weights.len(), bias.len()),
            ));
        }
        Ok(KernelSpec {
            k,
            in_channels,
            out_channels,
            stride,
            weights,
            bias,
        })
    }

    pub fn zeros(k: usize, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        Self::new(
            k,
            in_channels,
            out_channels,
            stride,
            vec![T::zero(); out_channels * in_channels * k * k],
            vec![T::zero(); out_channels],
        )
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            output_extent(h, self.k, self.stride, pad),
            output_extent(w, self.k, self.stride, pad),
        )
    }

    /// The same layer as a standard convolution, each polar weight moved to
    /// the grid cell its sample is paired with.
    pub fn to_conv2d(&self) -> Conv2d<T> {
        let g2p = PolarLattice::new(self.k).expect("validated K").grid_to_polar();
        Conv2d {
            k: self.k,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            stride: self.stride,
            pad: self.k / 2,
            weights: polar_to_grid(&self.weights, &g2p),
            bias: self.bias.clone(),
        }
    }
}

fn polar_to_grid<T: Scalar>(polar: &[T], g2p: &[usize]) -> Vec<T> {
    let n = g2p.len();
    let mut grid = Vec::with_capacity(polar.len());
    for block in polar.chunks_exact(n) {
        grid.extend(g2p.iter().map(|&s| block[s]));
    }
    grid
}

fn grid_to_polar<T: Scalar>(grid: &[T], g2p: &[usize]) -> Vec<T> {
    let n = g2p.len();
    let mut polar = vec![T::zero(); grid.len()];
    for (dst, src) in polar.chunks_exact_mut(n).zip(grid.chunks_exact(n)) {
        for (g, &s) in g2p.iter().enumerate() {
            dst[s] = src[g];
        }
    }
    polar
}

/// Forward state of one image, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RiConvImageCache<T> {
    h: usize,
    w: usize,
    col: Vec<T>,
    /// `K^2` routes per output position; empty for `none`.
    routes: Vec<Route<T>>,
    /// Gradient calibrators only: `(steps, gx, gy)` per position when an
    /// orientation was found, and the raw samples (`P x in x K^2`).
    orientation: Vec<Option<(usize, f64, f64)>>,
    samples: Vec<T>,
}

/// Forward state of a batch.
#[derive(Debug, Clone)]
pub struct RiConvCache<T> {
    shape: Shape,
    images: Vec<RiConvImageCache<T>>,
}

/// A rotation-invariant convolution: every window is sampled on the polar
/// lattice, realigned by the calibrator (decided on the channel-mean key and
/// applied to all channels), and then weighted by the learnable kernel.
#[derive(Debug, Clone)]
pub struct RiConv<T> {
    spec: KernelSpec<T>,
    calibrator: Calibrator<T>,
    taps: TapTable<T>,
    g2p: Vec<usize>,
    ring: Vec<usize>,
}

impl<T: Scalar> RiConv<T> {
    pub fn new(spec: KernelSpec<T>, kind: CalibratorKind) -> Result<Self> {
        let calibrator = Calibrator::new(kind, spec.k)?;
        Self::with_calibrator(spec, calibrator)
    }

    /// Uses a pre-built calibrator, e.g. one with replaced gradient kernels.
    pub fn with_calibrator(spec: KernelSpec<T>, calibrator: Calibrator<T>) -> Result<Self> {
        if calibrator.k() != spec.k {
            return Err(Error::shape(format!("K={}", spec.k), format!("K={}", calibrator.k())));
        }
        let lattice = PolarLattice::new(spec.k)?;
        Ok(RiConv {
            taps: TapTable::new(&lattice, calibrator.kind().sampling()),
            g2p: lattice.grid_to_polar(),
            ring: (0..lattice.len()).map(|s| PolarLattice::ring_of(s).0).collect(),
            spec,
            calibrator,
        })
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    pub fn spec_mut(&mut self) -> &mut KernelSpec<T> {
        &mut self.spec
    }

    pub fn kind(&self) -> CalibratorKind {
        self.calibrator.kind()
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.spec.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.spec.in_channels),
                format!("{} input channels", shape.c),
            ));
        }
        Ok(())
    }

    /// Direct execution: one calibrated inner product per output position.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input.shape())?;
        let s = input.shape();
        let conv = self.spec.to_conv2d();
        let (ho, wo) = self.spec.output_dims(s.h, s.w);
        let mut out = Vec::with_capacity(s.n * self.spec.out_channels * ho * wo);
        for b in 0..s.n {
            out.extend(self.forward_image(&conv, input.item(b), s.h, s.w, None));
        }
        Tensor::from_vec((s.n, self.spec.out_channels, ho, wo), out)
    }

    /// Tiled execution: calibrated windows are laid out side by side in a
    /// `(K h) x (K w)` map which a stride-`K` convolution then consumes.
    pub fn forward_tiled(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input.shape())?;
        let s = input.shape();
        let k = self.spec.k;
        let mut tiled_conv = self.spec.to_conv2d();
        tiled_conv.stride = k;
        tiled_conv.pad = 0;
        let tiled = self.tile(input)?;
        tiled_conv
            .forward(&tiled)
            .inspect(|out| debug_assert_eq!(out.shape().n, s.n))
    }

    /// The `(n, in, K h_out, K w_out)` map of calibrated windows.
    pub fn tile(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input.shape())?;
        let s = input.shape();
        let k = self.spec.k;
        let k2 = k * k;
        let (ho, wo) = self.spec.output_dims(s.h, s.w);
        let p = ho * wo;
        let (th, tw) = (k * ho, k * wo);
        let mut data = vec![T::zero(); s.n * s.c * th * tw];
        for b in 0..s.n {
            let col = self.calibrated_columns(input.item(b), s.h, s.w, None);
            let item = &mut data[b * s.c * th * tw..(b + 1) * s.c * th * tw];
            for ci in 0..s.c {
                for g in 0..k2 {
                    let (ky, kx) = (g / k, g % k);
                    let row = &col[(ci * k2 + g) * p..][..p];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            item[ci * th * tw + (oy * k + ky) * tw + ox * k + kx] = row[oy * wo + ox];
                        }
                    }
                }
            }
        }
        Tensor::from_vec((s.n, s.c, th, tw), data)
    }

    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, RiConvCache<T>)> {
        self.check_input(input.shape())?;
        let s = input.shape();
        let conv = self.spec.to_conv2d();
        let (ho, wo) = self.spec.output_dims(s.h, s.w);
        let mut out = Vec::with_capacity(s.n * self.spec.out_channels * ho * wo);
        let mut images = Vec::with_capacity(s.n);
        for b in 0..s.n {
            let mut cache = None;
            out.extend(self.forward_image(&conv, input.item(b), s.h, s.w, Some(&mut cache)));
            images.push(cache.expect("filled by forward_image"));
        }
        Ok((
            Tensor::from_vec((s.n, self.spec.out_channels, ho, wo), out)?,
            RiConvCache { shape: s, images },
        ))
    }

    /// Gradients with respect to the input, weights (polar order) and bias.
    pub fn backward(&self, cache: &RiConvCache<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let s = cache.shape;
        let (ho, wo) = self.spec.output_dims(s.h, s.w);
        let expected = Shape::new(s.n, self.spec.out_channels, ho, wo);
        if grad_out.shape() != expected {
            return Err(Error::shape(expected, grad_out.shape()));
        }
        let conv = self.spec.to_conv2d();
        let mut gw = vec![T::zero(); self.spec.weights.len()];
        let mut gb = vec![T::zero(); self.spec.out_channels];
        let mut input = Tensor::zeros(s)?;
        for (b, img) in cache.images.iter().enumerate() {
            self.backward_image(&conv, img, grad_out.item(b), input.item_mut(b), &mut gw, &mut gb);
        }
        Ok(ConvGrads {
            input,
            weights: self.grid_grad_to_polar(&gw),
            bias: gb,
        })
    }

    pub(crate) fn grid_grad_to_polar(&self, grid: &[T]) -> Vec<T> {
        grid_to_polar(grid, &self.g2p)
    }

    /// One image through the layer; `conv` must be [`KernelSpec::to_conv2d`]
    /// of the current weights.
    pub(crate) fn forward_image(
        &self,
        conv: &Conv2d<T>,
        x: &[T],
        h: usize,
        w: usize,
        cache: Option<&mut Option<RiConvImageCache<T>>>,
    ) -> Vec<T> {
        let (ho, wo) = self.spec.output_dims(h, w);
        let col = self.calibrated_columns(x, h, w, cache);
        conv.apply_columns(col.as_ref(), ho * wo)
    }

    /// Calibrated im2col matrix: row `(ci, grid cell)`, column = output
    /// position. Grid cell `g` holds calibrated sample `g2p[g]`.
    fn calibrated_columns<'a>(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        cache: Option<&'a mut Option<RiConvImageCache<T>>>,
    ) -> ColumnRef<'a, T> {
        let spec = &self.spec;
        let (k, cin) = (spec.k, spec.in_channels);
        let k2 = k * k;
        let (ho, wo) = spec.output_dims(h, w);
        let p = ho * wo;
        let mut img = RiConvImageCache {
            h,
            w,
            col: Vec::new(),
            routes: Vec::new(),
            orientation: Vec::new(),
            samples: Vec::new(),
        };
        if self.kind() == CalibratorKind::None {
            // Grid sampling reads each cell with weight one, so this is
            // exactly the plain convolution's unrolling.
            im2col(x, cin, h, w, k, spec.stride, k / 2, &mut img.col);
        } else {
            let gradient = self.calibrator.is_gradient();
            let keep = cache.is_some();
            img.col = vec![T::zero(); cin * k2 * p];
            if keep {
                img.routes.reserve(p * k2);
                if gradient {
                    img.orientation.reserve(p);
                    img.samples.reserve(p * cin * k2);
                }
            }
            let mut samp = vec![T::zero(); cin * k2];
            let mut key = vec![T::zero(); k2];
            let mut routes = vec![Route::copy(0); k2];
            for oy in 0..ho {
                for ox in 0..wo {
                    let pos = oy * wo + ox;
                    let (row, colm) = (oy * spec.stride, ox * spec.stride);
                    for ci in 0..cin {
                        self.taps.sample_plane(
                            &x[ci * h * w..(ci + 1) * h * w],
                            h,
                            w,
                            row,
                            colm,
                            &mut samp[ci * k2..(ci + 1) * k2],
                        );
                    }
                    channel_mean(&samp, cin, &mut key);
                    let alignment = self.calibrator.decide_with(&key, &samp, cin);
                    alignment.write_routes(k, &mut routes);
                    for ci in 0..cin {
                        let v = &samp[ci * k2..(ci + 1) * k2];
                        for (g, &s) in self.g2p.iter().enumerate() {
                            img.col[(ci * k2 + g) * p + pos] = routes[s].eval(v);
                        }
                    }
                    if keep {
                        img.routes.extend_from_slice(&routes);
                        if gradient {
                            img.orientation.push(match alignment {
                                Alignment::Orientation { steps, gx, gy, .. } => Some((steps, gx, gy)),
                                _ => None,
                            });
                            img.samples.extend_from_slice(&samp);
                        }
                    }
                }
            }
        }
        match cache {
            Some(slot) => ColumnRef::Cached(&slot.insert(img).col),
            None => ColumnRef::Owned(img.col),
        }
    }

    pub(crate) fn backward_image(
        &self,
        conv: &Conv2d<T>,
        img: &RiConvImageCache<T>,
        grad_out: &[T],
        grad_x: &mut [T],
        grad_w_grid: &mut [T],
        grad_b: &mut [T],
    ) {
        let spec = &self.spec;
        let (k, cin) = (spec.k, spec.in_channels);
        let k2 = k * k;
        let (h, w) = (img.h, img.w);
        let (ho, wo) = spec.output_dims(h, w);
        let p = ho * wo;
        conv.accumulate_param_grads(&img.col, grad_out, p, grad_w_grid, grad_b);
        let mut grad_col = Vec::new();
        conv.column_grads(grad_out, p, &mut grad_col);
        if self.kind() == CalibratorKind::None {
            col2im(&grad_col, cin, h, w, k, spec.stride, k / 2, grad_x);
            return;
        }
        let gradient = self.calibrator.is_gradient();
        let rings = k / 2;
        let mut gsamp = vec![T::zero(); cin * k2];
        let mut grad_frac = vec![0.0f64; rings + 1];
        let mut key_grad = vec![T::zero(); k2];
        for oy in 0..ho {
            for ox in 0..wo {
                let pos = oy * wo + ox;
                let routes = &img.routes[pos * k2..(pos + 1) * k2];
                let orientation = if gradient { img.orientation[pos] } else { None };
                gsamp.fill(T::zero());
                grad_frac.fill(0.0);
                for ci in 0..cin {
                    let gs = &mut gsamp[ci * k2..(ci + 1) * k2];
                    for (g, &s) in self.g2p.iter().enumerate() {
                        let gc = grad_col[(ci * k2 + g) * p + pos];
                        let r = routes[s];
                        if r.frac == T::zero() {
                            gs[r.a] += gc;
                        } else {
                            gs[r.a] += (T::one() - r.frac) * gc;
                            gs[r.b] += r.frac * gc;
                        }
                        if orientation.is_some() {
                            let v = &img.samples[(pos * cin + ci) * k2..][..k2];
                            grad_frac[self.ring[s]] += (gc * (v[r.b] - v[r.a])).as_f64();
                        }
                    }
                }
                if let Some((steps, gx, gy)) = orientation {
                    // frac of ring j moves by j / 45 per degree of residual.
                    let grad_residual: f64 = (1..=rings).map(|j| grad_frac[j] * j as f64 / 45.0).sum();
                    key_grad.fill(T::zero());
                    self.calibrator
                        .orientation_backward(steps, gx, gy, grad_residual, &mut key_grad);
                    let inv = T::one() / T::of(cin as f64);
                    for ci in 0..cin {
                        for (g, &kg) in gsamp[ci * k2..(ci + 1) * k2].iter_mut().zip(&key_grad) {
                            *g += kg * inv;
                        }
                    }
                }
                let (row, colm) = (oy * spec.stride, ox * spec.stride);
                for ci in 0..cin {
                    self.taps.scatter_plane(
                        &gsamp[ci * k2..(ci + 1) * k2],
                        h,
                        w,
                        row,
                        colm,
                        &mut grad_x[ci * h * w..(ci + 1) * h * w],
                    );
                }
            }
        }
    }
}

enum ColumnRef<'a, T> {
    Owned(Vec<T>),
    Cached(&'a Vec<T>),
}

impl<T> AsRef<[T]> for ColumnRef<'_, T> {
    fn as_ref(&self) -> &[T] {
        match self {
            ColumnRef::Owned(v) => v,
            ColumnRef::Cached(v) => v,
        }
    }
}

impl<T> std::ops::Deref for ColumnRef<'_, T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        self.as_ref()
    }
}

/// `riconv_forward`.
pub fn riconv_forward<T: Scalar>(input: &Tensor<T>, spec: &KernelSpec<T>, kind: CalibratorKind) -> Result<Tensor<T>> {
    RiConv::new(spec.clone(), kind)?.forward(input)
}

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::Conv2d;
use crate::nn::graph::{LayerGraph, LayerKind};
use crate::nn::ops::{avgpool_map, avgpool_map_backward, maxpool2_map, relu_backward_slice, softmax_ce_vec, Dense};
use crate::nn::riconv::{KernelSpec, RiConv, RiConvImageCache};
use crate::tensor::{decode_tensors, encode_tensors, Precision, Scalar, Tensor, TensorManifest};

pub const CHECKPOINT_FORMAT: &str = "riconv-checkpoint-v1";
const MANIFEST_FILE: &str = "model.json";
const DATA_FILE: &str = "model.bin";

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(RiConv<T>),
    Relu,
    MaxPool2,
    AvgPool(usize),
    Dense(Dense<T>),
}

/// A network instantiated from a [`LayerGraph`].
#[derive(Debug, Clone)]
pub struct Network<T> {
    graph: LayerGraph,
    shapes: Vec<[usize; 3]>,
    layers: Vec<Layer<T>>,
}

/// Per-parameter-tensor gradients in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= s);
    }
}

/// Weights frozen for one pass: convolutions as grid-ordered kernels.
pub(crate) struct Prepared<T> {
    convs: Vec<Option<Conv2d<T>>>,
}

enum LayerCache<T> {
    Conv(RiConvImageCache<T>),
    /// Output of the activation (positive exactly where the input was).
    Relu(Vec<T>),
    MaxPool(Vec<usize>),
    AvgPool,
    Dense(Vec<T>),
}

/// Forward state of a batch, for [`Network::backward`].
pub struct NetworkCache<T> {
    images: Vec<Vec<LayerCache<T>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    precision: Precision,
    graph: LayerGraph,
    tensors: TensorManifest,
}

impl<T: Scalar> Network<T> {
    /// Fan-in uniform initialisation from a seeded stream: convolutions use
    /// `U(-sqrt(6 / fan_in), +)`, dense layers `U(-1 / sqrt(fan_in), +)`,
    /// biases start at zero.
    pub fn new(graph: LayerGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut uniform =
            |n: usize, bound: f64| -> Vec<T> { (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect() };
        let mut layers = Vec::with_capacity(graph.layers.len());
        let shapes = graph.output_shapes()?;
        for layer in &graph.layers {
            layers.push(match *layer {
                LayerKind::Conv {
                    k,
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    let fan_in = (in_channels * k * k) as f64;
                    let spec = KernelSpec::new(
                        k,
                        in_channels,
                        out_channels,
                        stride,
                        uniform(out_channels * in_channels * k * k, (6.0 / fan_in).sqrt()),
                        vec![T::zero(); out_channels],
                    )?;
                    Layer::Conv(RiConv::new(spec, graph.calibrator)?)
                }
                LayerKind::Relu => Layer::Relu,
                LayerKind::MaxPool2 => Layer::MaxPool2,
                LayerKind::AvgPool { extent } => Layer::AvgPool(extent),
                LayerKind::Dense { inputs, outputs } => Layer::Dense(Dense::new(
                    inputs,
                    outputs,
                    uniform(inputs * outputs, 1.0 / (inputs as f64).sqrt()),
                    vec![T::zero(); outputs],
                )?),
            });
        }
        Ok(Network { graph, shapes, layers })
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Output shape after every layer.
    pub fn shapes(&self) -> &[[usize; 3]] {
        &self.shapes
    }

    pub fn classes(&self) -> usize {
        let [c, h, w] = *self.shapes.last().unwrap_or(&self.graph.input);
        c * h * w
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Weights and bias of every parametrised layer, in layer order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.spec().weights.as_slice());
                    out.push(c.spec().bias.as_slice());
                }
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice());
                    out.push(d.bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    let spec = c.spec_mut();
                    out.push(spec.weights.as_mut_slice());
                    out.push(spec.bias.as_mut_slice());
                }
                Layer::Dense(d) => {
                    out.push(d.weights.as_mut_slice());
                    out.push(d.bias.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            tensors: self.params().iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub(crate) fn prepare(&self) -> Prepared<T> {
        Prepared {
            convs: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => Some(c.spec().to_conv2d()),
                    _ => None,
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if [s.c, s.h, s.w] != self.graph.input {
            return Err(Error::shape(format!("images of {:?}", self.graph.input), s));
        }
        Ok(())
    }

    /// Runs the first `depth` layers on one image.
    fn forward_image(
        &self,
        prep: &Prepared<T>,
        x: &[T],
        depth: usize,
        mut cache: Option<&mut Vec<LayerCache<T>>>,
    ) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut dims = self.graph.input;
        for (i, layer) in self.layers[..depth].iter().enumerate() {
            let [c, h, w] = dims;
            cur = match layer {
                Layer::Conv(rc) => {
                    let conv = prep.convs[i].as_ref().expect("prepared conv");
                    match cache.as_deref_mut() {
                        Some(caches) => {
                            let mut slot = None;
                            let y = rc.forward_image(conv, &cur, h, w, Some(&mut slot));
                            caches.push(LayerCache::Conv(slot.expect("filled by forward_image")));
                            y
                        }
                        None => rc.forward_image(conv, &cur, h, w, None),
                    }
                }
                Layer::Relu => {
                    cur.iter_mut().for_each(|v| *v = v.max(T::zero()));
                    if let Some(caches) = cache.as_deref_mut() {
                        caches.push(LayerCache::Relu(cur.clone()));
                    }
                    cur
                }
                Layer::MaxPool2 => {
                    let (y, arg) = maxpool2_map(&cur, c, h, w);
                    if let Some(caches) = cache.as_deref_mut() {
                        caches.push(LayerCache::MaxPool(arg));
                    }
                    y
                }
                Layer::AvgPool(e) => {
                    if let Some(caches) = cache.as_deref_mut() {
                        caches.push(LayerCache::AvgPool);
                    }
                    avgpool_map(&cur, c, h, w, *e)
                }
                Layer::Dense(d) => {
                    let y = d.forward_vec(&cur);
                    if let Some(caches) = cache.as_deref_mut() {
                        caches.push(LayerCache::Dense(cur));
                    }
                    y
                }
            };
            dims = self.shapes[i];
        }
        cur
    }

    /// Accumulates the gradients of one image into `grads` (convolution
    /// weights in grid order, see [`Self::finish_gradients`]).
    fn backward_image(
        &self,
        prep: &Prepared<T>,
        caches: &[LayerCache<T>],
        grad_logits: &[T],
        grads: &mut Gradients<T>,
    ) {
        let mut g = grad_logits.to_vec();
        let mut slot = grads.tensors.len();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let [c, h, w] = if i == 0 { self.graph.input } else { self.shapes[i - 1] };
            g = match (layer, cache) {
                (Layer::Conv(rc), LayerCache::Conv(img)) => {
                    slot -= 2;
                    let (gw, rest) = grads.tensors[slot..].split_at_mut(1);
                    let mut gx = vec![T::zero(); c * h * w];
                    rc.backward_image(
                        prep.convs[i].as_ref().expect("prepared conv"),
                        img,
                        &g,
                        &mut gx,
                        &mut gw[0],
                        &mut rest[0],
                    );
                    gx
                }
                (Layer::Relu, LayerCache::Relu(out)) => relu_backward_slice(out, &g),
                (Layer::MaxPool2, LayerCache::MaxPool(arg)) => {
                    let mut gx = vec![T::zero(); c * h * w];
                    for (&a, &gv) in arg.iter().zip(&g) {
                        gx[a] += gv;
                    }
                    gx
                }
                (Layer::AvgPool(e), LayerCache::AvgPool) => avgpool_map_backward(&g, c, h, w, *e),
                (Layer::Dense(d), LayerCache::Dense(x)) => {
                    slot -= 2;
                    let (gw, rest) = grads.tensors[slot..].split_at_mut(1);
                    d.backward_vec(x, &g, &mut gw[0], &mut rest[0])
                }
                _ => unreachable!("cache recorded by the same network"),
            };
        }
    }

    /// Moves convolution weight gradients from grid to polar order.
    fn finish_gradients(&self, grads: &mut Gradients<T>) {
        let mut slot = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv(rc) => {
                    grads.tensors[slot] = rc.grid_grad_to_polar(&grads.tensors[slot]);
                    slot += 2;
                }
                Layer::Dense(_) => slot += 2,
                _ => {}
            }
        }
    }

    /// Logits `(n, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_to(x, self.layers.len())
    }

    /// Output of the first `depth` layers, e.g. the globally pooled features.
    pub fn forward_to(&self, x: &Tensor<T>, depth: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let depth = depth.min(self.layers.len());
        let prep = self.prepare();
        let n = x.shape().n;
        let [c, h, w] = if depth == 0 {
            self.graph.input
        } else {
            self.shapes[depth - 1]
        };
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            data.extend(self.forward_image(&prep, x.item(b), depth, None));
        }
        Tensor::from_vec((n, c, h, w), data)
    }

    /// Index of the global pooling layer's output, if any.
    pub fn feature_depth(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::AvgPool(_)))
            .map_or(self.layers.len(), |i| i + 1)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        (0..x.shape().n)
            .map(|b| crate::tensor::argmax(logits.item(b)))
            .collect()
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, NetworkCache<T>)> {
        self.check_input(x)?;
        let prep = self.prepare();
        let n = x.shape().n;
        let classes = self.classes();
        let mut data = Vec::with_capacity(n * classes);
        let mut images = Vec::with_capacity(n);
        for b in 0..n {
            let mut caches = Vec::with_capacity(self.layers.len());
            data.extend(self.forward_image(&prep, x.item(b), self.layers.len(), Some(&mut caches)));
            images.push(caches);
        }
        Ok((Tensor::from_vec((n, classes, 1, 1), data)?, NetworkCache { images }))
    }

    /// Parameter gradients for `grad_logits` (summed over the batch).
    pub fn backward(&self, cache: &NetworkCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let n = grad_logits.shape().n;
        if cache.images.len() != n || cache.images.iter().any(|c| c.len() != self.layers.len()) {
            return Err(Error::MissingCache);
        }
        let prep = self.prepare();
        let mut grads = self.zero_gradients();
        for (b, caches) in cache.images.iter().enumerate() {
            self.backward_image(&prep, caches, grad_logits.item(b), &mut grads);
        }
        self.finish_gradients(&mut grads);
        Ok(grads)
    }

    /// Summed loss, number correct and summed gradients over `indices` of a
    /// batch, processed in order.
    pub(crate) fn accumulate(
        &self,
        prep: &Prepared<T>,
        images: &Tensor<T>,
        labels: &[usize],
        indices: &[usize],
    ) -> Result<(f64, usize, Gradients<T>)> {
        let classes = self.classes();
        let mut grads = self.zero_gradients();
        let mut loss = 0.0;
        let mut correct = 0;
        let mut gl = vec![T::zero(); classes];
        for &i in indices {
            let mut caches = Vec::with_capacity(self.layers.len());
            let logits = self.forward_image(prep, images.item(i), self.layers.len(), Some(&mut caches));
            loss += softmax_ce_vec(&logits, labels[i], &mut gl)?.as_f64();
            if crate::tensor::argmax(&logits)? == labels[i] {
                correct += 1;
            }
            self.backward_image(prep, &caches, &gl, &mut grads);
        }
        Ok((loss, correct, grads))
    }

    pub(crate) fn finish(&self, grads: &mut Gradients<T>) {
        self.finish_gradients(grads);
    }

    /// Mean cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_gradients(&self, images: &Tensor<T>, labels: &[usize]) -> Result<(T, Gradients<T>)> {
        self.check_input(images)?;
        let n = images.shape().n;
        if labels.len() != n {
            return Err(Error::shape(format!("{n} labels"), format!("{} labels", labels.len())));
        }
        let prep = self.prepare();
        let indices: Vec<usize> = (0..n).collect();
        let (loss, _, mut grads) = self.accumulate(&prep, images, labels, &indices)?;
        self.finish_gradients(&mut grads);
        let inv = T::one() / T::of(n as f64);
        grads.scale(inv);
        Ok((T::of(loss / n as f64), grads))
    }

    /// Writes `dir/model.json` and `dir/model.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut named: Vec<(String, Tensor<T>)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    let s = c.spec();
                    named.push((
                        format!("layers.{i}.weight"),
                        Tensor::from_vec((s.out_channels, s.in_channels, 1, s.k * s.k), s.weights.clone())?,
                    ));
                    named.push((
                        format!("layers.{i}.bias"),
                        Tensor::from_vec((s.out_channels, 1, 1, 1), s.bias.clone())?,
                    ));
                }
                Layer::Dense(d) => {
                    named.push((
                        format!("layers.{i}.weight"),
                        Tensor::from_vec((d.outputs, d.inputs, 1, 1), d.weights.clone())?,
                    ));
                    named.push((
                        format!("layers.{i}.bias"),
                        Tensor::from_vec((d.outputs, 1, 1, 1), d.bias.clone())?,
                    ));
                }
                _ => {}
            }
        }
        let refs: Vec<(&str, &Tensor<T>)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let (tensors, bytes) = encode_tensors(&refs);
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            precision: T::PRECISION,
            graph: self.graph.clone(),
            tensors,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        fs::File::create(dir.join(MANIFEST_FILE))?.write_all(&json)?;
        fs::write(dir.join(DATA_FILE), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.precision != T::PRECISION {
            return Err(Error::format(
                dir.join(MANIFEST_FILE),
                format!(
                    "checkpoint holds {} parameters, expected {}",
                    manifest.precision,
                    T::PRECISION
                ),
            ));
        }
        let bytes = fs::read(dir.join(DATA_FILE))?;
        let tensors = decode_tensors::<T>(&manifest.tensors, &bytes)?;
        let mut net = Network::new(manifest.graph, 0)?;
        let params = net.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::format(
                dir.join(MANIFEST_FILE),
                format!("expected {} parameter tensors, found {}", params.len(), tensors.len()),
            ));
        }
        for (dst, (name, t)) in params.into_iter().zip(tensors) {
            if dst.len() != t.len() {
                return Err(Error::format(
                    dir.join(MANIFEST_FILE),
                    format!("tensor `{name}` has {} elements, expected {}", t.len(), dst.len()),
                ));
            }
            dst.copy_from_slice(t.data());
        }
        Ok(net)
    }
}

fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            path,
            format!("unknown checkpoint format `{}`", manifest.format),
        ));
    }
    Ok(manifest)
}

/// Precision and graph of a saved checkpoint, without loading weights.
pub fn checkpoint_info(dir: &Path) -> Result<(Precision, LayerGraph)> {
    read_manifest(dir).map(|m| (m.precision, m.graph))
}

/// Files making up a checkpoint directory, in a fixed order.
pub fn checkpoint_files(dir: &Path) -> [std::path::PathBuf; 2] {
    [dir.join(MANIFEST_FILE), dir.join(DATA_FILE)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CalibratorKind;
    use crate::polar::{rotate_tensor, RotationSpec};

    fn tiny(kind: CalibratorKind) -> LayerGraph {
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

    fn inputs(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec((n, 1, 6, 6), (0..n * 36).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_count_matches_graph() {
        for kind in CalibratorKind::ALL {
            let net = Network::<f32>::new(LayerGraph::desk(kind), 1).unwrap();
            assert_eq!(net.param_count(), net.graph().param_count());
        }
    }

    #[test]
    fn initial_loss_is_near_ln_10() {
        let net = Network::<f64>::new(LayerGraph::desk(CalibratorKind::None), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_vec((8, 1, 28, 28), (0..8 * 784).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..8).collect();
        let (loss, _) = net.loss_and_gradients(&x, &labels).unwrap();
        assert!((loss - 10f64.ln()).abs() < 0.2, "{loss}");
    }

    #[test]
    fn batch_backward_agrees_with_loss_gradients() {
        let net = Network::<f64>::new(tiny(CalibratorKind::Gd), 2).unwrap();
        let x = inputs(3, 8);
        let labels = [0, 2, 1];
        let (logits, cache) = net.forward_train(&x).unwrap();
        let (_, gl) = crate::nn::ops::softmax_cross_entropy(&logits, &labels).unwrap();
        let a = net.backward(&cache, &gl).unwrap();
        let (_, b) = net.loss_and_gradients(&x, &labels).unwrap();
        for (u, v) in a.tensors.iter().flatten().zip(b.tensors.iter().flatten()) {
            assert!((u - v).abs() < 1e-14);
        }
        let (_, short) = net.forward_train(&inputs(2, 1)).unwrap();
        assert!(matches!(net.backward(&short, &gl), Err(Error::MissingCache)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in CalibratorKind::ALL {
            let mut net = Network::<f64>::new(tiny(kind), 5).unwrap();
            let x = inputs(2, 6);
            let labels = [1, 2];
            let (_, grads) = net.loss_and_gradients(&x, &labels).unwrap();
            let h = 1e-5;
            let n_tensors = net.params().len();
            for t in 0..n_tensors {
                for i in 0..net.params()[t].len() {
                    let w0 = net.params()[t][i];
                    net.params_mut()[t][i] = w0 + h;
                    let up = net.loss_and_gradients(&x, &labels).unwrap().0;
                    net.params_mut()[t][i] = w0 - h;
                    let down = net.loss_and_gradients(&x, &labels).unwrap().0;
                    net.params_mut()[t][i] = w0;
                    let fd = (up - down) / (2.0 * h);
                    let a = grads.tensors[t][i];
                    let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-4);
                    assert!(rel <= 1e-6, "{kind} tensor {t}[{i}]: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn pooled_features_are_quarter_turn_invariant() {
        let quarter = RotationSpec::new(90.0);
        for kind in CalibratorKind::CALIBRATED {
            let net = Network::<f32>::new(tiny(kind), 7).unwrap();
            let x = inputs(2, 9).cast::<f32>();
            let depth = net.feature_depth();
            let a = net.forward_to(&x, depth).unwrap();
            let b = net.forward_to(&rotate_tensor(&x, quarter).unwrap(), depth).unwrap();
            let d = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f32::max);
            assert!(d <= 1e-4, "{kind}: {d}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::<f32>::new(LayerGraph::desk(CalibratorKind::Lbp), 11).unwrap();
        net.save(dir.path()).unwrap();
        let back = Network::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.graph(), net.graph());
        assert_eq!(back.params(), net.params());
        assert!(Network::<f64>::load(dir.path()).is_err());
        let (p, g) = checkpoint_info(dir.path()).unwrap();
        assert_eq!((p, g.calibrator), (Precision::F32, CalibratorKind::Lbp));
    }
}

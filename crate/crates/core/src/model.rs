//! A small two-layer spectral CNN trained end-to-end in the spectral domain,
//! with hand-rolled reverse-mode gradients. Complex kernels are trained as
//! independent real/imaginary scalars; gradients flow through the FFT stages
//! via their adjoints (the adjoint of the unnormalized forward FFT is the
//! unnormalized inverse).

use ndarray::{Array1, Array2, Array4, ArrayView4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::spectral::{self, ConvLayerSpec, TileSpectra};

pub const NUM_CLASSES: usize = 10;

/// spectral-conv(1->8, 5x5) -> ReLU -> 2x2 max-pool ->
/// spectral-conv(8->16, 5x5) -> ReLU -> 2x2 max-pool -> dense(10) -> softmax.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub input_size: usize,
    pub n: usize,
    pub conv1: ConvLayerSpec,
    pub conv2: ConvLayerSpec,
    pub w1: Array4<Complex64>,
    pub w2: Array4<Complex64>,
    pub dense_w: Array2<f64>,
    pub dense_b: Array1<f64>,
}

pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
const KERNEL_SIZE: usize = 5;

impl ToyModel {
    /// Feature count entering the dense layer.
    pub fn feature_len(input_size: usize) -> usize {
        CONV2_OUT * (input_size / 4) * (input_size / 4)
    }

    /// Random spatial kernels converted to the spectral domain via FFT.
    pub fn new_random(input_size: usize, n: usize, seed: u64) -> Result<Self> {
        if input_size % 4 != 0 {
            return Err(Error::Config("input size must be divisible by 4".into()));
        }
        let conv1 = ConvLayerSpec::new(1, CONV1_OUT, KERNEL_SIZE, 1, (KERNEL_SIZE - 1) / 2, n)?;
        let conv2 = ConvLayerSpec::new(CONV1_OUT, CONV2_OUT, KERNEL_SIZE, 1, (KERNEL_SIZE - 1) / 2, n)?;
        conv1.validate_for_input(input_size)?;
        conv2.validate_for_input(input_size / 2)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale1 = (2.0 / (KERNEL_SIZE * KERNEL_SIZE) as f64).sqrt();
        let spatial1 = Array4::from_shape_fn((CONV1_OUT, 1, KERNEL_SIZE, KERNEL_SIZE), |_| {
            rng.gen_range(-scale1..scale1)
        });
        let scale2 = (2.0 / (CONV1_OUT * KERNEL_SIZE * KERNEL_SIZE) as f64).sqrt();
        let spatial2 = Array4::from_shape_fn((CONV2_OUT, CONV1_OUT, KERNEL_SIZE, KERNEL_SIZE), |_| {
            rng.gen_range(-scale2..scale2)
        });
        let feat = Self::feature_len(input_size);
        let scale_d = (2.0 / feat as f64).sqrt();
        Ok(Self {
            input_size,
            n,
            conv1,
            conv2,
            w1: spectral::to_spectral_kernels(&spatial1.view(), n)?,
            w2: spectral::to_spectral_kernels(&spatial2.view(), n)?,
            dense_w: Array2::from_shape_fn((NUM_CLASSES, feat), |_| rng.gen_range(-scale_d..scale_d)),
            dense_b: Array1::zeros(NUM_CLASSES),
        })
    }

    /// Random spectral initialization (no spatial structure).
    pub fn new_random_spectral(input_size: usize, n: usize, seed: u64) -> Result<Self> {
        let mut model = Self::new_random(input_size, n, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9);
        let s = 0.3;
        model.w1.mapv_inplace(|_| Complex64::new(rng.gen_range(-s..s), rng.gen_range(-s..s)));
        model.w2.mapv_inplace(|_| Complex64::new(rng.gen_range(-s..s), rng.gen_range(-s..s)));
        Ok(model)
    }
}

/// Real-valued gradients, with the complex kernels' real/imag gradient pair
/// packed back into a complex array of the same shape.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Array4<Complex64>,
    pub w2: Array4<Complex64>,
    pub dense_w: Array2<f64>,
    pub dense_b: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            w1: Array4::zeros(model.w1.raw_dim()),
            w2: Array4::zeros(model.w2.raw_dim()),
            dense_w: Array2::zeros(model.dense_w.raw_dim()),
            dense_b: Array1::zeros(model.dense_b.raw_dim()),
        }
    }

    pub fn scaled_add(&mut self, other: &Gradients, factor: f64) {
        self.w1.zip_mut_with(&other.w1, |a, b| *a += b * factor);
        self.w2.zip_mut_with(&other.w2, |a, b| *a += b * factor);
        self.dense_w.zip_mut_with(&other.dense_w, |a, b| *a += b * factor);
        self.dense_b.zip_mut_with(&other.dense_b, |a, b| *a += b * factor);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.re.is_finite() && v.im.is_finite())
            && self.dense_w.iter().chain(self.dense_b.iter()).all(|v| v.is_finite())
    }
}

/// Activations cached by the forward pass for reuse in `backward`.
pub struct ForwardCache {
    tiles1: TileSpectra,
    tiles2: TileSpectra,
    relu_mask1: Array4<f64>,
    relu_mask2: Array4<f64>,
    pool_arg1: Array4<(usize, usize)>,
    pool_arg2: Array4<(usize, usize)>,
    pool1_dim: (usize, usize, usize, usize),
    pool2_dim: (usize, usize, usize, usize),
    features: Array2<f64>,
    probs: Array2<f64>,
}

fn relu_forward(x: &Array4<f64>) -> (Array4<f64>, Array4<f64>) {
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    (x * &mask, mask)
}

fn maxpool2_forward(x: &Array4<f64>) -> (Array4<f64>, Array4<(usize, usize)>) {
    let (b, c, h, _) = x.dim();
    let ho = h / 2;
    let mut out = Array4::<f64>::zeros((b, c, ho, ho));
    let mut arg = Array4::<(usize, usize)>::from_elem((b, c, ho, ho), (0, 0));
    for k in 0..b {
        for i in 0..c {
            for a in 0..ho {
                for bb in 0..ho {
                    let mut best = f64::NEG_INFINITY;
                    let mut pos = (0, 0);
                    for du in 0..2 {
                        for dv in 0..2 {
                            let v = x[[k, i, 2 * a + du, 2 * bb + dv]];
                            if v > best {
                                best = v;
                                pos = (2 * a + du, 2 * bb + dv);
                            }
                        }
                    }
                    out[[k, i, a, bb]] = best;
                    arg[[k, i, a, bb]] = pos;
                }
            }
        }
    }
    (out, arg)
}

fn maxpool2_backward(
    dy: &Array4<f64>,
    arg: &Array4<(usize, usize)>,
    in_dim: (usize, usize, usize, usize),
) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros(in_dim);
    let (b, c, ho, _) = dy.dim();
    for k in 0..b {
        for i in 0..c {
            for a in 0..ho {
                for bb in 0..ho {
                    let (u, v) = arg[[k, i, a, bb]];
                    dx[[k, i, u, v]] += dy[[k, i, a, bb]];
                }
            }
        }
    }
    dx
}

fn one_hot(labels: &[u8]) -> Array2<f64> {
    let mut y = Array2::<f64>::zeros((labels.len(), NUM_CLASSES));
    for (k, &l) in labels.iter().enumerate() {
        y[[k, l as usize]] = 1.0;
    }
    y
}

/// Softmax cross-entropy averaged over the batch, plus the softmax
/// probabilities.
fn softmax_ce(logits: &Array2<f64>, labels: &[u8]) -> (f64, Array2<f64>) {
    let (b, c) = logits.dim();
    let mut probs = Array2::<f64>::zeros((b, c));
    let mut loss = 0.0;
    for k in 0..b {
        let row = logits.row(k);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..c {
            probs[[k, j]] = exps[j] / sum;
        }
        loss -= (probs[[k, labels[k] as usize]]).max(1e-300).ln();
    }
    (loss / b as f64, probs)
}

/// Forward pass: returns the batch-mean softmax cross-entropy and the cache
/// needed by `backward`.
pub fn forward_loss(
    model: &ToyModel,
    batch: &ArrayView4<'_, f64>,
    labels: &[u8],
) -> Result<(f64, ForwardCache)> {
    let (b, c, h, h2) = batch.dim();
    if c != 1 || h != model.input_size || h2 != model.input_size {
        return Err(Error::Shape(format!(
            "batch is ({b},{c},{h},{h2}), model expects (*, 1, {0}, {0})",
            model.input_size
        )));
    }
    if labels.len() != b {
        return Err(Error::Shape("label count disagrees with batch".into()));
    }

    let tiles1 = spectral::fft_tiles(batch, &model.conv1)?;
    let a1 = spectral::spectral_conv_from_tiles(&tiles1, &model.w1.view(), &model.conv1)?;
    let (r1, relu_mask1) = relu_forward(&a1);
    let (p1, pool_arg1) = maxpool2_forward(&r1);

    let tiles2 = spectral::fft_tiles(&p1.view(), &model.conv2)?;
    let a2 = spectral::spectral_conv_from_tiles(&tiles2, &model.w2.view(), &model.conv2)?;
    let (r2, relu_mask2) = relu_forward(&a2);
    let (p2, pool_arg2) = maxpool2_forward(&r2);

    let feat = ToyModel::feature_len(model.input_size);
    let features = Array2::from_shape_vec((b, feat), p2.iter().copied().collect()).expect("shape");
    let logits = features.dot(&model.dense_w.t()) + &model.dense_b;
    let (loss, probs) = softmax_ce(&logits, labels);

    Ok((
        loss,
        ForwardCache {
            tiles1,
            tiles2,
            relu_mask1,
            relu_mask2,
            pool_arg1,
            pool_arg2,
            pool1_dim: r1.dim(),
            pool2_dim: r2.dim(),
            features,
            probs,
        },
    ))
}

/// Class predictions for a batch.
pub fn predict(model: &ToyModel, batch: &ArrayView4<'_, f64>) -> Result<Vec<u8>> {
    let b = batch.dim().0;
    let labels = vec![0u8; b];
    let (_, cache) = forward_loss(model, batch, &labels)?;
    Ok(cache
        .probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j as u8)
                .unwrap()
        })
        .collect())
}

pub fn accuracy(model: &ToyModel, images: &ArrayView4<'_, f64>, labels: &[u8]) -> Result<f64> {
    let mut correct = 0usize;
    let total = labels.len();
    let chunk = 64;
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        let batch = images.slice(ndarray::s![start..end, .., .., ..]);
        let preds = predict(model, &batch)?;
        correct += preds.iter().zip(&labels[start..end]).filter(|(p, l)| p == l).count();
        start = end;
    }
    Ok(correct as f64 / total as f64)
}

/// Adjoint of the spectral convolution: given the loss gradient at the layer
/// output, produce the packed complex kernel gradient and (optionally) the
/// gradient at the layer input.
fn spectral_conv_backward(
    dy: &Array4<f64>,
    tiles: &TileSpectra,
    w_spec: &Array4<Complex64>,
    layer: &ConvLayerSpec,
    need_dx: bool,
) -> Result<(Array4<Complex64>, Option<Array4<f64>>)> {
    let b = tiles.b;
    let c_in = tiles.c;
    let c_out = layer.c_out;
    let h = tiles.h_act;
    let n = layer.n;
    let m = layer.tile_step();
    let t_count = tiles.t_count;
    let offset = layer.h_krn - 1 - layer.padding;
    let h_out = layer.output_size(h);
    let buf_size = (t_count - 1) * m + n;
    let inv_n2 = 1.0 / (n * n) as f64;

    // per-example partial results, reduced in index order below
    let partials = par::try_map_indexed(b, |k| {
        let mut dw = Array4::<Complex64>::zeros((c_out, c_in, n, n));
        let mut dx = if need_dx { Some(Array2::<f64>::zeros((h, h))) } else { None };
        let mut dx_full = if need_dx {
            Some(Array4::<f64>::zeros((1, c_in, h, h)))
        } else {
            None
        };
        let _ = &mut dx;

        // adjoint of crop + stride: scatter dy into the assembly buffer
        let mut dfull = vec![Array2::<f64>::zeros((buf_size, buf_size)); c_out];
        for j in 0..c_out {
            for a in 0..h_out {
                for bb in 0..h_out {
                    dfull[j][[offset + a * layer.stride, offset + bb * layer.stride]] =
                        dy[[k, j, a, bb]];
                }
            }
        }

        for t in 0..t_count {
            for s in 0..t_count {
                // adjoint of overlap-add: each tile reads its n x n window;
                // adjoint of Re(ifft2): scaled forward FFT of the window
                let mut g = Vec::with_capacity(c_out);
                for df in dfull.iter() {
                    let window = df.slice(ndarray::s![t * m..t * m + n, s * m..s * m + n]);
                    let mut gj = spectral::fft2_real(&window.to_owned().view())?;
                    gj.mapv_inplace(|v| v * inv_n2);
                    g.push(gj);
                }
                for i in 0..c_in {
                    let xt = tiles.get(k, i, t, s);
                    for (j, gj) in g.iter().enumerate() {
                        let mut dw_ji = dw.slice_mut(ndarray::s![j, i, .., ..]);
                        for u in 0..n {
                            for v in 0..n {
                                dw_ji[[u, v]] += gj[[u, v]] * xt[[u, v]].conj();
                            }
                        }
                    }
                    if let Some(dxf) = dx_full.as_mut() {
                        // gradient w.r.t. the tile spectrum, then back to space
                        let mut dxt = Array2::<Complex64>::zeros((n, n));
                        for (j, gj) in g.iter().enumerate() {
                            let wk = w_spec.slice(ndarray::s![j, i, .., ..]);
                            for u in 0..n {
                                for v in 0..n {
                                    dxt[[u, v]] += gj[[u, v]] * wk[[u, v]].conj();
                                }
                            }
                        }
                        // adjoint of the zero-padded forward FFT: unnormalized
                        // inverse, real part, top-left m x m window
                        let mut back = spectral::ifft2(&dxt.view())?;
                        back.mapv_inplace(|v| v * (n * n) as f64);
                        let r0 = t * m;
                        let c0 = s * m;
                        let rl = m.min(h.saturating_sub(r0));
                        let cl = m.min(h.saturating_sub(c0));
                        for u in 0..rl {
                            for v in 0..cl {
                                dxf[[0, i, r0 + u, c0 + v]] += back[[u, v]].re;
                            }
                        }
                    }
                }
            }
        }
        Ok::<_, Error>((dw, dx_full))
    })?;

    let mut dw = Array4::<Complex64>::zeros((c_out, c_in, n, n));
    let mut dx = if need_dx { Some(Array4::<f64>::zeros((b, c_in, h, h))) } else { None };
    for (k, (dwk, dxk)) in partials.into_iter().enumerate() {
        dw.zip_mut_with(&dwk, |a, v| *a += v);
        if let (Some(dx), Some(dxk)) = (dx.as_mut(), dxk) {
            dx.slice_mut(ndarray::s![k, .., .., ..]).assign(&dxk.slice(ndarray::s![0, .., .., ..]));
        }
    }
    Ok((dw, dx))
}

/// Reverse-mode gradients of the batch-mean loss for every parameter.
pub fn backward(
    model: &ToyModel,
    labels: &[u8],
    cache: &ForwardCache,
) -> Result<Gradients> {
    let b = labels.len();
    let dlogits = (&cache.probs - &one_hot(labels)) / b as f64;

    let dense_w = dlogits.t().dot(&cache.features);
    let dense_b = dlogits.sum_axis(ndarray::Axis(0));
    let dfeatures = dlogits.dot(&model.dense_w);

    let (pb, pc, ph, pw) = (
        cache.pool2_dim.0,
        cache.pool2_dim.1,
        cache.pool2_dim.2 / 2,
        cache.pool2_dim.3 / 2,
    );
    let dp2 = Array4::from_shape_vec((pb, pc, ph, pw), dfeatures.iter().copied().collect())
        .expect("shape");
    let dr2 = maxpool2_backward(&dp2, &cache.pool_arg2, cache.pool2_dim);
    let da2 = &dr2 * &cache.relu_mask2;
    let (dw2, dp1) = spectral_conv_backward(&da2, &cache.tiles2, &model.w2, &model.conv2, true)?;

    let dp1 = dp1.expect("dx requested");
    let dr1 = maxpool2_backward(&dp1, &cache.pool_arg1, cache.pool1_dim);
    let da1 = &dr1 * &cache.relu_mask1;
    let (dw1, _) = spectral_conv_backward(&da1, &cache.tiles1, &model.w1, &model.conv1, false)?;

    Ok(Gradients { w1: dw1, w2: dw2, dense_w, dense_b })
}

#[derive(Serialize, Deserialize)]
struct ComplexArrayFile {
    dims: [usize; 4],
    re: Vec<f64>,
    im: Vec<f64>,
}

fn complex_to_file(a: &Array4<Complex64>) -> ComplexArrayFile {
    let d = a.dim();
    ComplexArrayFile {
        dims: [d.0, d.1, d.2, d.3],
        re: a.iter().map(|v| v.re).collect(),
        im: a.iter().map(|v| v.im).collect(),
    }
}

fn complex_from_file(f: &ComplexArrayFile) -> Result<Array4<Complex64>> {
    let data: Vec<Complex64> =
        f.re.iter().zip(&f.im).map(|(&r, &i)| Complex64::new(r, i)).collect();
    Array4::from_shape_vec((f.dims[0], f.dims[1], f.dims[2], f.dims[3]), data)
        .map_err(|e| Error::Format(format!("bad kernel dims: {e}")))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_size: usize,
    n: usize,
    w1: ComplexArrayFile,
    w2: ComplexArrayFile,
    dense_dims: [usize; 2],
    dense_w: Vec<f64>,
    dense_b: Vec<f64>,
}

pub fn save_model(model: &ToyModel, path: &std::path::Path) -> Result<()> {
    let file = ModelFile {
        input_size: model.input_size,
        n: model.n,
        w1: complex_to_file(&model.w1),
        w2: complex_to_file(&model.w2),
        dense_dims: [model.dense_w.dim().0, model.dense_w.dim().1],
        dense_w: model.dense_w.iter().copied().collect(),
        dense_b: model.dense_b.to_vec(),
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ToyModel> {
    let json = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("bad model file: {e}")))?;
    let mut model = ToyModel::new_random(file.input_size, file.n, 0)?;
    model.w1 = complex_from_file(&file.w1)?;
    model.w2 = complex_from_file(&file.w2)?;
    model.dense_w =
        Array2::from_shape_vec((file.dense_dims[0], file.dense_dims[1]), file.dense_w)
            .map_err(|e| Error::Format(format!("bad dense dims: {e}")))?;
    model.dense_b = Array1::from_vec(file.dense_b);
    Ok(model)
}

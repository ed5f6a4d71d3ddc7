//! Spectral convolution via 2D FFT with Overlap-and-Add tiling, plus a direct
//! sliding-window oracle used for verification.
//!
//! Both the spectral path and the oracle compute *true* convolution (the FFT's
//! native semantics, kernel flipped relative to cross-correlation). Kernels
//! trained under a cross-correlation convention must be pre-flipped by the
//! caller. The forward FFT is unnormalized; the `1/n^2` factor lives entirely
//! in `ifft2`.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::par;

/// Per-layer convolution geometry. `m = n - h_krn + 1` is the tile step of the
/// Overlap-and-Add decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub h_krn: usize,
    pub stride: usize,
    pub padding: usize,
    pub n: usize,
}

impl ConvLayerSpec {
    pub fn new(
        c_in: usize,
        c_out: usize,
        h_krn: usize,
        stride: usize,
        padding: usize,
        n: usize,
    ) -> Result<Self> {
        let spec = Self { c_in, c_out, h_krn, stride, padding, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(self.n));
        }
        if self.c_in == 0 || self.c_out == 0 || self.h_krn == 0 || self.stride == 0 {
            return Err(Error::Shape("layer dimensions must be >= 1".into()));
        }
        if self.n < self.h_krn {
            return Err(Error::FftSizeRange { n: self.n, lo: self.h_krn, hi: usize::MAX });
        }
        if self.padding > self.h_krn - 1 {
            return Err(Error::Shape(format!(
                "padding {} exceeds h_krn-1 = {}",
                self.padding,
                self.h_krn - 1
            )));
        }
        Ok(())
    }

    /// Tile step of the OaA decomposition.
    pub fn tile_step(&self) -> usize {
        self.n - self.h_krn + 1
    }

    /// Number of tiles along one spatial dimension for an `h_act` input.
    pub fn tiles_per_dim(&self, h_act: usize) -> usize {
        h_act.div_ceil(self.tile_step())
    }

    /// Output spatial size for an `h_act` input, by the standard convolution
    /// size formula.
    pub fn output_size(&self, h_act: usize) -> usize {
        (h_act + 2 * self.padding - self.h_krn) / self.stride + 1
    }

    /// Checks `h_krn <= n <= h_act + h_krn - 1`.
    pub fn validate_for_input(&self, h_act: usize) -> Result<()> {
        self.validate()?;
        let hi = h_act + self.h_krn - 1;
        if self.n > hi {
            return Err(Error::FftSizeRange { n: self.n, lo: self.h_krn, hi });
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, dir))
}

fn fft2_dir(mat: &ArrayView2<'_, Complex64>, dir: FftDirection) -> Result<Array2<Complex64>> {
    let (rows, cols) = mat.dim();
    if rows != cols {
        return Err(Error::Shape(format!("fft2 needs a square matrix, got {rows}x{cols}")));
    }
    let n = rows;
    if !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    let fft = plan(n, dir);
    let mut buf: Vec<Complex64> = mat.iter().copied().collect();
    // row pass
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    // column pass via explicit transpose
    let mut t = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            t[c * n + r] = buf[r * n + c];
        }
    }
    for row in t.chunks_exact_mut(n) {
        fft.process(row);
    }
    for r in 0..n {
        for c in 0..n {
            buf[r * n + c] = t[c * n + r];
        }
    }
    Ok(Array2::from_shape_vec((n, n), buf).expect("shape"))
}

/// Unnormalized 2D DFT of a square power-of-two matrix.
pub fn fft2(mat: &ArrayView2<'_, Complex64>) -> Result<Array2<Complex64>> {
    fft2_dir(mat, FftDirection::Forward)
}

/// Inverse 2D DFT with the `1/n^2` normalization.
pub fn ifft2(spec: &ArrayView2<'_, Complex64>) -> Result<Array2<Complex64>> {
    let n = spec.dim().0;
    let mut out = fft2_dir(spec, FftDirection::Inverse)?;
    let scale = 1.0 / (n * n) as f64;
    out.mapv_inplace(|v| v * scale);
    Ok(out)
}

/// `fft2` of a real matrix.
pub fn fft2_real(mat: &ArrayView2<'_, f64>) -> Result<Array2<Complex64>> {
    let c = mat.mapv(|v| Complex64::new(v, 0.0));
    fft2(&c.view())
}

/// Direct sliding-window 2D convolution (true convolution: the kernel is
/// flipped relative to cross-correlation), summed over input channels.
///
/// `x` is `(b, c_in, h, h)`, `w` is `(c_out, c_in, h_krn, h_krn)`.
pub fn spatial_conv_oracle(
    x: &ArrayView4<'_, f64>,
    w: &ArrayView4<'_, f64>,
    stride: usize,
    padding: usize,
) -> Result<Array4<f64>> {
    let (b, c_in, h, h2) = x.dim();
    let (c_out, c_in_w, hk, hk2) = w.dim();
    if h != h2 || hk != hk2 {
        return Err(Error::Shape("non-square input or kernel".into()));
    }
    if c_in != c_in_w {
        return Err(Error::Shape(format!("channel mismatch: input {c_in}, kernel {c_in_w}")));
    }
    if h + 2 * padding < hk {
        return Err(Error::Shape("input smaller than kernel".into()));
    }
    let h_out = (h + 2 * padding - hk) / stride + 1;
    let mut y = Array4::<f64>::zeros((b, c_out, h_out, h_out));
    for k in 0..b {
        for j in 0..c_out {
            for a in 0..h_out {
                for bb in 0..h_out {
                    let mut acc = 0.0;
                    for i in 0..c_in {
                        for u in 0..hk {
                            for v in 0..hk {
                                // padded input coordinate, kernel flipped
                                let xi = a * stride + u;
                                let xj = bb * stride + v;
                                if xi < padding || xj < padding {
                                    continue;
                                }
                                let (xi, xj) = (xi - padding, xj - padding);
                                if xi >= h || xj >= h {
                                    continue;
                                }
                                acc += x[[k, i, xi, xj]] * w[[j, i, hk - 1 - u, hk - 1 - v]];
                            }
                        }
                    }
                    y[[k, j, a, bb]] = acc;
                }
            }
        }
    }
    Ok(y)
}

/// Zero-pads each `h_krn x h_krn` kernel to `n x n` and applies `fft2` per
/// (output, input) channel pair.
pub fn to_spectral_kernels(w: &ArrayView4<'_, f64>, n: usize) -> Result<Array4<Complex64>> {
    let (c_out, c_in, hk, hk2) = w.dim();
    if hk != hk2 {
        return Err(Error::Shape("non-square kernel".into()));
    }
    if hk > n {
        return Err(Error::Shape(format!("kernel size {hk} exceeds FFT size {n}")));
    }
    if !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    let mut out = Array4::<Complex64>::zeros((c_out, c_in, n, n));
    for j in 0..c_out {
        for i in 0..c_in {
            let mut padded = Array2::<f64>::zeros((n, n));
            padded.slice_mut(ndarray::s![..hk, ..hk]).assign(&w.slice(ndarray::s![j, i, .., ..]));
            let spec = fft2_real(&padded.view())?;
            out.slice_mut(ndarray::s![j, i, .., ..]).assign(&spec);
        }
    }
    Ok(out)
}

/// Spectra of the zero-padded OaA tiles of a batch of activation maps:
/// `tiles[(k, i, t, s)]` is the `n x n` FFT of tile `(t, s)` of image `k`,
/// channel `i`.
pub struct TileSpectra {
    pub b: usize,
    pub c: usize,
    pub t_count: usize,
    pub n: usize,
    pub h_act: usize,
    data: Vec<Array2<Complex64>>,
}

impl TileSpectra {
    pub fn get(&self, k: usize, i: usize, t: usize, s: usize) -> &Array2<Complex64> {
        &self.data[((k * self.c + i) * self.t_count + t) * self.t_count + s]
    }
}

/// Extract tile `(t, s)` of step `m` from `img`, zero-padded to `n x n`.
/// Tiles past the image edge are zero-filled.
pub fn extract_tile(img: &ArrayView2<'_, f64>, t: usize, s: usize, m: usize, n: usize) -> Array2<f64> {
    let h = img.dim().0;
    let mut tile = Array2::<f64>::zeros((n, n));
    let r0 = t * m;
    let c0 = s * m;
    let rl = m.min(h.saturating_sub(r0));
    let cl = m.min(h.saturating_sub(c0));
    if rl > 0 && cl > 0 {
        tile.slice_mut(ndarray::s![..rl, ..cl])
            .assign(&img.slice(ndarray::s![r0..r0 + rl, c0..c0 + cl]));
    }
    tile
}

/// FFT every OaA tile of every (image, channel) map. Parallel over the
/// (batch, channel) pairs.
pub fn fft_tiles(x: &ArrayView4<'_, f64>, layer: &ConvLayerSpec) -> Result<TileSpectra> {
    let (b, c, h, h2) = x.dim();
    if h != h2 {
        return Err(Error::Shape("non-square activation".into()));
    }
    layer.validate_for_input(h)?;
    let m = layer.tile_step();
    let n = layer.n;
    let t_count = layer.tiles_per_dim(h);
    let per_map = par::try_map_indexed(b * c, |ki| {
        let (k, i) = (ki / c, ki % c);
        let img = x.slice(ndarray::s![k, i, .., ..]);
        let mut out = Vec::with_capacity(t_count * t_count);
        for t in 0..t_count {
            for s in 0..t_count {
                let tile = extract_tile(&img, t, s, m, n);
                out.push(fft2_real(&tile.view())?);
            }
        }
        Ok::<_, Error>(out)
    })?;
    let data = per_map.into_iter().flatten().collect();
    Ok(TileSpectra { b, c, t_count, n, h_act: h, data })
}

/// Overlap-add assembly: each output tile (real `n x n`) is placed at
/// `(t*m, s*m)` and overlapping pixels are summed; the result is cropped to
/// the full-convolution size `h_act + h_krn - 1`.
pub fn overlap_add(tiles: &[Array2<f64>], t_count: usize, m: usize, n: usize, h_full: usize) -> Array2<f64> {
    let buf_size = (t_count - 1) * m + n;
    let mut buf = Array2::<f64>::zeros((buf_size, buf_size));
    for t in 0..t_count {
        for s in 0..t_count {
            let tile = &tiles[t * t_count + s];
            let mut window = buf.slice_mut(ndarray::s![t * m..t * m + n, s * m..s * m + n]);
            window += tile;
        }
    }
    buf.slice(ndarray::s![..h_full, ..h_full]).to_owned()
}

/// Crop the full-convolution result for the layer's padding and slice for its
/// stride (crop first, then slice).
pub fn crop_stride(full: &ArrayView2<'_, f64>, layer: &ConvLayerSpec, h_act: usize) -> Array2<f64> {
    let offset = layer.h_krn - 1 - layer.padding;
    let h_out = layer.output_size(h_act);
    let mut out = Array2::<f64>::zeros((h_out, h_out));
    for a in 0..h_out {
        for bb in 0..h_out {
            out[[a, bb]] = full[[offset + a * layer.stride, offset + bb * layer.stride]];
        }
    }
    out
}

/// Spectral convolution via Overlap-and-Add. `w_spec` holds the `n`-point
/// FFTs of the zero-padded kernels (possibly pruned). Returns the real part
/// of the assembled output, cropped and strided per the layer spec.
pub fn spectral_conv(
    x: &ArrayView4<'_, f64>,
    w_spec: &ArrayView4<'_, Complex64>,
    layer: &ConvLayerSpec,
) -> Result<Array4<f64>> {
    let (_, c_in, _, _) = x.dim();
    let (c_out, c_in_w, wn, wn2) = w_spec.dim();
    if c_in != layer.c_in || c_in_w != layer.c_in || c_out != layer.c_out {
        return Err(Error::Shape("channel counts disagree with layer spec".into()));
    }
    if wn != layer.n || wn2 != layer.n {
        return Err(Error::Shape("spectral kernel size disagrees with layer n".into()));
    }
    let tiles = fft_tiles(x, layer)?;
    spectral_conv_from_tiles(&tiles, w_spec, layer)
}

/// Same as [`spectral_conv`] but starting from pre-computed tile spectra.
pub fn spectral_conv_from_tiles(
    tiles: &TileSpectra,
    w_spec: &ArrayView4<'_, Complex64>,
    layer: &ConvLayerSpec,
) -> Result<Array4<f64>> {
    let b = tiles.b;
    let c_in = tiles.c;
    let c_out = layer.c_out;
    let h = tiles.h_act;
    let n = layer.n;
    let m = layer.tile_step();
    let t_count = tiles.t_count;
    let h_full = h + layer.h_krn - 1;
    let h_out = layer.output_size(h);

    let maps = par::try_map_indexed(b * c_out, |kj| {
        let (k, j) = (kj / c_out, kj % c_out);
        let mut out_tiles = Vec::with_capacity(t_count * t_count);
        for t in 0..t_count {
            for s in 0..t_count {
                let mut acc = Array2::<Complex64>::zeros((n, n));
                // fixed reduction order over input channels
                for i in 0..c_in {
                    let xt = tiles.get(k, i, t, s);
                    let wk = w_spec.slice(ndarray::s![j, i, .., ..]);
                    acc.zip_mut_with(&(xt * &wk), |a, v| *a += v);
                }
                let spatial = ifft2(&acc.view())?;
                out_tiles.push(spatial.mapv(|v| v.re));
            }
        }
        let full = overlap_add(&out_tiles, t_count, m, n, h_full);
        Ok::<_, Error>(crop_stride(&full.view(), layer, h))
    })?;

    let mut y = Array4::<f64>::zeros((b, c_out, h_out, h_out));
    for (kj, map) in maps.into_iter().enumerate() {
        let (k, j) = (kj / c_out, kj % c_out);
        y.slice_mut(ndarray::s![k, j, .., ..]).assign(&map);
    }
    Ok(y)
}

/// Real multiplications for direct spatial convolution of one layer.
pub fn spatial_mac_count(c_in: usize, c_out: usize, h_act: usize, h_krn: usize, stride: usize, padding: usize) -> u64 {
    let h_out = (h_act + 2 * padding - h_krn) / stride + 1;
    (c_in * c_out * h_out * h_out * h_krn * h_krn) as u64
}

/// Complex multiplications for the Hadamard stage of OaA spectral convolution
/// of one layer (FFT/IFFT work excluded).
pub fn spectral_cmac_count(c_in: usize, c_out: usize, h_act: usize, h_krn: usize, n: usize) -> u64 {
    let m = n - h_krn + 1;
    let tiles = h_act.div_ceil(m);
    (tiles * tiles * c_in * c_out * n * n) as u64
}

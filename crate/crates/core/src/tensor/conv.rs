//! 2-D convolution and transposed convolution.
//!
//! Both layers share one convolution geometry: a transposed convolution is
//! the data-gradient of the convolution that maps its output back onto its
//! input. Work is split into (sample, output-row band) units; each unit runs
//! an im2col product through `matrixmultiply`, and partial results are
//! reduced in unit order so values do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Column count a work unit aims for (`rows * output width`).
const TILE_COLUMNS: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, no padding, no dilation.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    fn check(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_size == 0
            || self.stride == 0
            || self.dilation == 0
        {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        Ok(())
    }

    /// Extent covered by one kernel application.
    fn span(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    /// `floor((in + 2 pad - dilation (k - 1) - 1) / stride) + 1`.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        self.check()?;
        let padded = input + 2 * self.padding;
        if padded < self.span() {
            return Err(Error::Config(format!(
                "input extent {input} too small for {self:?}"
            )));
        }
        Ok((padded - self.span()) / self.stride + 1)
    }

    /// `(in - 1) stride - 2 pad + dilation (k - 1) + 1`.
    pub fn transpose_output_size(&self, input: usize) -> Result<usize> {
        self.check()?;
        if input == 0 {
            return Err(Error::Config("empty transposed-convolution input".into()));
        }
        let full = (input - 1) * self.stride + self.span();
        if full <= 2 * self.padding {
            return Err(Error::Config(format!(
                "padding of {self:?} consumes the whole output for input extent {input}"
            )));
        }
        Ok(full - 2 * self.padding)
    }

    /// Convolution weights are `(out, in, k, k)`.
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel_size;
        [self.out_channels, self.in_channels, k, k]
    }

    /// Transposed-convolution weights are `(in, out, k, k)`, the same tensor
    /// the adjoint convolution would use.
    pub fn transpose_weight_shape(&self) -> [usize; 4] {
        let k = self.kernel_size;
        [self.in_channels, self.out_channels, k, k]
    }

    /// Weights plus one bias per output channel.
    pub fn parameter_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_size * self.kernel_size
            + self.out_channels
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    h_out: usize,
    w_out: usize,
    k: usize,
    s: usize,
    p: usize,
    d: usize,
}

#[derive(Clone, Copy)]
struct Unit {
    sample: usize,
    r0: usize,
    r1: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn in_plane(&self) -> usize {
        self.h_in * self.w_in
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }

    fn units(&self) -> Vec<Unit> {
        let rows = (TILE_COLUMNS / self.w_out).max(1);
        let mut units = Vec::new();
        for sample in 0..self.batch {
            let mut r0 = 0;
            while r0 < self.h_out {
                let r1 = (r0 + rows).min(self.h_out);
                units.push(Unit { sample, r0, r1 });
                r0 = r1;
            }
        }
        units
    }

    /// Output columns `[lo, hi)` whose tap `offset` lands inside `0..extent`.
    fn valid_range(&self, offset: isize, extent: usize, outputs: usize) -> (usize, usize) {
        let s = self.s as isize;
        // out * s + offset >= 0
        let lo = if offset >= 0 {
            0
        } else {
            (-offset + s - 1) / s
        };
        // out * s + offset <= extent - 1
        let last = extent as isize - 1 - offset;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = (lo as usize).min(outputs);
        let hi = (hi as usize).min(outputs).max(lo);
        (lo, hi)
    }

    fn im2col<T: Float>(&self, x: &[T], unit: Unit, col: &mut [T]) {
        let ncols = (unit.r1 - unit.r0) * self.w_out;
        for ic in 0..self.c_in {
            let plane = &x[ic * self.in_plane()..(ic + 1) * self.in_plane()];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ic * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * ncols..(row + 1) * ncols];
                    let x_off = (kx * self.d) as isize - self.p as isize;
                    let (lo, hi) = self.valid_range(x_off, self.w_in, self.w_out);
                    for oy in unit.r0..unit.r1 {
                        let seg = &mut dst[(oy - unit.r0) * self.w_out..][..self.w_out];
                        let iy = (oy * self.s + ky * self.d) as isize - self.p as isize;
                        if iy < 0 || iy >= self.h_in as isize {
                            seg.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w_in..][..self.w_in];
                        seg[..lo].fill(T::zero());
                        seg[hi..].fill(T::zero());
                        if self.s == 1 {
                            let start = (lo as isize + x_off) as usize;
                            seg[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (ox, v) in seg[lo..hi].iter_mut().enumerate() {
                                *v = src[((ox + lo) as isize * self.s as isize + x_off) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Input rows touched by a unit.
    fn band(&self, unit: Unit) -> (usize, usize) {
        let lo = (unit.r0 * self.s).saturating_sub(self.p);
        let hi = ((unit.r1 - 1) * self.s + self.d * (self.k - 1) + 1)
            .saturating_sub(self.p)
            .min(self.h_in);
        (lo, hi.max(lo))
    }

    /// Scatter-adds `col` into `band`, which holds input rows `band_lo..`.
    fn col2im<T: Float>(
        &self,
        col: &[T],
        unit: Unit,
        band: &mut [T],
        band_lo: usize,
        band_rows: usize,
    ) {
        let ncols = (unit.r1 - unit.r0) * self.w_out;
        for ic in 0..self.c_in {
            let plane = &mut band[ic * band_rows * self.w_in..(ic + 1) * band_rows * self.w_in];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ic * self.k + ky) * self.k + kx;
                    let src = &col[row * ncols..(row + 1) * ncols];
                    let x_off = (kx * self.d) as isize - self.p as isize;
                    let (lo, hi) = self.valid_range(x_off, self.w_in, self.w_out);
                    for oy in unit.r0..unit.r1 {
                        let iy = (oy * self.s + ky * self.d) as isize - self.p as isize;
                        if iy < 0 || iy >= self.h_in as isize {
                            continue;
                        }
                        let seg = &src[(oy - unit.r0) * self.w_out..][..self.w_out];
                        let dst = &mut plane[(iy as usize - band_lo) * self.w_in..][..self.w_in];
                        for ox in lo..hi {
                            let ix = (ox as isize * self.s as isize + x_off) as usize;
                            dst[ix] += seg[ox];
                        }
                    }
                }
            }
        }
    }

    /// `y = W * x` without bias. `w` is `(c_out, c_in, k, k)`.
    fn forward<T: Float>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let patch = self.patch();
        let units = self.units();
        let tiles: Vec<Vec<T>> = units
            .par_iter()
            .map(|&unit| {
                let ncols = (unit.r1 - unit.r0) * self.w_out;
                let mut col = vec![T::zero(); patch * ncols];
                let sample =
                    &x[unit.sample * self.c_in * self.in_plane()..][..self.c_in * self.in_plane()];
                self.im2col(sample, unit, &mut col);
                let mut out = vec![T::zero(); self.c_out * ncols];
                // SAFETY: buffers sized c_out x patch, patch x ncols, c_out x ncols.
                unsafe {
                    T::gemm(
                        self.c_out,
                        patch,
                        ncols,
                        w.as_ptr(),
                        patch as isize,
                        1,
                        col.as_ptr(),
                        ncols as isize,
                        1,
                        T::zero(),
                        out.as_mut_ptr(),
                        ncols as isize,
                        1,
                    );
                }
                out
            })
            .collect();

        let mut y = vec![T::zero(); self.batch * self.c_out * self.out_plane()];
        for (unit, tile) in units.iter().zip(tiles) {
            let ncols = (unit.r1 - unit.r0) * self.w_out;
            for oc in 0..self.c_out {
                let base =
                    (unit.sample * self.c_out + oc) * self.out_plane() + unit.r0 * self.w_out;
                y[base..base + ncols].copy_from_slice(&tile[oc * ncols..(oc + 1) * ncols]);
            }
        }
        y
    }

    /// Adjoint of [`Geometry::forward`] in `x`.
    fn backward_data<T: Float>(&self, gy: &[T], w: &[T]) -> Vec<T> {
        let patch = self.patch();
        let units = self.units();
        let bands: Vec<(usize, Vec<T>)> = units
            .par_iter()
            .map(|&unit| {
                let ncols = (unit.r1 - unit.r0) * self.w_out;
                let mut dcol = vec![T::zero(); patch * ncols];
                let gy_tile =
                    &gy[unit.sample * self.c_out * self.out_plane() + unit.r0 * self.w_out..];
                // SAFETY: W^T is patch x c_out via swapped strides; the gy tile
                // spans c_out rows of ncols with channel stride out_plane.
                unsafe {
                    T::gemm(
                        patch,
                        self.c_out,
                        ncols,
                        w.as_ptr(),
                        1,
                        patch as isize,
                        gy_tile.as_ptr(),
                        self.out_plane() as isize,
                        1,
                        T::zero(),
                        dcol.as_mut_ptr(),
                        ncols as isize,
                        1,
                    );
                }
                let (lo, hi) = self.band(unit);
                let rows = hi - lo;
                let mut band = vec![T::zero(); self.c_in * rows * self.w_in];
                if rows > 0 {
                    self.col2im(&dcol, unit, &mut band, lo, rows);
                }
                (lo, band)
            })
            .collect();

        let mut gx = vec![T::zero(); self.batch * self.c_in * self.in_plane()];
        for (unit, (lo, band)) in units.iter().zip(bands) {
            let rows = band.len() / (self.c_in * self.w_in);
            if rows == 0 {
                continue;
            }
            for ic in 0..self.c_in {
                let dst = &mut gx
                    [(unit.sample * self.c_in + ic) * self.in_plane() + lo * self.w_in..]
                    [..rows * self.w_in];
                let src = &band[ic * rows * self.w_in..(ic + 1) * rows * self.w_in];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        gx
    }

    /// Gradient of `forward` in `w`, shaped `(c_out, c_in, k, k)`.
    fn backward_filter<T: Float>(&self, x: &[T], gy: &[T]) -> Vec<T> {
        let patch = self.patch();
        let units = self.units();
        let parts: Vec<Vec<T>> = units
            .par_iter()
            .map(|&unit| {
                let ncols = (unit.r1 - unit.r0) * self.w_out;
                let mut col = vec![T::zero(); patch * ncols];
                let sample =
                    &x[unit.sample * self.c_in * self.in_plane()..][..self.c_in * self.in_plane()];
                self.im2col(sample, unit, &mut col);
                let gy_tile =
                    &gy[unit.sample * self.c_out * self.out_plane() + unit.r0 * self.w_out..];
                let mut part = vec![T::zero(); self.c_out * patch];
                // SAFETY: gy tile is c_out x ncols, col^T is ncols x patch.
                unsafe {
                    T::gemm(
                        self.c_out,
                        ncols,
                        patch,
                        gy_tile.as_ptr(),
                        self.out_plane() as isize,
                        1,
                        col.as_ptr(),
                        1,
                        ncols as isize,
                        T::zero(),
                        part.as_mut_ptr(),
                        patch as isize,
                        1,
                    );
                }
                part
            })
            .collect();

        let mut gw = vec![T::zero(); self.c_out * patch];
        for part in parts {
            for (g, p) in gw.iter_mut().zip(part) {
                *g += p;
            }
        }
        gw
    }
}

fn channel_sums<T: Float>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = g.dims4()?;
    let plane = h * w;
    let mut sums = vec![T::zero(); c];
    for b in 0..n {
        for (ch, sum) in sums.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            for &v in &g.data()[start..start + plane] {
                *sum += v;
            }
        }
    }
    Tensor::new([c], sums)
}

fn add_bias<T: Float>(y: &mut [T], bias: &[T], plane: usize) {
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[i % bias.len()];
        for v in chunk {
            *v += b;
        }
    }
}

fn check_operands<T: Float>(
    op: &str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    channels: usize,
    weight_shape: [usize; 4],
    bias_len: usize,
) -> Result<[usize; 4]> {
    let dims = input.dims4()?;
    if dims[1] != channels {
        return Err(Error::Config(format!(
            "{op}: input shape {:?} has {} channels, layer expects {channels}",
            input.shape(),
            dims[1]
        )));
    }
    if weight.shape() != weight_shape {
        return Err(Error::Config(format!(
            "{op}: weight shape {:?} does not match expected {:?}",
            weight.shape(),
            weight_shape
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [bias_len] {
            return Err(Error::Config(format!(
                "{op}: bias shape {:?} does not match expected [{bias_len}]",
                bias.shape()
            )));
        }
    }
    Ok(dims)
}

fn conv_geometry(spec: &ConvSpec, dims: [usize; 4]) -> Result<Geometry> {
    let [n, c, h, w] = dims;
    Ok(Geometry {
        batch: n,
        c_in: c,
        h_in: h,
        w_in: w,
        c_out: spec.out_channels,
        h_out: spec.output_size(h)?,
        w_out: spec.output_size(w)?,
        k: spec.kernel_size,
        s: spec.stride,
        p: spec.padding,
        d: spec.dilation,
    })
}

/// The convolution whose data-gradient is the transposed convolution `spec`
/// applied to an input of `dims`.
fn transpose_geometry(spec: &ConvSpec, dims: [usize; 4]) -> Result<Geometry> {
    let [n, c, h, w] = dims;
    Ok(Geometry {
        batch: n,
        c_in: spec.out_channels,
        h_in: spec.transpose_output_size(h)?,
        w_in: spec.transpose_output_size(w)?,
        c_out: c,
        h_out: h,
        w_out: w,
        k: spec.kernel_size,
        s: spec.stride,
        p: spec.padding,
        d: spec.dilation,
    })
}

#[derive(Clone, Debug)]
pub struct ConvGradients<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Cross-correlation of an NCHW `input` with `(out, in, k, k)` weights.
pub fn conv2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let dims = check_operands(
        "conv2d",
        input,
        weight,
        Some(bias),
        spec.in_channels,
        spec.weight_shape(),
        spec.out_channels,
    )?;
    let g = conv_geometry(spec, dims)?;
    let mut y = g.forward(input.data(), weight.data());
    add_bias(&mut y, bias.data(), g.out_plane());
    Tensor::new([g.batch, g.c_out, g.h_out, g.w_out], y)
}

pub fn conv2d_backward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_output: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGradients<T>> {
    let dims = check_operands(
        "conv2d",
        input,
        weight,
        None,
        spec.in_channels,
        spec.weight_shape(),
        spec.out_channels,
    )?;
    let g = conv_geometry(spec, dims)?;
    let expected = [g.batch, g.c_out, g.h_out, g.w_out];
    if grad_output.shape() != expected {
        return Err(Error::Contract(format!(
            "conv2d: output gradient shape {:?} does not match output shape {expected:?}",
            grad_output.shape()
        )));
    }
    Ok(ConvGradients {
        input: Tensor::new(dims, g.backward_data(grad_output.data(), weight.data()))?,
        weight: Tensor::new(
            spec.weight_shape(),
            g.backward_filter(input.data(), grad_output.data()),
        )?,
        bias: channel_sums(grad_output)?,
    })
}

/// Transposed convolution of an NCHW `input` with `(in, out, k, k)` weights;
/// the adjoint of [`conv2d`] under the same weights.
pub fn conv_transpose2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let dims = check_operands(
        "conv_transpose2d",
        input,
        weight,
        Some(bias),
        spec.in_channels,
        spec.transpose_weight_shape(),
        spec.out_channels,
    )?;
    let g = transpose_geometry(spec, dims)?;
    let mut y = g.backward_data(input.data(), weight.data());
    add_bias(&mut y, bias.data(), g.in_plane());
    Tensor::new([g.batch, g.c_in, g.h_in, g.w_in], y)
}

pub fn conv_transpose2d_backward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_output: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGradients<T>> {
    let dims = check_operands(
        "conv_transpose2d",
        input,
        weight,
        None,
        spec.in_channels,
        spec.transpose_weight_shape(),
        spec.out_channels,
    )?;
    let g = transpose_geometry(spec, dims)?;
    let expected = [g.batch, g.c_in, g.h_in, g.w_in];
    if grad_output.shape() != expected {
        return Err(Error::Contract(format!(
            "conv_transpose2d: output gradient shape {:?} does not match output shape {expected:?}",
            grad_output.shape()
        )));
    }
    Ok(ConvGradients {
        input: Tensor::new(dims, g.forward(grad_output.data(), weight.data()))?,
        weight: Tensor::new(
            spec.transpose_weight_shape(),
            g.backward_filter(grad_output.data(), input.data()),
        )?,
        bias: channel_sums(grad_output)?,
    })
}

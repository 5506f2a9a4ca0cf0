//! im2col convolution kernels with TensorFlow-style "same" padding.

use super::gemm::{gemm_acc, transpose};

/// Geometry of one 2-D convolution over a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_padding(extent: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = extent.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(extent);
    (out, total / 2)
}

impl ConvGeom {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let (out_h, pad_top) = same_padding(height, kernel, stride);
        let (out_w, pad_left) = same_padding(width, kernel, stride);
        Self {
            in_ch,
            out_ch,
            height,
            width,
            kernel,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `[lo, hi)` whose input column for tap `kx` lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let first = self.pad_left.saturating_sub(kx).div_ceil(self.stride);
        // largest ox with ox*stride + kx - pad_left <= width - 1
        let reach = self.width + self.pad_left;
        let hi = if reach > kx {
            ((reach - kx - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (first.min(hi), hi)
    }

    /// Fills `cols` (patch_len × out_pixels) from one input sample (in_ch × H × W).
    pub fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let p = self.out_pixels();
        let k = self.kernel;
        let plane_len = self.height * self.width;
        for c in 0..self.in_ch {
            let plane = &input[c * plane_len..(c + 1) * plane_len];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        let iy = (oy * self.stride + ky).wrapping_sub(self.pad_top);
                        if iy >= self.height {
                            line.fill(0.0);
                            continue;
                        }
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        let src = &plane[iy * self.width..(iy + 1) * self.width];
                        let start = lo * self.stride + kx - self.pad_left;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (v, s) in line[lo..hi].iter_mut().zip(src[start..].iter().step_by(self.stride)) {
                                *v = *s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto an input-shaped gradient buffer.
    pub fn col2im(&self, cols: &[f64], grad_input: &mut [f64]) {
        let p = self.out_pixels();
        let k = self.kernel;
        let plane_len = self.height * self.width;
        for c in 0..self.in_ch {
            let plane = &mut grad_input[c * plane_len..(c + 1) * plane_len];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky).wrapping_sub(self.pad_top);
                        if iy >= self.height {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        let start = lo * self.stride + kx - self.pad_left;
                        for (d, s) in dst[start..].iter_mut().step_by(self.stride).zip(&line[lo..hi]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    /// out (out_ch × P) = weight (out_ch × patch_len) · cols + bias.
    pub fn forward_sample(&self, weight: &[f64], bias: &[f64], cols: &[f64], out: &mut [f64]) {
        let p = self.out_pixels();
        for (co, row) in out.chunks_mut(p).enumerate().take(self.out_ch) {
            row.fill(bias[co]);
        }
        gemm_acc(self.out_ch, p, self.patch_len(), weight, cols, out);
    }

    /// Accumulates weight and bias gradients for one sample; `cols_t` is
    /// scratch of the same size as `cols`.
    pub fn backward_params(
        &self,
        grad_out: &[f64],
        cols: &[f64],
        cols_t: &mut [f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
    ) {
        let p = self.out_pixels();
        for (co, g) in grad_out.chunks(p).enumerate().take(self.out_ch) {
            grad_bias[co] += g.iter().sum::<f64>();
        }
        transpose(self.patch_len(), p, cols, cols_t);
        gemm_acc(self.out_ch, self.patch_len(), p, grad_out, cols_t, grad_weight);
    }

    /// grad_cols (patch_len × P) = weightᵀ · grad_out, with `weight_t`
    /// already transposed to patch_len × out_ch.
    pub fn backward_cols(&self, grad_out: &[f64], weight_t: &[f64], grad_cols: &mut [f64]) {
        grad_cols.fill(0.0);
        gemm_acc(self.patch_len(), self.out_pixels(), self.out_ch, weight_t, grad_out, grad_cols);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_matches_tensorflow_convention() {
        let g = ConvGeom::new(1, 1, 64, 96, 3, 2);
        assert_eq!((g.out_h, g.out_w), (32, 48));
        assert_eq!((g.pad_top, g.pad_left), (0, 0));
        let g = ConvGeom::new(1, 1, 5, 5, 3, 1);
        assert_eq!((g.out_h, g.pad_top), (5, 1));
        let g = ConvGeom::new(1, 1, 7, 7, 3, 2);
        assert_eq!((g.out_h, g.pad_top), (4, 1));
    }
}

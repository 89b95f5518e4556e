//! Convolution kernels on `[batch, height, width, channels]` tensors.
//!
//! Both directions go through im2col so the arithmetic lands in one GEMM.
//! Kernels are stored `[k, k, c_a, c_b]`: a convolution maps `c_a -> c_b`,
//! and the transposed convolution with the same array maps `c_b -> c_a`.

use crate::error::TensorError;
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Spatial bookkeeping shared by im2col and col2im.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    /// Image side of the dense (un-strided) grid.
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Side of the strided grid.
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    fn rows(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }
}

/// Output side of a strided convolution.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

/// Output side of a transposed convolution.
pub fn conv_transpose_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if size == 0 || stride == 0 {
        return None;
    }
    ((size - 1) * stride + kernel).checked_sub(2 * padding).filter(|&s| s > 0)
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let patch = g.patch_len();
    let mut col = vec![T::zero(); g.rows() * patch];
    let c = g.channels;
    for b in 0..g.batch {
        let img = &input[b * g.height * g.width * c..(b + 1) * g.height * g.width * c];
        for oh in 0..g.out_height {
            for ow in 0..g.out_width {
                let row = (b * g.out_height + oh) * g.out_width + ow;
                let dst = &mut col[row * patch..(row + 1) * patch];
                for kh in 0..g.kernel {
                    let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    for kw in 0..g.kernel {
                        let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.width as isize {
                            continue;
                        }
                        let src = (ih as usize * g.width + iw as usize) * c;
                        let off = (kh * g.kernel + kw) * c;
                        dst[off..off + c].copy_from_slice(&img[src..src + c]);
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry) -> Vec<T> {
    let patch = g.patch_len();
    let c = g.channels;
    let mut out = vec![T::zero(); g.batch * g.height * g.width * c];
    for b in 0..g.batch {
        let img = &mut out[b * g.height * g.width * c..(b + 1) * g.height * g.width * c];
        for oh in 0..g.out_height {
            for ow in 0..g.out_width {
                let row = (b * g.out_height + oh) * g.out_width + ow;
                let src = &col[row * patch..(row + 1) * patch];
                for kh in 0..g.kernel {
                    let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    for kw in 0..g.kernel {
                        let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.width as isize {
                            continue;
                        }
                        let dst = (ih as usize * g.width + iw as usize) * c;
                        let off = (kh * g.kernel + kw) * c;
                        for (d, &s) in img[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_kernel<T: Scalar>(kernel: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
    let ks = kernel.shape();
    if ks.len() != 4 || ks[0] != ks[1] || ks[0] == 0 {
        return Err(TensorError::mismatch(op, format!("kernel must be [k, k, c_a, c_b], got {ks:?}")));
    }
    Ok((ks[0], ks[2], ks[3]))
}

fn check_image<T: Scalar>(input: &Tensor<T>, op: &'static str) -> Result<[usize; 4], TensorError> {
    match *input.shape() {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref s => Err(TensorError::mismatch(op, format!("input must be [n, h, w, c], got {s:?}"))),
    }
}

/// Geometry of a forward convolution on `input`.
pub fn conv2d_geometry(
    input: &[usize; 4],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry, TensorError> {
    let [b, h, w, c] = *input;
    let oh = conv_output_size(h, kernel, stride, padding);
    let ow = conv_output_size(w, kernel, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvGeometry {
            batch: b,
            height: h,
            width: w,
            channels: c,
            kernel,
            stride,
            padding,
            out_height: oh,
            out_width: ow,
        }),
        _ => Err(TensorError::mismatch(
            "conv2d",
            format!("kernel {kernel} does not fit {h}x{w} with padding {padding}, stride {stride}"),
        )),
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let dims = check_image(input, "conv2d")?;
    let (k, ca, cb) = check_kernel(kernel, "conv2d")?;
    if ca != dims[3] {
        return Err(TensorError::mismatch(
            "conv2d",
            format!("input has {} channels, kernel expects {ca}", dims[3]),
        ));
    }
    let g = conv2d_geometry(&dims, k, stride, padding)?;
    let col = im2col(input.data(), &g);
    let mut out = vec![T::zero(); g.rows() * cb];
    gemm(false, false, g.rows(), cb, g.patch_len(), &col, kernel.data(), T::zero(), &mut out);
    Tensor::new(&[g.batch, g.out_height, g.out_width, cb], out)
}

/// Gradients of [`conv2d`]: `(d_input, d_kernel)`. `d_input` is skipped when not needed.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>), TensorError> {
    let dims = check_image(input, "conv2d")?;
    let (k, _, cb) = check_kernel(kernel, "conv2d")?;
    let g = conv2d_geometry(&dims, k, stride, padding)?;
    let col = im2col(input.data(), &g);
    let mut dk = vec![T::zero(); g.patch_len() * cb];
    gemm(true, false, g.patch_len(), cb, g.rows(), &col, grad_out.data(), T::zero(), &mut dk);
    let dk = Tensor::new(kernel.shape(), dk)?;
    let dx = if need_input_grad {
        let mut dcol = col;
        gemm(false, true, g.rows(), g.patch_len(), cb, grad_out.data(), kernel.data(), T::zero(), &mut dcol);
        Some(Tensor::new(input.shape(), col2im(&dcol, &g))?)
    } else {
        None
    };
    Ok((dx, dk))
}

fn transpose_geometry(
    dims: &[usize; 4],
    k: usize,
    ca: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry, TensorError> {
    let [b, h, w, _] = *dims;
    let oh = conv_transpose_output_size(h, k, stride, padding);
    let ow = conv_transpose_output_size(w, k, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvGeometry {
            batch: b,
            height: oh,
            width: ow,
            channels: ca,
            kernel: k,
            stride,
            padding,
            out_height: h,
            out_width: w,
        }),
        _ => Err(TensorError::mismatch(
            "conv_transpose2d",
            format!("empty output for {h}x{w}, kernel {k}, stride {stride}, padding {padding}"),
        )),
    }
}

/// Adjoint of [`conv2d`] with respect to its input. Output side is
/// `(size - 1) * stride - 2 * padding + kernel`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let dims = check_image(input, "conv_transpose2d")?;
    let (k, ca, cb) = check_kernel(kernel, "conv_transpose2d")?;
    if cb != dims[3] {
        return Err(TensorError::mismatch(
            "conv_transpose2d",
            format!("input has {} channels, kernel expects {cb}", dims[3]),
        ));
    }
    let g = transpose_geometry(&dims, k, ca, stride, padding)?;
    let mut col = vec![T::zero(); g.rows() * g.patch_len()];
    gemm(false, true, g.rows(), g.patch_len(), cb, input.data(), kernel.data(), T::zero(), &mut col);
    Tensor::new(&[g.batch, g.height, g.width, ca], col2im(&col, &g))
}

/// Gradients of [`conv_transpose2d`]: `(d_input, d_kernel)`.
pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>), TensorError> {
    let dims = check_image(input, "conv_transpose2d")?;
    let (k, ca, cb) = check_kernel(kernel, "conv_transpose2d")?;
    let g = transpose_geometry(&dims, k, ca, stride, padding)?;
    let col = im2col(grad_out.data(), &g);
    let mut dk = vec![T::zero(); g.patch_len() * cb];
    gemm(true, false, g.patch_len(), cb, g.rows(), &col, input.data(), T::zero(), &mut dk);
    let dk = Tensor::new(kernel.shape(), dk)?;
    let dx = if need_input_grad {
        let mut dx = vec![T::zero(); g.rows() * cb];
        gemm(false, false, g.rows(), cb, g.patch_len(), &col, kernel.data(), T::zero(), &mut dx);
        Some(Tensor::new(input.shape(), dx)?)
    } else {
        None
    };
    Ok((dx, dk))
}

//! Lowering of 2-D convolution to matrix multiplication.
//!
//! Column layout is `ic·kh·kw + kx·kw + ky`, where `kx` walks the kernel
//! along the height axis and `ky` along the width axis. Row layout is
//! `b·Ho·Wo + ox·Wo + oy`. Convolution is cross-correlation: no kernel flip.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Tensor4};

/// Geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        in_h: usize,
        in_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("stride must be at least 1"));
        }
        if kernel_h == 0 || kernel_w == 0 {
            return Err(Error::param("empty kernel"));
        }
        let ph = in_h + 2 * padding;
        let pw = in_w + 2 * padding;
        if kernel_h > ph || kernel_w > pw {
            return Err(Error::shape(format!(
                "kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (ph - kernel_h) / stride + 1,
            out_w: (pw - kernel_w) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Input value under a padded coordinate, zero outside the image.
    /// `out_y`/`ky` run along the height axis.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn read(&self, x: &Tensor4, b: usize, ch: usize, out_y: usize, out_x: usize, ky: usize, kx: usize) -> f64 {
        let yy = (out_y * self.stride + ky) as isize - self.padding as isize;
        let xx = (out_x * self.stride + kx) as isize - self.padding as isize;
        if yy < 0 || xx < 0 || yy >= x.h as isize || xx >= x.w as isize {
            0.0
        } else {
            x.get(b, ch, yy as usize, xx as usize)
        }
    }
}

pub fn im2col(
    x: &Tensor4,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
) -> Result<Matrix<f64>> {
    let g = ConvGeometry::new(x.h, x.w, kernel_h, kernel_w, stride, padding)?;
    let cols = x.c * g.patch_len();
    let mut out = Matrix::zeros(x.n * g.out_h * g.out_w, cols)?;
    for b in 0..x.n {
        for ox in 0..g.out_h {
            for oy in 0..g.out_w {
                let row = out.row_mut((b * g.out_h + ox) * g.out_w + oy);
                for ic in 0..x.c {
                    for kx in 0..kernel_h {
                        for ky in 0..kernel_w {
                            row[ic * g.patch_len() + kx * kernel_w + ky] =
                                g.read(x, b, ic, ox, oy, kx, ky);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Flattens `C_o × C_i × kh × kw` weights into the `(C_i·kh·kw) × C_o`
/// matrix matching [`im2col`]'s column layout.
pub fn weights_to_matrix(w: &Tensor4) -> Result<Matrix<f64>> {
    let patch = w.h * w.w;
    Matrix::from_fn(w.c * patch, w.n, |r, co| {
        let ic = r / patch;
        let kx = (r % patch) / w.w;
        let ky = r % w.w;
        w.get(co, ic, kx, ky)
    })
}

/// Inverse of the row layout: `(N·Ho·Wo) × C_o` back to `N × C_o × Ho × Wo`.
pub fn rows_to_tensor(m: &Matrix<f64>, n: usize, out_h: usize, out_w: usize) -> Result<Tensor4> {
    if m.rows() != n * out_h * out_w {
        return Err(Error::shape(format!(
            "{} rows cannot fill {n}x{out_h}x{out_w}",
            m.rows()
        )));
    }
    Tensor4::from_fn(n, m.cols(), out_h, out_w, |b, co, ox, oy| {
        m[((b * out_h + ox) * out_w + oy, co)]
    })
}

/// Direct nested-loop cross-correlation.
pub fn conv2d_direct(x: &Tensor4, w: &Tensor4, stride: usize, padding: usize) -> Result<Tensor4> {
    if x.c != w.c {
        return Err(Error::shape(format!(
            "input has {} channels, kernel expects {}",
            x.c, w.c
        )));
    }
    let g = ConvGeometry::new(x.h, x.w, w.h, w.w, stride, padding)?;
    let pad = padding as isize;
    Tensor4::from_fn(x.n, w.n, g.out_h, g.out_w, |b, co, oy, ox| {
        let mut acc = 0.0;
        for ic in 0..x.c {
            for ky in 0..w.h {
                let yy = (oy * stride + ky) as isize - pad;
                if yy < 0 || yy >= x.h as isize {
                    continue;
                }
                for kx in 0..w.w {
                    let xx = (ox * stride + kx) as isize - pad;
                    if xx < 0 || xx >= x.w as isize {
                        continue;
                    }
                    acc += x.get(b, ic, yy as usize, xx as usize) * w.get(co, ic, ky, kx);
                }
            }
        }
        acc
    })
}

/// `rows_to_tensor(matmul(im2col(x), weights_to_matrix(w)))`.
pub fn conv2d_im2col(x: &Tensor4, w: &Tensor4, stride: usize, padding: usize) -> Result<Tensor4> {
    if x.c != w.c {
        return Err(Error::shape(format!(
            "input has {} channels, kernel expects {}",
            x.c, w.c
        )));
    }
    let g = ConvGeometry::new(x.h, x.w, w.h, w.w, stride, padding)?;
    let cols = im2col(x, w.h, w.w, stride, padding)?;
    let prod = crate::matrix::matmul_exact(&cols, &weights_to_matrix(w)?)?;
    rows_to_tensor(&prod, x.n, g.out_h, g.out_w)
}

//! Non-differentiable compute kernels behind the graph operations.
//!
//! Convolutions lower to im2col + gemm. The three convolution kernels are the
//! partial derivatives of one trilinear form `T(x, w, g) = <conv(x, w), g>`,
//! which is what lets the graph differentiate them to any order.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// `op(a) · op(b)` for 2-D tensors, where `op` optionally transposes.
pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return dim_err(format!("matmul needs 2-D operands, got {:?} and {:?}", a.shape(), b.shape()));
    }
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return dim_err(format!(
            "matmul inner dimensions differ: {:?}{} x {:?}{}",
            a.shape(),
            if ta { "ᵀ" } else { "" },
            b.shape(),
            if tb { "ᵀ" } else { "" }
        ));
    }
    let mut out = vec![0.0; m * n];
    let (rsa, csa) = if ta { (1, ac) } else { (ac, 1) };
    let (rsb, csb) = if tb { (1, bc) } else { (bc, 1) };
    gemm(m, k, n, a.data(), rsa, csa, b.data(), rsb, csb, &mut out, 0.0);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `c = a·b + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution `x[n, c_in, h, w] * w[c_out, c_in, kh, kw] -> y[n, c_out, ho, wo]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution given input and kernel shapes.
    pub fn forward(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return dim_err(format!("conv2d expects 4-D input and kernel, got {x:?} and {k:?}"));
        }
        if stride == 0 {
            return dim_err("conv2d stride must be positive");
        }
        if x[1] != k[1] {
            return dim_err(format!("conv2d: input has {} channels, kernel expects {}", x[1], k[1]));
        }
        let (hp, wp) = (x[2] + 2 * pad, x[3] + 2 * pad);
        if k[2] > hp || k[3] > wp {
            return dim_err(format!(
                "conv2d: kernel {}x{} larger than padded input {hp}x{wp}",
                k[2], k[3]
            ));
        }
        Ok(Self {
            batch: x[0],
            c_in: x[1],
            h: x[2],
            w: x[3],
            c_out: k[0],
            kh: k[2],
            kw: k[3],
            stride,
            pad,
            ho: (hp - k[2]) / stride + 1,
            wo: (wp - k[3]) / stride + 1,
        })
    }

    /// Geometry of the convolution whose adjoint maps `g[n, c_out, ho, wo]` to an
    /// `h x w` image, where `h = (ho-1)*stride - 2*pad + kh + output_padding`.
    pub fn transposed(
        g: &[usize],
        k: &[usize],
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Self> {
        if g.len() != 4 || k.len() != 4 {
            return dim_err(format!(
                "conv_transpose2d expects 4-D input and kernel, got {g:?} and {k:?}"
            ));
        }
        if stride == 0 || output_padding >= stride {
            return dim_err(format!(
                "conv_transpose2d needs stride > output_padding, got {stride} and {output_padding}"
            ));
        }
        if g[1] != k[0] {
            return dim_err(format!(
                "conv_transpose2d: input has {} channels, kernel expects {}",
                g[1], k[0]
            ));
        }
        let h = ((g[2] - 1) * stride + k[2] + output_padding)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0);
        let w = ((g[3] - 1) * stride + k[3] + output_padding)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0);
        let (Some(h), Some(w)) = (h, w) else {
            return dim_err("conv_transpose2d: padding exceeds output size");
        };
        let geom = Self::forward(&[g[0], k[1], h, w], k, stride, pad)?;
        debug_assert_eq!((geom.ho, geom.wo), (g[2], g[3]));
        Ok(geom)
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.c_in, self.h, self.w]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.ho, self.wo]
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kh, self.kw]
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn check(&self, t: &Tensor, want: [usize; 4], what: &str) -> Result<()> {
        if t.shape() != want {
            return dim_err(format!("{what}: expected shape {want:?}, got {:?}", t.shape()));
        }
        Ok(())
    }
}

fn im2col(geom: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let (hw, ow) = (geom.h * geom.w, geom.col_cols());
    for c in 0..geom.c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = &mut col[((c * geom.kh + i) * geom.kw + j) * ow..][..ow];
                for oy in 0..geom.ho {
                    let iy = (oy * geom.stride + i) as isize - geom.pad as isize;
                    let dst = &mut row[oy * geom.wo..(oy + 1) * geom.wo];
                    if iy < 0 || iy >= geom.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * geom.w..(iy as usize + 1) * geom.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + j) as isize - geom.pad as isize;
                        *d = if ix < 0 || ix >= geom.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(geom: &ConvGeom, col: &[f64], x: &mut [f64]) {
    let (hw, ow) = (geom.h * geom.w, geom.col_cols());
    for c in 0..geom.c_in {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = &col[((c * geom.kh + i) * geom.kw + j) * ow..][..ow];
                for oy in 0..geom.ho {
                    let iy = (oy * geom.stride + i) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * geom.w..(iy as usize + 1) * geom.w];
                    for (ox, &v) in row[oy * geom.wo..(oy + 1) * geom.wo].iter().enumerate() {
                        let ix = (ox * geom.stride + j) as isize - geom.pad as isize;
                        if ix >= 0 && ix < geom.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation `y = conv(x, w)`.
pub fn conv2d(geom: &ConvGeom, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    geom.check(x, geom.input_shape(), "conv2d input")?;
    geom.check(w, geom.kernel_shape(), "conv2d kernel")?;
    let (rows, cols) = (geom.col_rows(), geom.col_cols());
    let in_len = geom.c_in * geom.h * geom.w;
    let out_len = geom.c_out * cols;
    let mut col = vec![0.0; rows * cols];
    let mut out = vec![0.0; geom.batch * out_len];
    for n in 0..geom.batch {
        im2col(geom, &x.data()[n * in_len..(n + 1) * in_len], &mut col);
        gemm(
            geom.c_out,
            rows,
            cols,
            w.data(),
            rows,
            1,
            &col,
            cols,
            1,
            &mut out[n * out_len..(n + 1) * out_len],
            0.0,
        );
    }
    Ok(Tensor::from_parts(geom.output_shape().to_vec(), out))
}

/// Adjoint of [`conv2d`] in its input: maps `g` (output-shaped) to input shape.
/// This is the transposed convolution.
pub fn conv2d_input_grad(geom: &ConvGeom, g: &Tensor, w: &Tensor) -> Result<Tensor> {
    geom.check(g, geom.output_shape(), "conv_transpose2d input")?;
    geom.check(w, geom.kernel_shape(), "conv_transpose2d kernel")?;
    let (rows, cols) = (geom.col_rows(), geom.col_cols());
    let in_len = geom.c_in * geom.h * geom.w;
    let out_len = geom.c_out * cols;
    let mut col = vec![0.0; rows * cols];
    let mut x = vec![0.0; geom.batch * in_len];
    for n in 0..geom.batch {
        // col = wᵀ · g[n]
        gemm(
            rows,
            geom.c_out,
            cols,
            w.data(),
            1,
            rows,
            &g.data()[n * out_len..(n + 1) * out_len],
            cols,
            1,
            &mut col,
            0.0,
        );
        col2im_add(geom, &col, &mut x[n * in_len..(n + 1) * in_len]);
    }
    Ok(Tensor::from_parts(geom.input_shape().to_vec(), x))
}

/// Adjoint of [`conv2d`] in its kernel: `Σ_n g[n] · im2col(x[n])ᵀ`.
pub fn conv2d_weight_grad(geom: &ConvGeom, x: &Tensor, g: &Tensor) -> Result<Tensor> {
    geom.check(x, geom.input_shape(), "conv weight-grad input")?;
    geom.check(g, geom.output_shape(), "conv weight-grad cotangent")?;
    let (rows, cols) = (geom.col_rows(), geom.col_cols());
    let in_len = geom.c_in * geom.h * geom.w;
    let out_len = geom.c_out * cols;
    let mut col = vec![0.0; rows * cols];
    let mut wg = vec![0.0; geom.c_out * rows];
    for n in 0..geom.batch {
        im2col(geom, &x.data()[n * in_len..(n + 1) * in_len], &mut col);
        gemm(
            geom.c_out,
            cols,
            rows,
            &g.data()[n * out_len..(n + 1) * out_len],
            cols,
            1,
            &col,
            1,
            cols,
            &mut wg,
            1.0,
        );
    }
    Ok(Tensor::from_parts(geom.kernel_shape().to_vec(), wg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum()
        })
    }

    fn transpose(a: &Tensor) -> Tensor {
        let (m, n) = (a.shape()[0], a.shape()[1]);
        Tensor::from_fn(&[n, m], |idx| a.data()[(idx % m) * n + idx / m])
    }

    fn direct_conv(geom: &ConvGeom, x: &Tensor, w: &Tensor) -> Tensor {
        let g = *geom;
        let mut y = Tensor::zeros(&g.output_shape());
        for n in 0..g.batch {
            for co in 0..g.c_out {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = 0.0;
                        for ci in 0..g.c_in {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((n * g.c_in + ci) * g.h + iy as usize) * g.w + ix as usize];
                                    let wv = w.data()[((co * g.c_in + ci) * g.kh + i) * g.kw + j];
                                    acc += xv * wv;
                                }
                            }
                        }
                        y.data_mut()[((n * g.c_out + co) * g.ho + oy) * g.wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matmul_matches_triple_loop_with_transposes() {
        let a = lcg_tensor(&[5, 7], 1);
        let b = lcg_tensor(&[7, 3], 2);
        let want = naive_matmul(&a, &b);
        let cases = [
            matmul(&a, &b, false, false).unwrap(),
            matmul(&transpose(&a), &b, true, false).unwrap(),
            matmul(&a, &transpose(&b), false, true).unwrap(),
            matmul(&transpose(&a), &transpose(&b), true, true).unwrap(),
        ];
        for got in cases {
            for (x, y) in got.data().iter().zip(want.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(matmul(&a, &a, false, false).is_err());
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (seed, stride, pad, k) in [(3, 1, 0, 3), (4, 2, 1, 3), (5, 2, 0, 2), (6, 1, 2, 5)] {
            let x = lcg_tensor(&[2, 3, 7, 6], seed);
            let w = lcg_tensor(&[4, 3, k, k], seed + 10);
            let geom = ConvGeom::forward(x.shape(), w.shape(), stride, pad).unwrap();
            let got = conv2d(&geom, &x, &w).unwrap();
            let want = direct_conv(&geom, &x, &w);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_and_weight_grads_are_adjoints() {
        let x = lcg_tensor(&[2, 3, 9, 8], 11);
        let w = lcg_tensor(&[5, 3, 3, 3], 12);
        let geom = ConvGeom::forward(x.shape(), w.shape(), 2, 1).unwrap();
        let g = lcg_tensor(&geom.output_shape(), 13);
        let lhs = conv2d(&geom, &x, &w).unwrap().dot(&g).unwrap();
        let via_input = x.dot(&conv2d_input_grad(&geom, &g, &w).unwrap()).unwrap();
        let via_weight = w.dot(&conv2d_weight_grad(&geom, &x, &g).unwrap()).unwrap();
        assert!((lhs - via_input).abs() < 1e-10);
        assert!((lhs - via_weight).abs() < 1e-10);
    }

    #[test]
    fn transposed_geometry() {
        let geom = ConvGeom::transposed(&[1, 1, 2, 2], &[1, 1, 2, 2], 2, 0, 0).unwrap();
        assert_eq!((geom.h, geom.w), (4, 4));
        let geom = ConvGeom::transposed(&[1, 8, 32, 32], &[8, 4, 3, 3], 2, 1, 1).unwrap();
        assert_eq!((geom.h, geom.w), (64, 64));
        assert!(ConvGeom::transposed(&[1, 8, 4, 4], &[8, 4, 3, 3], 2, 1, 2).is_err());
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        assert!(ConvGeom::forward(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 0).is_err());
        assert!(ConvGeom::forward(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 2).is_ok());
        assert!(ConvGeom::forward(&[1, 2, 4, 4], &[1, 1, 3, 3], 1, 0).is_err());
    }
}

//! Dense inner loops shared by forward and backward rules.

use super::tensor::Scalar;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Unfolds a `[B, C, H, W]` batch into a `[C*k*k, B*oh*ow]` column matrix for a
/// stride-1 valid convolution.
pub fn im2col<F: Scalar>(input: &[F], b: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let n = b * oh * ow;
    let mut cols = vec![F::zero(); c * k * k * n];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let row = &mut cols[r * n..(r + 1) * n];
                for bi in 0..b {
                    let plane = &input[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for y in 0..oh {
                        let src = &plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let dst = &mut row[(bi * oh + y) * ow..(bi * oh + y) * ow + ow];
                        dst.copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the input layout.
pub fn col2im<F: Scalar>(
    cols: &[F],
    out: &mut [F],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let n = b * oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let row = &cols[r * n..(r + 1) * n];
                for bi in 0..b {
                    let plane = &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for y in 0..oh {
                        let src = &row[(bi * oh + y) * ow..(bi * oh + y) * ow + ow];
                        let dst = &mut plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

//! Dense inner loops. All routines accumulate into `c` and are written so the
//! innermost loop runs over contiguous memory.

use crate::Real;

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    T::gemm_strided(m, k, n, a, (k as isize, 1), b, (n as isize, 1), c, n as isize, T::one());
}

/// `c[m,n] += a[k,m]ᵀ · b[k,n]`
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    T::gemm_strided(m, k, n, a, (1, m as isize), b, (n as isize, 1), c, n as isize, T::one());
}

/// `c[m,n] = a[k,m]ᵀ · b[k,n]`, ignoring the previous contents of `c`.
pub(crate) fn gemm_tn_set<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    T::gemm_strided(m, k, n, a, (1, m as isize), b, (n as isize, 1), c, n as isize, T::zero());
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    T::gemm_strided(m, k, n, a, (k as isize, 1), b, (1, k as isize), c, n as isize, T::one());
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

impl ConvGeometry {
    /// Output columns `lo..hi` whose input column `ox·stride + kx − pad` is in bounds.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        let hi = if self.w + self.pad > kx { ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.out_w) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image `[C,H,W]` into columns `[C·kH·kW, H'·W']`.
pub(crate) fn im2col<T: Real>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let p = g.out_len();
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &image[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (k, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[start + k * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into `image`, accumulating.
pub(crate) fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let p = g.out_len();
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut image[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (k, &v) in line.iter().enumerate() {
                            let d = &mut dst[start + k * g.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let (m, k, n) = (3, 11, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut c = vec![0.0; m * n];
        gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut c = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        for (h, w, k, stride, pad) in [(5, 4, 3, 1, 1), (6, 6, 3, 2, 1), (4, 7, 1, 2, 0), (3, 3, 3, 1, 2), (8, 5, 2, 3, 1)] {
            let out_h = (h + 2 * pad - k) / stride + 1;
            let out_w = (w + 2 * pad - k) / stride + 1;
            let g = ConvGeometry { c_in: 2, h, w, kh: k, kw: k, stride, pad, out_h, out_w };
            let image: Vec<f64> = (0..2 * h * w).map(|v| v as f64 + 1.0).collect();
            let mut cols = vec![f64::NAN; g.patch_len() * g.out_len()];
            im2col(&g, &image, &mut cols);
            for c in 0..2 {
                for ky in 0..k {
                    for kx in 0..k {
                        for oy in 0..out_h {
                            for ox in 0..out_w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                let inside = (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix);
                                let want = if inside { image[(c * h + iy as usize) * w + ix as usize] } else { 0.0 };
                                let row = (c * k + ky) * k + kx;
                                assert_eq!(cols[row * g.out_len() + oy * out_w + ox], want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry { c_in: 2, h: 5, w: 4, kh: 3, kw: 2, stride: 2, pad: 1, out_h: 3, out_w: 3 };
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.out_len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

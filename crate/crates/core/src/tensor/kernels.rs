//! Dense loops shared by the tensor ops. Every reduction runs in a fixed
//! order so results are bit-reproducible.

/// `c += a · b` with `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// Dot product with four interleaved partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c += a · bᵀ` with `a: [m, k]`, `b: [n, k]`.
pub(crate) fn gemm_nt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c += aᵀ · b` with `a: [k, m]`, `b: [k, n]`.
pub(crate) fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

pub(crate) fn transpose(rows: usize, cols: usize, src: &[f64], dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Geometry of one 2-D convolution over an `[n, c_in, h, w]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub(crate) fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub(crate) fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    pub(crate) fn in_sample(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub(crate) fn out_sample(&self) -> usize {
        self.c_out * self.ho * self.wo
    }

    /// 1×1, unit stride, no padding: the input plane is already the column matrix.
    pub(crate) fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    pub(crate) fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.out_plane();
        for ci in 0..self.c_in {
            let xc = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.sw + kx) as isize - self.pw as isize;
                            *o = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn col2im_acc(&self, cols: &[f64], dx: &mut [f64]) {
        let plane = self.out_plane();
        for ci in 0..self.c_in {
            let dxc = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dxc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.sw + kx) as isize - self.pw as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
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

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm_acc(2, 3, 4, &a, &b, &mut c);
        let mut bt = vec![0.0; 12];
        transpose(3, 4, &b, &mut bt);
        let mut c2 = vec![0.0; 8];
        gemm_nt_acc(2, 3, 4, &a, &bt, &mut c2);
        let mut at = vec![0.0; 6];
        transpose(2, 3, &a, &mut at);
        let mut c3 = vec![0.0; 8];
        gemm_tn_acc(2, 3, 4, &at, &b, &mut c3);
        assert_eq!(c, c2);
        assert_eq!(c, c3);
        assert_eq!(c[0], -2.0 * 0.0 + -1.0 * 2.0 + 0.0 * 4.0);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(|v| v as f64).collect();
        assert_eq!(dot(&a, &a), 91.0);
    }
}

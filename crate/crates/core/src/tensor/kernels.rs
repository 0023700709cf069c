// Dense kernels over flat row-major slices. Every output element is
// accumulated in a fixed sequential order, so results do not depend on how
// rayon splits the work.

use rayon::prelude::*;

use super::Scalar;

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m×n] = a[m×k] · b[k×n]` (overwrites `out`).
pub fn gemm<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, out_row): (usize, &mut [S])| {
        out_row.iter_mut().for_each(|o| *o = S::zero());
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bpj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bpj;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ` (overwrites `out`). Each output is one
/// contiguous dot product, so no transposed copy of `b` is needed.
pub(crate) fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let cell = |(idx, o): (usize, &mut S)| {
        let (i, j) = (idx / n, idx % n);
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[j * k..(j + 1) * k];
        *o = a_row
            .iter()
            .zip(b_row)
            .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(cell);
    } else {
        out.iter_mut().enumerate().for_each(cell);
    }
}

pub(crate) fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut dst = vec![S::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// Output extent of a sliding window, or `None` if the window does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<S: Scalar>(g: &ConvGeom, x: &[S]) -> Vec<S> {
    let cols = g.col_cols();
    let mut col = vec![S::zero(); g.col_rows() * cols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[r * cols..(r + 1) * cols];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[oi * g.wo + oj] = src_row[jj as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<S: Scalar>(g: &ConvGeom, col: &[S], dx: &mut [S]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let src = &col[r * cols..(r + 1) * cols];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            let d = &mut dx[base + jj as usize];
                            *d = *d + src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    kernel: &[S],
    bias: Option<&[S]>,
) -> Vec<S> {
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * g.ho * g.wo;
    let mut y = vec![S::zero(); g.n * out_len];
    y.par_chunks_mut(out_len)
        .zip(x.par_chunks(in_len))
        .for_each(|(y_n, x_n)| {
            let col = im2col(g, x_n);
            gemm(g.f, g.col_rows(), g.col_cols(), kernel, &col, y_n);
            if let Some(b) = bias {
                for (f, chunk) in y_n.chunks_mut(g.col_cols()).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = *v + b[f]);
                }
            }
        });
    y
}

pub(crate) struct ConvGrads<S> {
    pub dx: Option<Vec<S>>,
    pub dk: Option<Vec<S>>,
    pub db: Option<Vec<S>>,
}

pub(crate) fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    kernel: &[S],
    dy: &[S],
    need: (bool, bool, bool),
) -> ConvGrads<S> {
    let (need_dx, need_dk, need_db) = need;
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * g.ho * g.wo;
    let rows = g.col_rows();
    let cols = g.col_cols();
    let kernel_t = if need_dx {
        transpose(kernel, g.f, rows)
    } else {
        Vec::new()
    };

    // Per-image partials, combined below in image order.
    let partials: Vec<(Option<Vec<S>>, Option<Vec<S>>)> = dy
        .par_chunks(out_len)
        .zip(x.par_chunks(in_len))
        .map(|(dy_n, x_n)| {
            let dk_n = need_dk.then(|| {
                let col = im2col(g, x_n);
                let mut dk = vec![S::zero(); g.f * rows];
                gemm_nt(g.f, cols, rows, dy_n, &col, &mut dk);
                dk
            });
            let dx_n = need_dx.then(|| {
                let mut dcol = vec![S::zero(); rows * cols];
                gemm(rows, g.f, cols, &kernel_t, dy_n, &mut dcol);
                let mut dx = vec![S::zero(); in_len];
                col2im(g, &dcol, &mut dx);
                dx
            });
            (dx_n, dk_n)
        })
        .collect();

    let dx = need_dx.then(|| {
        let mut dx = Vec::with_capacity(g.n * in_len);
        for (d, _) in &partials {
            dx.extend_from_slice(d.as_ref().expect("dx partial"));
        }
        dx
    });
    let dk = need_dk.then(|| {
        let mut dk = vec![S::zero(); g.f * rows];
        for (_, p) in &partials {
            for (acc, &v) in dk.iter_mut().zip(p.as_ref().expect("dk partial")) {
                *acc = *acc + v;
            }
        }
        dk
    });
    let db = need_db.then(|| {
        let mut db = vec![S::zero(); g.f];
        for dy_n in dy.chunks(out_len) {
            for (f, chunk) in dy_n.chunks(cols).enumerate() {
                db[f] = db[f] + chunk.iter().fold(S::zero(), |a, &v| a + v);
            }
        }
        db
    });
    ConvGrads { dx, dk, db }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn avgpool_forward<S: Scalar>(g: &PoolGeom, x: &[S]) -> Vec<S> {
    let inv = S::one() / S::of((g.k * g.k) as f64);
    let mut y = vec![S::zero(); g.planes * g.ho * g.wo];
    for p in 0..g.planes {
        let xp = &x[p * g.h * g.w..(p + 1) * g.h * g.w];
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let mut acc = S::zero();
                for di in 0..g.k {
                    let row = &xp[(oi * g.stride + di) * g.w + oj * g.stride..][..g.k];
                    for &v in row {
                        acc = acc + v;
                    }
                }
                y[(p * g.ho + oi) * g.wo + oj] = acc * inv;
            }
        }
    }
    y
}

pub(crate) fn avgpool_backward<S: Scalar>(g: &PoolGeom, dy: &[S]) -> Vec<S> {
    let inv = S::one() / S::of((g.k * g.k) as f64);
    let mut dx = vec![S::zero(); g.planes * g.h * g.w];
    for p in 0..g.planes {
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let d = dy[(p * g.ho + oi) * g.wo + oj] * inv;
                for di in 0..g.k {
                    let base = p * g.h * g.w + (oi * g.stride + di) * g.w + oj * g.stride;
                    for v in &mut dx[base..base + g.k] {
                        *v = *v + d;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small() {
        let a = [1.0f64, 2.0];
        let b = [3.0f64, 4.0];
        let mut out = [0.0f64; 1];
        gemm(1, 2, 1, &a, &b, &mut out);
        assert_eq!(out[0], 11.0);
    }

    #[test]
    fn gemm_parallel_matches_serial() {
        let m = 64;
        let k = 48;
        let n = 40;
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7 % 13) as f32) * 0.1 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 5 % 11) as f32) * 0.2 - 1.0).collect();
        let mut par = vec![0.0; m * n];
        gemm(m, k, n, &a, &b, &mut par);
        let mut serial = vec![0.0f32; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    serial[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        assert_eq!(par, serial);
    }

    #[test]
    fn output_extent() {
        assert_eq!(conv_output_extent(115, 7, 2, 3), Some(58));
        assert_eq!(conv_output_extent(108, 7, 2, 3), Some(54));
        assert_eq!(conv_output_extent(3, 3, 1, 0), Some(1));
        assert_eq!(conv_output_extent(2, 5, 1, 1), None);
    }
}

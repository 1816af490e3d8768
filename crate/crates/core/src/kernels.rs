//! Dense compute kernels behind the graph ops. All buffers are row-major
//! slices; shapes are passed explicitly. Backward kernels accumulate (+=)
//! so multiple consumers of a node can sum their contributions.

use crate::scalar::Scalar;

/// c (m,n) += a (m,k) . b (k,n)
pub fn matmul_acc<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// c (k,n) += a (m,k)^T . b (m,n)
pub fn matmul_at_b_acc<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// c (m,k) += a (m,n) . b (k,n)^T
pub fn matmul_a_bt_acc<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * k + j] += acc;
        }
    }
}

/// out (n,m) = a (m,n)^T
pub fn transpose<S: Scalar>(a: &[S], m: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for (j, &v) in arow.iter().enumerate() {
            out[j * m + i] = v;
        }
    }
}

/// Unfold one image (c,h,w) into rows (oh*ow, c*kh*kw) — one row per output
/// position. Out-of-bounds taps read as zero. The row-per-position layout
/// keeps the subsequent matmul's inner loop over the wide c*kh*kw / channel
/// dimensions even when oh*ow shrinks to 1 deep in the net.
#[allow(clippy::too_many_arguments)]
pub fn im2col_t<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col_t: &mut [S],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col_t.len(), c * kh * kw * oh * ow);
    let ckk = c * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut col_t[(oy * ow + ox) * ckk..(oy * ow + ox + 1) * ckk];
            let mut r = 0;
            for ci in 0..c {
                let plane = &x[ci * h * w..(ci + 1) * h * w];
                for ki in 0..kh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    for kj in 0..kw {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        row[r] = if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            plane[iy as usize * w + ix as usize]
                        };
                        r += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col_t`: scatter-add row gradients back onto the image.
#[allow(clippy::too_many_arguments)]
pub fn col2im_t_acc<S: Scalar>(
    col_t: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [S],
) {
    debug_assert_eq!(dx.len(), c * h * w);
    debug_assert_eq!(col_t.len(), c * kh * kw * oh * ow);
    let ckk = c * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &col_t[(oy * ow + ox) * ckk..(oy * ow + ox + 1) * ckk];
            let mut r = 0;
            for ci in 0..c {
                let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
                for ki in 0..kh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    for kj in 0..kw {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[r];
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

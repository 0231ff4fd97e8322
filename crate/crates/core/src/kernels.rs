//! Slice-level forward and backward kernels.
//!
//! Feature maps are `[batch][channels][length]`, contiguous and row-major.
//! Convolution weights are `[out][in][kernel]`, depthwise weights
//! `[channels][kernel]`. Stride is always 1; zero padding is symmetric.

use crate::tensor::Real;

/// Extents of a 1-D convolution over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        self.len + 2 * self.padding + 1 - self.kernel
    }

    /// Output positions `t` for which input index `t + k - padding` is in range.
    #[inline]
    fn valid(&self, k: usize) -> (usize, usize) {
        let out_len = self.out_len();
        let lo = self.padding.saturating_sub(k);
        let hi = (self.len + self.padding).saturating_sub(k).min(out_len);
        (lo, hi.max(lo))
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Strided matrix operand: element `(r, c)` lives at `r * rs + c * cs`.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn new(rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        View { rows, cols, rs, cs }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

/// `c += a · b` with every operand bounds-checked against its slice.
fn gemm_acc<T: Real>(a: &[T], av: View, b: &[T], bv: View, c: &mut [T], cv: View) {
    assert!(
        av.cols == bv.rows && av.rows == cv.rows && bv.cols == cv.cols,
        "gemm operand shapes disagree"
    );
    assert!(
        av.fits(a.len()) && bv.fits(b.len()) && cv.fits(c.len()),
        "gemm operand out of bounds"
    );
    if cv.rows == 0 || cv.cols == 0 || av.cols == 0 {
        return;
    }
    // SAFETY: all addressed elements were checked in bounds above, and `c`
    // is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_acc(
            av.rows,
            av.cols,
            bv.cols,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

pub fn conv1d_forward<T: Real>(d: ConvDims, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let out_len = d.out_len();
    let wk_rs = d.c_in * d.kernel;
    for n in 0..d.batch {
        let xb = &x[n * d.c_in * d.len..(n + 1) * d.c_in * d.len];
        let ob = &mut out[n * d.c_out * out_len..(n + 1) * d.c_out * out_len];
        for (o, orow) in ob.chunks_mut(out_len).enumerate() {
            orow.fill(bias.map_or(T::zero(), |b| b[o]));
        }
        for k in 0..d.kernel {
            let (lo, hi) = d.valid(k);
            if lo < hi {
                let shift = lo + k - d.padding;
                gemm_acc(
                    &w[k..],
                    View::new(d.c_out, d.c_in, wk_rs, d.kernel),
                    &xb[shift..],
                    View::new(d.c_in, hi - lo, d.len, 1),
                    &mut ob[lo..],
                    View::new(d.c_out, hi - lo, out_len, 1),
                );
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of [`conv1d_forward`].
pub fn conv1d_backward<T: Real>(
    d: ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let out_len = d.out_len();
    let wk_rs = d.c_in * d.kernel;
    for n in 0..d.batch {
        let xb = &x[n * d.c_in * d.len..(n + 1) * d.c_in * d.len];
        let dyb = &dy[n * d.c_out * out_len..(n + 1) * d.c_out * out_len];
        if let Some(db) = db.as_deref_mut() {
            for (o, row) in dyb.chunks(out_len).enumerate() {
                db[o] += row.iter().copied().sum::<T>();
            }
        }
        for k in 0..d.kernel {
            let (lo, hi) = d.valid(k);
            if lo >= hi {
                continue;
            }
            let shift = lo + k - d.padding;
            let width = hi - lo;
            if let Some(dw) = dw.as_deref_mut() {
                gemm_acc(
                    &dyb[lo..],
                    View::new(d.c_out, width, out_len, 1),
                    &xb[shift..],
                    View::new(width, d.c_in, 1, d.len),
                    &mut dw[k..],
                    View::new(d.c_out, d.c_in, wk_rs, d.kernel),
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxb = &mut dx[n * d.c_in * d.len..(n + 1) * d.c_in * d.len];
                gemm_acc(
                    &w[k..],
                    View::new(d.c_in, d.c_out, d.kernel, wk_rs),
                    &dyb[lo..],
                    View::new(d.c_out, width, out_len, 1),
                    &mut dxb[shift..],
                    View::new(d.c_in, width, d.len, 1),
                );
            }
        }
    }
}

/// Depthwise convolution: `c_out == c_in`, one filter per channel.
pub fn depthwise_forward<T: Real>(d: ConvDims, x: &[T], w: &[T], out: &mut [T]) {
    let out_len = d.out_len();
    for n in 0..d.batch {
        for c in 0..d.c_in {
            let xrow = &x[(n * d.c_in + c) * d.len..(n * d.c_in + c + 1) * d.len];
            let orow = &mut out[(n * d.c_in + c) * out_len..(n * d.c_in + c + 1) * out_len];
            orow.fill(T::zero());
            for k in 0..d.kernel {
                let (lo, hi) = d.valid(k);
                if lo < hi {
                    let shift = lo + k - d.padding;
                    axpy(w[c * d.kernel + k], &xrow[shift..shift + hi - lo], &mut orow[lo..hi]);
                }
            }
        }
    }
}

pub fn depthwise_backward<T: Real>(
    d: ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let out_len = d.out_len();
    for n in 0..d.batch {
        for c in 0..d.c_in {
            let row = n * d.c_in + c;
            let xrow = &x[row * d.len..(row + 1) * d.len];
            let dyrow = &dy[row * out_len..(row + 1) * out_len];
            for k in 0..d.kernel {
                let (lo, hi) = d.valid(k);
                if lo >= hi {
                    continue;
                }
                let shift = lo + k - d.padding;
                if let Some(dw) = dw.as_deref_mut() {
                    dw[c * d.kernel + k] += dot(&dyrow[lo..hi], &xrow[shift..shift + hi - lo]);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let start = row * d.len + shift;
                    axpy(w[c * d.kernel + k], &dyrow[lo..hi], &mut dx[start..start + hi - lo]);
                }
            }
        }
    }
}

/// `out[n] = w · x[n] + b` for `x: [batch][inputs]`, `w: [outputs][inputs]`.
pub fn affine_forward<T: Real>(batch: usize, inputs: usize, outputs: usize, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    for row in out.chunks_mut(outputs) {
        row.copy_from_slice(b);
    }
    gemm_acc(
        x,
        View::new(batch, inputs, inputs, 1),
        w,
        View::new(inputs, outputs, 1, inputs),
        out,
        View::new(batch, outputs, outputs, 1),
    );
}

#[allow(clippy::too_many_arguments)]
pub fn affine_backward<T: Real>(
    batch: usize,
    inputs: usize,
    outputs: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for row in dy.chunks(outputs) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    if let Some(dw) = dw {
        gemm_acc(
            dy,
            View::new(outputs, batch, 1, outputs),
            x,
            View::new(batch, inputs, inputs, 1),
            dw,
            View::new(outputs, inputs, inputs, 1),
        );
    }
    if let Some(dx) = dx {
        gemm_acc(
            dy,
            View::new(batch, outputs, outputs, 1),
            w,
            View::new(outputs, inputs, inputs, 1),
            dx,
            View::new(batch, inputs, inputs, 1),
        );
    }
}

/// Marker for a max-pool window whose winner was the zero padding.
pub const PAD_WINNER: usize = usize::MAX;

/// Kernel-3, stride-2, zero-pad-1 max pooling. `argmax` receives, per output,
/// the flat input index of the winner, or [`PAD_WINNER`]. A real input wins a
/// tie with the padding; otherwise the first maximum wins.
pub fn maxpool_halve_forward<T: Real>(rows: usize, len: usize, x: &[T], out: &mut [T], argmax: &mut [usize]) {
    let out_len = len.div_ceil(2);
    for r in 0..rows {
        for t in 0..out_len {
            let mut best = T::neg_infinity();
            let mut at = PAD_WINNER;
            for j in 0..3 {
                // window covers input positions 2t-1, 2t, 2t+1
                let pos = 2 * t + j;
                let (v, idx) = if pos == 0 || pos > len {
                    (T::zero(), PAD_WINNER)
                } else {
                    (x[r * len + pos - 1], r * len + pos - 1)
                };
                if v > best || (v == best && at == PAD_WINNER) {
                    best = v;
                    at = idx;
                }
            }
            out[r * out_len + t] = best;
            argmax[r * out_len + t] = at;
        }
    }
}

/// Per-row indices of the `k` largest values, in ascending temporal order.
/// Ties prefer the earlier position.
pub fn kmax_indices<T: Real>(row: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn adaptive_avg_forward<T: Real>(rows: usize, len: usize, out_len: usize, x: &[T], out: &mut [T]) {
    let bin = len / out_len;
    let scale = T::one() / T::of(bin as f64);
    for r in 0..rows {
        for j in 0..out_len {
            let s: T = x[r * len + j * bin..r * len + (j + 1) * bin].iter().copied().sum();
            out[r * out_len + j] = s * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(c_in: usize, c_out: usize, len: usize, kernel: usize, padding: usize) -> ConvDims {
        ConvDims {
            batch: 1,
            c_in,
            c_out,
            len,
            kernel,
            padding,
        }
    }

    #[test]
    fn valid_range_covers_only_real_inputs() {
        let d = dims(1, 1, 4, 3, 1);
        assert_eq!(d.out_len(), 4);
        assert_eq!(d.valid(0), (1, 4));
        assert_eq!(d.valid(1), (0, 4));
        assert_eq!(d.valid(2), (0, 3));
    }

    #[test]
    fn kernel_longer_than_padded_input_edges() {
        // L=1, K=3, pad=1: only the centre tap sees data
        let d = dims(1, 1, 1, 3, 1);
        let mut out = [0.0f64];
        conv1d_forward(d, &[2.0], &[5.0, 7.0, 11.0], None, &mut out);
        assert_eq!(out, [14.0]);
    }

    #[test]
    fn kmax_ties_prefer_earlier() {
        assert_eq!(kmax_indices(&[1.0f32, 2.0, 2.0, 2.0], 2), vec![1, 2]);
    }

    #[test]
    fn maxpool_odd_length_right_pad() {
        let mut out = [0.0f32; 2];
        let mut arg = [0usize; 2];
        maxpool_halve_forward(1, 3, &[-1.0, -2.0, -3.0], &mut out, &mut arg);
        // windows (pad,-1,-2) and (-2,-3,pad): zero padding wins both
        assert_eq!(out, [0.0, 0.0]);
        assert_eq!(arg, [PAD_WINNER, PAD_WINNER]);
    }
}

//! Slice-level forward/backward kernels. The graph in [`super::graph`] does
//! shape checking and bookkeeping; these functions assume valid extents.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    /// Output spatial extent, or `None` when the kernel does not fit.
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let h = self.height + 2 * ph;
        let w = self.width + 2 * pw;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || h < kh || w < kw {
            return None;
        }
        Some(((h - kh) / sh + 1, (w - kw) / sw + 1))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }
}

/// Unfolds `x` (`C × H × W`) into a `(C·kh·kw) × (Ho·Wo)` matrix.
fn im2col<S: Scalar>(x: &[S], g: &ConvGeometry, ho: usize, wo: usize) -> Vec<S> {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let p = ho * wo;
    let mut col = vec![S::zero(); g.patch_len() * p];
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oh in 0..ho {
                    let ih = (oh * sh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for ow in 0..wo {
                        let iw = (ow * sw + kj) as isize - pw as isize;
                        if iw >= 0 && (iw as usize) < g.width {
                            dst[oh * wo + ow] = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<S: Scalar>(col: &[S], g: &ConvGeometry, ho: usize, wo: usize, dx: &mut [S]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let p = ho * wo;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oh in 0..ho {
                    let ih = (oh * sh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for ow in 0..wo {
                        let iw = (ow * sw + kj) as isize - pw as isize;
                        if iw >= 0 && (iw as usize) < g.width {
                            dst[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    weight: &[S],
    bias: Option<&[S]>,
    g: &ConvGeometry,
) -> Vec<S> {
    let (ho, wo) = g.output_hw().expect("geometry validated by caller");
    let p = ho * wo;
    let k = g.patch_len();
    let col = im2col(x, g, ho, wo);
    let mut out = vec![S::zero(); g.out_channels * p];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
        }
    }
    let beta = if bias.is_some() { S::one() } else { S::zero() };
    S::gemm(
        g.out_channels,
        k,
        p,
        S::one(),
        weight,
        k as isize,
        1,
        &col,
        p as isize,
        1,
        beta,
        &mut out,
        p as isize,
        1,
    );
    out
}

/// Returns `(dx, dweight, dbias)`, each only when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    dout: &[S],
    g: &ConvGeometry,
    need: (bool, bool, bool),
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let (ho, wo) = g.output_hw().expect("geometry validated by caller");
    let p = ho * wo;
    let k = g.patch_len();
    let (need_x, need_w, need_b) = need;
    let dw = need_w.then(|| {
        let col = im2col(x, g, ho, wo);
        let mut dw = vec![S::zero(); g.out_channels * k];
        // dW = dOut · colᵀ
        S::gemm(
            g.out_channels,
            p,
            k,
            S::one(),
            dout,
            p as isize,
            1,
            &col,
            1,
            p as isize,
            S::zero(),
            &mut dw,
            k as isize,
            1,
        );
        dw
    });
    let dx = need_x.then(|| {
        let mut dcol = vec![S::zero(); k * p];
        // dcol = Wᵀ · dOut
        S::gemm(
            k,
            g.out_channels,
            p,
            S::one(),
            weight,
            1,
            k as isize,
            dout,
            p as isize,
            1,
            S::zero(),
            &mut dcol,
            p as isize,
            1,
        );
        let mut dx = vec![S::zero(); g.in_channels * g.height * g.width];
        col2im(&dcol, g, ho, wo, &mut dx);
        dx
    });
    let db = need_b.then(|| {
        dout.chunks_exact(p)
            .map(|row| row.iter().copied().sum())
            .collect()
    });
    (dx, dw, db)
}

/// `y = x · Wᵀ + b` for `x` of `n × in`, `W` of `out × in`.
pub fn linear_forward<S: Scalar>(
    x: &[S],
    n: usize,
    fan_in: usize,
    weight: &[S],
    fan_out: usize,
    bias: Option<&[S]>,
) -> Vec<S> {
    let mut y = vec![S::zero(); n * fan_out];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(fan_out) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { S::one() } else { S::zero() };
    S::gemm(
        n,
        fan_in,
        fan_out,
        S::one(),
        x,
        fan_in as isize,
        1,
        weight,
        1,
        fan_in as isize,
        beta,
        &mut y,
        fan_out as isize,
        1,
    );
    y
}

#[allow(clippy::type_complexity)]
pub fn linear_backward<S: Scalar>(
    x: &[S],
    n: usize,
    fan_in: usize,
    weight: &[S],
    fan_out: usize,
    dy: &[S],
    need: (bool, bool, bool),
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let dx = need.0.then(|| matmul(dy, weight, n, fan_out, fan_in));
    let dw = need.1.then(|| {
        let mut dw = vec![S::zero(); fan_out * fan_in];
        S::gemm(
            fan_out,
            n,
            fan_in,
            S::one(),
            dy,
            1,
            fan_out as isize,
            x,
            fan_in as isize,
            1,
            S::zero(),
            &mut dw,
            fan_in as isize,
            1,
        );
        dw
    });
    let db = need.2.then(|| {
        let mut db = vec![S::zero(); fan_out];
        for row in dy.chunks_exact(fan_out) {
            db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        db
    });
    (dx, dw, db)
}

/// Plain row-major `m × k` by `k × n` product.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        S::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `aᵀ · b` for `a` of `k × m` and `b` of `k × n`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        S::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `a · bᵀ` for `a` of `m × k` and `b` of `n × k`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        S::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// Row-wise L2 normalization with a norm floor. Returns `(y, norms)`.
pub fn l2_normalize_rows<S: Scalar>(x: &[S], d: usize, eps: S) -> (Vec<S>, Vec<S>) {
    let mut y = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.len() / d);
    for row in x.chunks_exact(d) {
        let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt().max(eps);
        norms.push(norm);
        y.extend(row.iter().map(|&v| v / norm));
    }
    (y, norms)
}

pub fn l2_normalize_rows_backward<S: Scalar>(
    x: &[S],
    norms: &[S],
    dy: &[S],
    d: usize,
    eps: S,
) -> Vec<S> {
    let mut dx = Vec::with_capacity(x.len());
    for ((row, drow), &norm) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(norms) {
        if norm > eps {
            // y = x/‖x‖ ⇒ dx = (dy − y(y·dy)) / ‖x‖
            let dot: S = row.iter().zip(drow).map(|(&a, &b)| a * b).sum::<S>() / norm;
            dx.extend(
                row.iter()
                    .zip(drow)
                    .map(|(&a, &b)| (b - a / norm * dot) / norm),
            );
        } else {
            dx.extend(drow.iter().map(|&b| b / eps));
        }
    }
    dx
}

fn log_sum_exp<S: Scalar>(vals: impl Iterator<Item = S> + Clone) -> S {
    let max = vals.clone().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.map(|v| (v - max).exp()).sum::<S>().ln()
}

/// Softmax cross-entropy averaged over rows. Returns `(loss, dlogits)` where
/// the gradient is already divided by the row count.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], k: usize, labels: &[usize]) -> (S, Vec<S>) {
    let n = labels.len();
    let inv_n = S::one() / S::from_usize_lossy(n);
    let mut loss = S::zero();
    let mut grad = vec![S::zero(); logits.len()];
    for ((row, grow), &y) in logits.chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[y];
        for (g, &v) in grow.iter_mut().zip(row) {
            *g = (v - lse).exp() * inv_n;
        }
        grow[y] -= inv_n;
    }
    (loss * inv_n, grad)
}

/// Contrastive loss over `2N` consecutive-pair views (`0↔1`, `2↔3`, …).
///
/// Rows are L2-normalized first, cosine similarities divided by `tau` form the
/// logits, and each row's softmax excludes the row itself. Returns the mean
/// loss and its gradient with respect to the raw rows.
pub fn info_nce<S: Scalar>(z: &[S], rows: usize, d: usize, tau: S, eps: S) -> (S, Vec<S>) {
    let (zn, norms) = l2_normalize_rows(z, d, eps);
    let sim = matmul_nt(&zn, &zn, rows, d, rows);
    let (loss, dsim) = info_nce_from_similarity(&sim, rows, tau);
    // S = n·nᵀ ⇒ dn = (G + Gᵀ)·n
    let mut sym = vec![S::zero(); rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            sym[i * rows + j] = dsim[i * rows + j] + dsim[j * rows + i];
        }
    }
    let dzn = matmul(&sym, &zn, rows, rows, d);
    let dz = l2_normalize_rows_backward(z, &norms, &dzn, d, eps);
    (loss, dz)
}

/// Loss and `∂L/∂S` for a precomputed `rows × rows` similarity matrix.
pub fn info_nce_from_similarity<S: Scalar>(sim: &[S], rows: usize, tau: S) -> (S, Vec<S>) {
    let inv_rows = S::one() / S::from_usize_lossy(rows);
    let mut loss = S::zero();
    let mut grad = vec![S::zero(); rows * rows];
    for i in 0..rows {
        let pos = i ^ 1;
        let row = &sim[i * rows..(i + 1) * rows];
        let others = (0..rows).filter(|&k| k != i).map(|k| row[k] / tau);
        let lse = log_sum_exp(others);
        loss += lse - row[pos] / tau;
        let grow = &mut grad[i * rows..(i + 1) * rows];
        for k in (0..rows).filter(|&k| k != i) {
            grow[k] = (row[k] / tau - lse).exp() * inv_rows / tau;
        }
        grow[pos] -= inv_rows / tau;
    }
    (loss * inv_rows, grad)
}

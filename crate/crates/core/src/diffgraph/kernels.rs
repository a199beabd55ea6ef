//! Dense matrix kernels. Large products are split across threads by output row; each
//! output element is still accumulated in a fixed order, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use super::Tensor;

const PARALLEL_WORK: usize = 1 << 16;

fn row_times(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    for (p, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}

/// `a [m×k] · b [k×n]`.
pub(super) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.cols();
    let mut out = vec![0.0; m * n];
    if n == 0 || k == 0 {
        return Tensor::new(m, n, out).expect("shape");
    }
    let (ad, bd) = (a.data(), b.data());
    if m * k * n >= PARALLEL_WORK {
        out.par_chunks_mut(n)
            .zip(ad.par_chunks(k))
            .for_each(|(o, ar)| row_times(ar, bd, n, o));
    } else {
        for (o, ar) in out.chunks_mut(n).zip(ad.chunks(k)) {
            row_times(ar, bd, n, o);
        }
    }
    Tensor::new(m, n, out).expect("shape")
}

/// `g [m×n] · bᵀ` → gradient for the left operand.
pub(super) fn matmul_grad_lhs(g: &[f64], b: &Tensor, m: usize) -> Vec<f64> {
    let (k, n) = b.shape();
    let mut out = vec![0.0; m * k];
    if k == 0 {
        return out;
    }
    let bd = b.data();
    let body = |(o, gr): (&mut [f64], &[f64])| {
        for (p, ov) in o.iter_mut().enumerate() {
            let br = &bd[p * n..(p + 1) * n];
            *ov = gr.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    };
    if n == 0 {
        return out;
    }
    if m * k * n >= PARALLEL_WORK {
        out.par_chunks_mut(k).zip(g.par_chunks(n)).for_each(body);
    } else {
        out.chunks_mut(k).zip(g.chunks(n)).for_each(body);
    }
    out
}

/// `aᵀ · g [m×n]` → gradient for the right operand.
pub(super) fn matmul_grad_rhs(a: &Tensor, g: &[f64], n: usize) -> Vec<f64> {
    let (m, k) = a.shape();
    let mut out = vec![0.0; k * n];
    if n == 0 {
        return out;
    }
    let ad = a.data();
    let body = |(p, o): (usize, &mut [f64])| {
        for i in 0..m {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, gv) in o.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                *ov += av * gv;
            }
        }
    };
    if m * k * n >= PARALLEL_WORK {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

//! Independent reference implementations and a finite-difference checker.
#![allow(dead_code, clippy::needless_range_loop)]

use gmt_core::{rng_from_seed, Ctx, ParamId, ParamStore, Result, Tensor, Var};
use rand::Rng as _;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Triple-loop product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    assert_eq!(k, b.rows());
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a.get(i, l) * b.get(l, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

pub fn add_row(a: &Tensor, b: &[f64]) -> Tensor {
    let mut out = a.clone();
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            out.set(i, j, a.get(i, j) + b[j]);
        }
    }
    out
}

pub fn relu(a: &Tensor) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().map(|v| v.max(0.0)).collect()).unwrap()
}

/// exp / sum along rows (axis 1) or columns (axis 0), no max shift.
pub fn softmax(a: &Tensor, axis: usize) -> Tensor {
    let mut out = a.clone();
    let (r, c) = (a.rows(), a.cols());
    if axis == 1 {
        for i in 0..r {
            let z: f64 = (0..c).map(|j| a.get(i, j).exp()).sum();
            for j in 0..c {
                out.set(i, j, a.get(i, j).exp() / z);
            }
        }
    } else {
        for j in 0..c {
            let z: f64 = (0..r).map(|i| a.get(i, j).exp()).sum();
            for i in 0..r {
                out.set(i, j, a.get(i, j).exp() / z);
            }
        }
    }
    out
}

/// Row-wise `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn layer_norm(a: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let mut out = a.clone();
    let c = a.cols() as f64;
    for i in 0..a.rows() {
        let row = a.row(i);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        for j in 0..a.cols() {
            out.set(i, j, (row[j] - mean) / (var + eps).sqrt() * gamma[j] + beta[j]);
        }
    }
    out
}

/// Dense `D^-1/2 (A + I) D^-1/2`.
pub fn dense_normalized(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut a = Tensor::identity(n);
    for &(u, v) in edges {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.get(i, j) / (deg[i] * deg[j]).sqrt());
        }
    }
    out
}

pub fn scaled(a: &Tensor, s: f64) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().map(|v| v * s).collect()).unwrap()
}

pub fn cols(a: &Tensor, start: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(&[a.rows(), width]);
    for i in 0..a.rows() {
        for j in 0..width {
            out.set(i, j, a.get(i, start + j));
        }
    }
    out
}

pub fn hcat(parts: &[Tensor]) -> Tensor {
    let r = parts[0].rows();
    let c: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(&[r, c]);
    let mut off = 0;
    for p in parts {
        for i in 0..r {
            for j in 0..p.cols() {
                out.set(i, off + j, p.get(i, j));
            }
        }
        off += p.cols();
    }
    out
}

/// Reference single-head attention.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: bool, axis: usize) -> Tensor {
    let mut logits = matmul(q, &k.transpose());
    if scale {
        logits = scaled(&logits, 1.0 / (q.cols() as f64).sqrt());
    }
    matmul(&softmax(&logits, axis), v)
}

pub fn rel_linf(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b) / a.max_abs().max(b.max_abs()).max(1e-300)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences (step `h`) of the scalar `loss` against the analytic
/// gradient of every parameter; returns the worst norm-relative error
/// `|g_a - g_n| / max(|g_a| + |g_n|, 1e-12)` over parameters.
pub fn gradcheck<F>(store: &mut ParamStore, loss: F) -> f64
where
    F: Fn(&mut Ctx<'_>) -> Result<Var>,
{
    let h = 1e-5;
    let analytic = {
        let mut ctx = Ctx::eval(store);
        let l = loss(&mut ctx).unwrap();
        ctx.backward(l).unwrap()
    };
    let eval = |s: &ParamStore| {
        let mut ctx = Ctx::eval(s);
        let l = loss(&mut ctx).unwrap();
        ctx.tape.scalar(l)
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let base = store.value(id).clone();
        let mut numeric = vec![0.0; base.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = base.clone();
            plus.data_mut()[i] += h;
            store.set_value(id, plus);
            let lp = eval(store);
            let mut minus = base.clone();
            minus.data_mut()[i] -= h;
            store.set_value(id, minus);
            let lm = eval(store);
            *slot = (lp - lm) / (2.0 * h);
        }
        store.set_value(id, base.clone());
        let a = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; base.numel()]);
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let denom = (norm(&a) + norm(&numeric)).max(1e-12);
        let err = norm(&diff) / denom;
        if norm(&a) + norm(&numeric) > 1e-9 {
            worst = worst.max(err);
        }
    }
    worst
}

/// `sum(out * probe)` for a fixed random probe, a scalar that sees every
/// output entry.
pub fn probe_loss(ctx: &mut Ctx<'_>, out: Var, seed: u64) -> Result<Var> {
    let shape = ctx.tape.shape(out).to_vec();
    let probe = random_matrix(shape[0], shape[1], seed);
    let p = ctx.tape.constant(probe);
    let prod = ctx.tape.mul(out, p)?;
    Ok(ctx.tape.sum(prod))
}

/// Symmetric 0/1 adjacency without self loops.
pub fn dense_adjacency_of(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for &(u, v) in edges {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    a
}

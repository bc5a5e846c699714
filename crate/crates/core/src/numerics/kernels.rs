//! Slice-level numeric kernels shared by the tape and by plain evaluation.

use super::Activation;

/// `[m×k]·[k×n]`.
pub fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `[m×k]·[n×k]ᵀ`.
pub fn mm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `[m×p]ᵀ·[m×q]`.
pub fn mm_tn(x: &[f64], m: usize, p: usize, y: &[f64], q: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * q];
    for i in 0..m {
        let yrow = &y[i * q..(i + 1) * q];
        for (r, &xv) in x[i * p..(i + 1) * p].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, yv) in out[r * q..(r + 1) * q].iter_mut().zip(yrow) {
                *o += xv * yv;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(x: f64, kind: Activation) -> f64 {
    match kind {
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
    }
}

/// Derivative at input `x` whose forward value was `y`.
pub fn activation_grad(x: f64, y: f64, kind: Activation) -> f64 {
    match kind {
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn bce(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum()
}

pub fn pseudo_huber(x: f64, delta: f64) -> f64 {
    let r = x / delta;
    // δ²(√(1+r²) − 1) rewritten as δ²r²/(√(1+r²) + 1) to avoid cancellation near 0.
    delta * delta * r * r / ((1.0 + r * r).sqrt() + 1.0)
}

pub fn pseudo_huber_grad(x: f64, delta: f64) -> f64 {
    let r = x / delta;
    x / (1.0 + r * r).sqrt()
}

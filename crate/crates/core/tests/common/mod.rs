//! Reference computations written independently of the library.

#![allow(dead_code)]

use ndarray::Array2;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(matrix: &Array2<f64>) -> Vec<f64> {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        let scale: f64 = a.iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

/// `max_{i != j} |sum_k a[k, i] b[k, j]|` by explicit loops.
pub fn brute_force_coherence(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (p, m) = a.dim();
    let mut best = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut dot = 0.0;
            for k in 0..p {
                dot += a[[k, i]] * b[[k, j]];
            }
            best = best.max(dot.abs());
        }
    }
    best
}

/// Minimizes `1/2 (a - v)^2 + lambda a` over `a >= 0` on a uniform grid.
pub fn grid_prox(v: f64, lambda: f64, points: usize) -> f64 {
    let upper = v.abs() + lambda.abs() + 1.0;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=points {
        let a = upper * i as f64 / points as f64;
        let f = 0.5 * (a - v) * (a - v) + lambda * a;
        if f < best.0 {
            best = (f, a);
        }
    }
    best.1
}

//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use pce_core::dataset::{Arm, Dataset, Observation};
use pce_core::rng::{self, standard_normal};

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot = a[col].clone();
        for r in col + 1..k {
            let f = a[r][col] / pivot[col];
            for (x, p) in a[r][col..k].iter_mut().zip(&pivot[col..k]) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Least squares through the explicit normal equations `X'X b = X'y`.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..k {
            xty[i] += r[i] * yi;
            for j in 0..k {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    solve(xtx, xty)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn gradient(rows: &[Vec<f64>], z: &[f64], b: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; b.len()];
    for (r, &zi) in rows.iter().zip(z) {
        let eta: f64 = r.iter().zip(b).map(|(a, c)| a * c).sum();
        let resid = zi - sigmoid(eta);
        for (gi, ri) in g.iter_mut().zip(r) {
            *gi += resid * ri;
        }
    }
    g
}

/// Maximizes the Bernoulli log-likelihood by Polak-Ribiere conjugate
/// gradients, with a scalar Newton line search along each direction. No
/// Hessian matrix is formed.
pub fn logistic_oracle(rows: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut b = vec![0.0; k];
    let mut g = gradient(rows, z, &b);
    let mut d = g.clone();
    for iter in 0..10_000 {
        let gn: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-13 {
            break;
        }
        let rd: Vec<f64> = rows.iter().map(|r| r.iter().zip(&d).map(|(a, c)| a * c).sum()).collect();
        let mut t = 0.0;
        for _ in 0..50 {
            let (mut d1, mut d2) = (0.0, 0.0);
            for ((r, &zi), &s) in rows.iter().zip(z).zip(&rd) {
                let eta: f64 = r.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>() + t * s;
                let p = sigmoid(eta);
                d1 += (zi - p) * s;
                d2 -= p * (1.0 - p) * s * s;
            }
            let step = -d1 / d2;
            t += step;
            if step.abs() < 1e-15 * t.abs().max(1.0) {
                break;
            }
        }
        for (bi, di) in b.iter_mut().zip(&d) {
            *bi += t * di;
        }
        let g_new = gradient(rows, z, &b);
        let num: f64 = g_new.iter().zip(&g).map(|(a, c)| a * (a - c)).sum();
        let den: f64 = g.iter().map(|v| v * v).sum();
        let beta = if (iter + 1) % k == 0 { 0.0 } else { (num / den).max(0.0) };
        for (di, gi) in d.iter_mut().zip(&g_new) {
            *di = gi + beta * *di;
        }
        g = g_new;
    }
    b
}

pub fn treatment_row(o: &Observation) -> Vec<f64> {
    let mut r = vec![1.0];
    r.extend(&o.x);
    r
}

pub fn outcome_row(o: &Observation) -> Vec<f64> {
    let zi = o.z.indicator();
    let mut r = treatment_row(o);
    r.push(zi);
    r.push(o.m);
    r.extend(o.x.iter().map(|v| v * zi));
    r
}

pub fn ps_row(o: &Observation) -> Vec<f64> {
    let mut r = treatment_row(o);
    r.push(o.z.indicator());
    r
}

/// Small random fixture with linear structure in every model and noise
/// everywhere, so nothing is fitted exactly.
pub fn fixture(seed: u64, n: usize, p: usize) -> Dataset {
    let mut g = rng::stream(seed);
    loop {
        let obs: Vec<Observation> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| standard_normal(&mut g)).collect();
                let eta = 0.2 + 0.4 * x[0] - 0.3 * x.get(1).copied().unwrap_or(0.0);
                let z = if rng::open_unit(&mut g) < sigmoid(eta) { Arm::Treated } else { Arm::Control };
                let zi = z.indicator();
                let m = 0.5 + 0.3 * x.iter().sum::<f64>() + 0.8 * zi + 0.7 * standard_normal(&mut g);
                let y = 1.0 + x[0] - 0.5 * zi + 0.4 * m + zi * x[0] + 0.5 * standard_normal(&mut g);
                Observation { x, z, m, y }
            })
            .collect();
        if let Ok(d) = Dataset::new(obs) {
            return d;
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's numerics: likelihoods are maximized
//! by golden-section search, least squares are solved by Gaussian
//! elimination and the stacked sandwich is built from finite differences.

#![allow(dead_code)]

use pategen::data::{CombinedSample, SubjectRow};
use pategen::rng;
use pategen::simulation::{generate_dataset, ScenarioParams};

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Bernoulli log-likelihood of `s` on `[1, x]` at `(a0, a1)`.
pub fn loglik(xs: &[f64], ss: &[bool], a0: f64, a1: f64) -> f64 {
    xs.iter()
        .zip(ss)
        .map(|(&x, &s)| {
            let p = sigmoid(a0 + a1 * x);
            if s {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Logistic MLE by nested golden-section search on the profile likelihood.
pub fn brute_force_logistic(xs: &[f64], ss: &[bool]) -> (f64, f64) {
    let profile_a0 = |a1: f64| golden_max(|a0| loglik(xs, ss, a0, a1), -30.0, 30.0, 1e-10);
    let a1 = golden_max(|a1| loglik(xs, ss, profile_a0(a1), a1), -30.0, 30.0, 1e-9);
    (profile_a0(a1), a1)
}

/// Solves `A z = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut z = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * z[c]).sum();
        z[r] = (b[r] - s) / a[r][r];
    }
    z
}

pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| gauss_solve(a.to_vec(), (0..n).map(|i| f64::from(u8::from(i == j))).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Weighted least squares `(D'WD)⁻¹ D'Wy` from explicit sums.
pub fn normal_equations(design: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let k = design[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for ((d, &yi), &wi) in design.iter().zip(y).zip(w) {
        for a in 0..k {
            xty[a] += wi * d[a] * yi;
            for b in 0..k {
                xtx[a][b] += wi * d[a] * d[b];
            }
        }
    }
    gauss_solve(xtx, xty)
}

/// Stacked estimating functions for `(α0, α1, μ1, μ0)` at one subject:
/// the propensity score equations and the two weighted arm means.
fn psi(theta: &[f64; 4], x: f64, s: bool, t: bool, y: f64) -> [f64; 4] {
    let e = sigmoid(theta[0] + theta[1] * x);
    let sv = f64::from(u8::from(s));
    let q = (1.0 - e) / e;
    let (m1, m0) = if s {
        let tv = f64::from(u8::from(t));
        (tv * q * (y - theta[2]), (1.0 - tv) * q * (y - theta[3]))
    } else {
        (0.0, 0.0)
    };
    [sv - e, (sv - e) * x, m1, m0]
}

/// One subject as `(x, s, t, y)`; population subjects carry `t = false, y = 0`.
pub type Subject = (f64, bool, bool, f64);

pub fn subjects(sample: &CombinedSample) -> Vec<Subject> {
    sample
        .rows()
        .iter()
        .map(|r| {
            (
                r.covariates[0],
                r.in_trial,
                r.treated.unwrap_or(false),
                r.outcome.unwrap_or(0.0),
            )
        })
        .collect()
}

/// Sandwich SE of `μ1 - μ0` with the bread differentiated numerically.
/// `theta` must solve the stacked equations.
pub fn fd_sandwich_se(data: &[Subject], theta: [f64; 4]) -> f64 {
    let n = data.len() as f64;
    let h = 1e-6;
    let mut a = vec![vec![0.0; 4]; 4];
    for j in 0..4 {
        let mut up = theta;
        let mut dn = theta;
        up[j] += h;
        dn[j] -= h;
        for &(x, s, t, y) in data {
            let pu = psi(&up, x, s, t, y);
            let pd = psi(&dn, x, s, t, y);
            for i in 0..4 {
                a[i][j] -= (pu[i] - pd[i]) / (2.0 * h) / n;
            }
        }
    }
    let a_inv = invert(&a);
    let c = [0.0, 0.0, 1.0, -1.0];
    let row: Vec<f64> = (0..4).map(|j| (0..4).map(|i| c[i] * a_inv[i][j]).sum()).collect();
    let sum_sq: f64 = data
        .iter()
        .map(|&(x, s, t, y)| {
            let p = psi(&theta, x, s, t, y);
            let infl: f64 = (0..4).map(|j| row[j] * p[j]).sum();
            infl * infl
        })
        .sum();
    sum_sq.sqrt() / n
}

/// Solves the stacked equations: logistic MLE by brute force, then the
/// closed-form weighted arm means.
pub fn solve_stack(data: &[Subject]) -> [f64; 4] {
    let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
    let ss: Vec<bool> = data.iter().map(|d| d.1).collect();
    let (a0, a1) = brute_force_logistic(&xs, &ss);
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for &(x, s, t, y) in data {
        if s {
            let e = sigmoid(a0 + a1 * x);
            let q = (1.0 - e) / e;
            let k = usize::from(!t);
            num[k] += q * y;
            den[k] += q;
        }
    }
    [a0, a1, num[0] / den[0], num[1] / den[1]]
}

/// Combined sample from explicit subjects with covariate `x`.
pub fn sample_from(data: &[Subject]) -> CombinedSample {
    let rows = data
        .iter()
        .map(|&(x, s, t, y)| {
            if s {
                SubjectRow::trial(t, y, &[x])
            } else {
                SubjectRow::population(&[x])
            }
        })
        .collect();
    CombinedSample::new(rows, vec!["x".into()]).unwrap()
}

/// Generated sample at the reference selection setting.
pub fn reference_sample(n: usize, seed: u64) -> CombinedSample {
    let p = ScenarioParams::new(-3.76, 4.0, 0.0, 0.3, -0.03, -0.6, 0.98, n).unwrap();
    generate_dataset(&p, &mut rng::stream(seed, &[])).unwrap()
}

/// One PASS/FAIL line.
pub fn report(id: &str, ok: bool, detail: impl std::fmt::Display) -> bool {
    println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

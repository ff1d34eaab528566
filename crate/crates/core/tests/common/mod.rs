//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

use hfu_core::kernel::Kernel;
use hfu_core::sim::{increments, simulate_path, IncrementSeries, ProcessSpec};

pub fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut num = 1.0;
    let mut den = 1.0;
    for i in 0..k {
        num *= (n - i) as f64;
        den *= (i + 1) as f64;
    }
    num / den
}

/// Every increasing k-tuple of indices below m.
pub fn tuples(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

pub fn naive_u(h: &Kernel, x: &[f64], n: usize) -> f64 {
    let d = h.order();
    let mut s = 0.0;
    for t in tuples(x.len(), d) {
        let args: Vec<f64> = t.iter().map(|&i| x[i]).collect();
        s += h.eval(&args);
    }
    s / choose(n, d)
}

/// G₁ averaged over all (2d−1)! argument orders.
pub fn naive_g1(h: &Kernel, x: &[f64]) -> f64 {
    let d = h.order();
    let perms = permutations(2 * d - 1);
    let mut s = 0.0;
    for p in &perms {
        let y: Vec<f64> = p.iter().map(|&i| x[i]).collect();
        let mut a = vec![y[0]];
        a.extend_from_slice(&y[1..d]);
        let mut b = vec![y[0]];
        b.extend_from_slice(&y[d..]);
        s += h.eval(&a) * h.eval(&b);
    }
    s / perms.len() as f64
}

/// G₂ averaged over all (2d−2)! orders of the y arguments.
pub fn naive_g2(h: &Kernel, x1: f64, x2: f64, y: &[f64]) -> f64 {
    let d = h.order();
    let perms = permutations(2 * d - 2);
    let mut s = 0.0;
    for p in &perms {
        let z: Vec<f64> = p.iter().map(|&i| y[i]).collect();
        let mut a = vec![x1];
        a.extend_from_slice(&z[..d - 1]);
        let mut b = vec![x2];
        b.extend_from_slice(&z[d - 1..]);
        s += h.eval(&a) * h.eval(&b);
    }
    s / perms.len() as f64
}

pub fn naive_v1(h: &Kernel, x: &[f64], n: usize) -> f64 {
    let d = h.order();
    let mut s = 0.0;
    for t in tuples(x.len(), 2 * d - 1) {
        let args: Vec<f64> = t.iter().map(|&i| x[i]).collect();
        s += naive_g1(h, &args);
    }
    (d * d) as f64 * s / choose(n, 2 * d - 1)
}

pub fn naive_v2(h: &Kernel, x: &[f64], n: usize) -> f64 {
    let d = h.order();
    let mut s = 0.0;
    for t in tuples(x.len(), 2 * d - 2) {
        let y: Vec<f64> = t.iter().map(|&i| x[i]).collect();
        for j in 0..x.len() - 1 {
            s += naive_g2(h, x[j], x[j + 1], &y);
        }
    }
    (d * d) as f64 / n as f64 * s / choose(n, 2 * d - 2)
}

/// WLₜⁿ at t = k/n by the double loop.
pub fn naive_wl(raw: &[f64], n: usize, k: usize) -> f64 {
    let mut c = 0usize;
    for i in 0..k {
        for j in k..raw.len() {
            if raw[i].abs() <= raw[j].abs() {
                c += 1;
            }
        }
    }
    c as f64 / (n * n) as f64
}

pub fn unit_series(n: usize, seed: u64) -> IncrementSeries {
    let path = simulate_path(&ProcessSpec::constant(1.0), n, seed).unwrap();
    increments(&path, true).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

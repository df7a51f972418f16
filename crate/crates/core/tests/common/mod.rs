#![allow(dead_code)]

use margattn::Mat;

/// Central differences of `f` at `mu`, one coordinate at a time.
pub fn fd_grad<F>(f: F, mu: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let mut g = Vec::with_capacity(mu.len());
    let mut x = mu.to_vec();
    for j in 0..mu.len() {
        let mut row = Vec::with_capacity(mu[j].len());
        for a in 0..mu[j].len() {
            let orig = x[j][a];
            x[j][a] = orig + h;
            let fp = f(&x);
            x[j][a] = orig - h;
            let fm = f(&x);
            x[j][a] = orig;
            row.push((fp - fm) / (2.0 * h));
        }
        g.push(row);
    }
    g
}

pub fn l2(v: &[Vec<f64>]) -> f64 {
    v.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let diff: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect();
    l2(&diff) / l2(b)
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn mat(rows: &[&[f64]]) -> Mat {
    Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Softmax by direct exponentiation, for small well-scaled logits only.
pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

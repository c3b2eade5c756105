//! Norms on `ℝⁿ = E ⊕ F` with coordinate splitting: Euclidean inside each
//! block, `‖(x, y)‖ = ‖x‖ + ‖y‖` across blocks.

pub fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn split(v: &[f64], n_e: usize) -> f64 {
    euclid(&v[..n_e]) + euclid(&v[n_e..])
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn split_dist(a: &[f64], b: &[f64], n_e: usize) -> f64 {
    dist(&a[..n_e], &b[..n_e]) + dist(&a[n_e..], &b[n_e..])
}

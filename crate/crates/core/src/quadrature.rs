use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((mid - half * x, half * w));
    }
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

/// Periodic trapezoid nodes on `[0, 2 pi)`.
pub fn periodic_trapezoid(n: usize) -> Vec<(f64, f64)> {
    let h = 2.0 * PI / n as f64;
    (0..n).map(|k| (k as f64 * h, h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in 1..12 {
            let q = gauss_legendre(n, -1.0, 2.0);
            for deg in 0..(2 * n) {
                let num: f64 = q.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = (2f64.powi(deg as i32 + 1) - (-1f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                assert!((num - exact).abs() < 1e-11 * exact.abs().max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn trapezoid_integrates_trig() {
        let q = periodic_trapezoid(16);
        let s: f64 = q.iter().map(|(x, w)| w * x.cos().powi(2)).sum();
        assert!((s - PI).abs() < 1e-13);
    }
}

//! Independent reference computations used to check the library.
#![allow(dead_code)]

/// Untruncated Laplace CDF.
fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    if x < mu {
        0.5 * ((x - mu) / b).exp()
    } else {
        1.0 - 0.5 * (-(x - mu) / b).exp()
    }
}

/// CDF of a Laplace(mu, b) restricted to [lo, hi].
pub fn truncated_laplace_cdf(x: f64, mu: f64, b: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        return 0.0;
    }
    if x >= hi {
        return 1.0;
    }
    let (a, c) = (laplace_cdf(lo, mu, b), laplace_cdf(hi, mu, b));
    (laplace_cdf(x, mu, b) - a) / (c - a)
}

/// Mean and standard deviation of the truncated Laplace by Simpson quadrature.
pub fn truncated_laplace_moments(mu: f64, b: f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64| (-(x - mu).abs() / b).exp();
    let mut m = [0.0f64; 3];
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = pdf(x) * w;
        m[0] += p;
        m[1] += p * x;
        m[2] += p * x * x;
    }
    let mean = m[1] / m[0];
    let var = m[2] / m[0] - mean * mean;
    (mean, var.max(0.0).sqrt())
}

/// One-sample Kolmogorov-Smirnov statistic of values already mapped through
/// their hypothesised CDF.
pub fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| {
            let i = i as f64;
            ((i + 1.0) / n - v).max(v - i / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Exhaustive grid search for the point whose range residuals against
/// `(anchor, range_km)` pairs are smallest, refined by successive zooms.
pub fn grid_locate(anchors: &[([f64; 2], f64)], lo: f64, hi: f64) -> [f64; 2] {
    let cost = |p: [f64; 2]| -> f64 {
        anchors
            .iter()
            .map(|(a, r)| {
                let d = (p[0] - a[0]).hypot(p[1] - a[1]);
                (d - r).powi(2)
            })
            .sum()
    };
    let (mut x0, mut x1, mut y0, mut y1) = (lo, hi, lo, hi);
    let mut best = [lo, lo];
    for _ in 0..12 {
        let steps = 80;
        let mut best_c = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let p = [
                    x0 + (x1 - x0) * i as f64 / steps as f64,
                    y0 + (y1 - y0) * j as f64 / steps as f64,
                ];
                let c = cost(p);
                if c < best_c {
                    best_c = c;
                    best = p;
                }
            }
        }
        let (wx, wy) = ((x1 - x0) / 8.0, (y1 - y0) / 8.0);
        x0 = best[0] - wx;
        x1 = best[0] + wx;
        y0 = best[1] - wy;
        y1 = best[1] + wy;
    }
    best
}

/// Plain coefficient of determination.
pub fn r2(actual: &[f64], predicted: &[f64]) -> f64 {
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-9)
}

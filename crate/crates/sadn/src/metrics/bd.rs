//! Average rate and quality differences between two RD curves.
//!
//! Both summaries interpolate each curve — through exactly four points
//! with the unique cubic polynomial, otherwise with a monotone piecewise
//! cubic (Fritsch-Carlson slopes) — and integrate the gap analytically
//! over the quality (or log-rate) span the curves share.

use crate::{Error, Result};

/// Interpolant of `y(x)` through strictly increasing sample positions.
enum Fit {
    /// Coefficients in `(x - center)` powers, lowest first.
    Poly { coef: [f64; 4], center: f64 },
    Pchip { xs: Vec<f64>, ys: Vec<f64>, slopes: Vec<f64> },
}

impl Fit {
    fn build(xs: &[f64], ys: &[f64]) -> Result<Fit> {
        debug_assert_eq!(xs.len(), ys.len());
        if xs.len() == 4 {
            Ok(Fit::Poly { coef: cubic_through(xs, ys)?, center: xs.iter().sum::<f64>() / 4.0 })
        } else {
            Ok(Fit::Pchip { xs: xs.to_vec(), ys: ys.to_vec(), slopes: pchip_slopes(xs, ys) })
        }
    }

    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Fit::Poly { coef, center } => {
                let anti = |x: f64| -> f64 {
                    let u = x - center;
                    let mut acc = 0.0;
                    let mut p = u;
                    for (j, c) in coef.iter().enumerate() {
                        acc += c * p / (j + 1) as f64;
                        p *= u;
                    }
                    acc
                };
                anti(hi) - anti(lo)
            }
            Fit::Pchip { xs, ys, slopes } => {
                let mut acc = 0.0;
                for i in 0..xs.len() - 1 {
                    let (x0, x1) = (xs[i], xs[i + 1]);
                    let a = lo.max(x0);
                    let b = hi.min(x1);
                    if b <= a {
                        continue;
                    }
                    let h = x1 - x0;
                    // Hermite piece as a cubic in t = (x - x0)/h
                    let c0 = ys[i];
                    let c1 = h * slopes[i];
                    let c2 = -3.0 * ys[i] - 2.0 * h * slopes[i] + 3.0 * ys[i + 1] - h * slopes[i + 1];
                    let c3 = 2.0 * ys[i] + h * slopes[i] - 2.0 * ys[i + 1] + h * slopes[i + 1];
                    let anti = |t: f64| {
                        t * (c0 + t * (c1 / 2.0 + t * (c2 / 3.0 + t * c3 / 4.0)))
                    };
                    acc += h * (anti((b - x0) / h) - anti((a - x0) / h));
                }
                acc
            }
        }
    }
}

/// Coefficients of the unique cubic through four points, centered for
/// conditioning; solved by Gaussian elimination with partial pivoting.
fn cubic_through(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    let center = xs.iter().sum::<f64>() / 4.0;
    let mut m = [[0.0f64; 5]; 4];
    for i in 0..4 {
        let u = xs[i] - center;
        m[i][0] = 1.0;
        m[i][1] = u;
        m[i][2] = u * u;
        m[i][3] = u * u * u;
        m[i][4] = ys[i];
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-12 {
            return Err(Error::Numeric("degenerate sample positions for cubic fit".into()));
        }
        m.swap(col, pivot);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..5 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut coef = [0.0; 4];
    for col in (0..4).rev() {
        let mut v = m[col][4];
        for k in col + 1..4 {
            v -= m[col][k] * coef[k];
        }
        coef[col] = v / m[col][col];
    }
    Ok(coef)
}

/// Shape-preserving endpoint and interior slopes (Fritsch-Carlson).
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 2 {
        let d = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return vec![d, d];
    }
    let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] == 0.0 || delta[i] == 0.0 || delta[i - 1].signum() != delta[i].signum() {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    let endpoint = |h0: f64, h1: f64, d0: f64, d1: f64| -> f64 {
        let mut s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() || d0 == 0.0 {
            s = 0.0;
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            s = 3.0 * d0;
        }
        s
    };
    m[0] = endpoint(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

/// Sorts by `x`, validates, and splits into coordinate vectors.
fn prepare(points: &[(f64, f64)], what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if points.len() < 2 {
        return Err(Error::Numeric(format!("{what}: need at least two points")));
    }
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Numeric(format!("{what}: non-finite point ({x}, {y})")));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Numeric(format!(
                "{what}: duplicate sample position {}",
                pair[0].0
            )));
        }
    }
    Ok(sorted.into_iter().unzip())
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let lo = a[0].max(b[0]);
    let hi = a[a.len() - 1].min(b[b.len() - 1]);
    if hi <= lo {
        return Err(Error::Numeric(format!(
            "curves do not overlap: [{}, {}] vs [{}, {}]",
            a[0],
            a[a.len() - 1],
            b[0],
            b[b.len() - 1]
        )));
    }
    Ok((lo, hi))
}

/// Average rate change of `test` against `reference` in percent, over the
/// quality range both curves cover. Negative means `test` needs fewer
/// bits for the same quality. Points are `(rate, quality)` with positive
/// rates; each curve needs distinct quality values.
pub fn bd_rate(reference: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    let to_quality_axis = |pts: &[(f64, f64)], what: &str| -> Result<(Vec<f64>, Vec<f64>)> {
        for &(r, _) in pts {
            if !(r > 0.0) {
                return Err(Error::Numeric(format!("{what}: rate {r} must be positive")));
            }
        }
        let swapped: Vec<(f64, f64)> = pts.iter().map(|&(r, q)| (q, r.log10())).collect();
        prepare(&swapped, what)
    };
    let (qr, lr) = to_quality_axis(reference, "reference curve")?;
    let (qt, lt) = to_quality_axis(test, "test curve")?;
    let (lo, hi) = overlap(&qr, &qt)?;
    let fr = Fit::build(&qr, &lr)?;
    let ft = Fit::build(&qt, &lt)?;
    let avg = (ft.integrate(lo, hi) - fr.integrate(lo, hi)) / (hi - lo);
    Ok(100.0 * (10f64.powf(avg) - 1.0))
}

/// Average quality change of `test` against `reference` in dB, over the
/// log-rate range both curves cover. Positive means `test` reconstructs
/// better at the same rate.
pub fn bd_psnr(reference: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    let to_rate_axis = |pts: &[(f64, f64)], what: &str| -> Result<(Vec<f64>, Vec<f64>)> {
        for &(r, _) in pts {
            if !(r > 0.0) {
                return Err(Error::Numeric(format!("{what}: rate {r} must be positive")));
            }
        }
        let logged: Vec<(f64, f64)> = pts.iter().map(|&(r, q)| (r.log10(), q)).collect();
        prepare(&logged, what)
    };
    let (xr, yr) = to_rate_axis(reference, "reference curve")?;
    let (xt, yt) = to_rate_axis(test, "test curve")?;
    let (lo, hi) = overlap(&xr, &xt)?;
    let fr = Fit::build(&xr, &yr)?;
    let ft = Fit::build(&xt, &yt)?;
    Ok((ft.integrate(lo, hi) - fr.integrate(lo, hi)) / (hi - lo))
}

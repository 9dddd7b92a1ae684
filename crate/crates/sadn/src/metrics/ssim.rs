//! Structural similarity with the standard 11x11 Gaussian window.

use crate::autodiff::Tensor;
use crate::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalized 1D Gaussian window taps.
fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW - 1) as f64 / 2.0;
    let mut sum = 0.0;
    for (i, tap) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *tap = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *tap;
    }
    for tap in &mut w {
        *tap /= sum;
    }
    w
}

/// Rec. 601 luma for 3-channel input; single channels pass through and
/// anything else averages.
fn luma(t: &Tensor) -> Result<Vec<f64>> {
    let [n, c, h, w] = t.shape();
    if n != 1 {
        return Err(Error::Shape(format!("ssim wants batch 1, got {n}")));
    }
    let mut out = vec![0.0; h * w];
    match c {
        1 => out.copy_from_slice(t.data()),
        3 => {
            for i in 0..h {
                let r = t.row(0, 0, i);
                let g = t.row(0, 1, i);
                let b = t.row(0, 2, i);
                for j in 0..w {
                    out[i * w + j] = 0.299 * r[j] + 0.587 * g[j] + 0.114 * b[j];
                }
            }
        }
        _ => {
            for ch in 0..c {
                for i in 0..h {
                    for (j, &v) in t.row(0, ch, i).iter().enumerate() {
                        out[i * w + j] += v / c as f64;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Valid-region separable Gaussian blur: `(h, w)` to `(h-10, w-10)`.
fn blur(img: &[f64], h: usize, w: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let wo = w - (WINDOW - 1);
    let ho = h - (WINDOW - 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        let src = &img[i * w..(i + 1) * w];
        let dst = &mut rows[i * wo..(i + 1) * wo];
        for (k, &t) in taps.iter().enumerate() {
            for (d, &s) in dst.iter_mut().zip(&src[k..k + wo]) {
                *d += t * s;
            }
        }
    }
    let mut out = vec![0.0; ho * wo];
    for (k, &t) in taps.iter().enumerate() {
        for i in 0..ho {
            let src = &rows[(i + k) * wo..(i + k + 1) * wo];
            let dst = &mut out[i * wo..(i + 1) * wo];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

/// Mean structural similarity between two images in `[0, peak]` range,
/// computed on luma over all fully-valid window positions. Identical
/// inputs score exactly 1.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "ssim over mismatched shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("ssim peak {peak} must be positive")));
    }
    let [_, _, h, w] = a.shape();
    if h < WINDOW || w < WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {h}x{w}"
        )));
    }
    let x = luma(a)?;
    let y = luma(b)?;
    let taps = gaussian_window();

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
    let mu_x = blur(&x, h, w, &taps);
    let mu_y = blur(&y, h, w, &taps);
    let m_xx = blur(&xx, h, w, &taps);
    let m_yy = blur(&yy, h, w, &taps);
    let m_xy = blur(&xy, h, w, &taps);

    let c1 = (K1 * peak) * (K1 * peak);
    let c2 = (K2 * peak) * (K2 * peak);
    let mut acc = 0.0;
    for k in 0..mu_x.len() {
        let (mx, my) = (mu_x[k], mu_y[k]);
        let var_x = m_xx[k] - mx * mx;
        let var_y = m_yy[k] - my * my;
        let cov = m_xy[k] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        acc += num / den;
    }
    Ok(acc / mu_x.len() as f64)
}

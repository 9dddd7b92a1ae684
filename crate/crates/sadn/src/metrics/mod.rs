//! Objective quality and rate summaries used to compare codecs.

mod bd;
mod ssim;

pub use bd::{bd_psnr, bd_rate};
pub use ssim::ssim;

use std::io::{BufRead, Write};

use crate::autodiff::Tensor;
use crate::lightfield::SaiStack;
use crate::{Error, Result};

/// Identical inputs report this instead of an infinite ratio.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB over all elements, `10 log10(peak^2 /
/// MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "psnr over mismatched shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("psnr peak {peak} must be positive")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Numeric("psnr inputs must be finite".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    Ok(psnr_from_mse(mse, peak))
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Parallax-consistency score: PSNR pooled over the central cross of
/// epipolar slices.
///
/// Takes every horizontal slice at the central angular row (all spatial
/// rows, all channels) and every vertical slice at the central angular
/// column, accumulates one squared-error sum over them, and converts to
/// dB with the usual cap. Slicing both stacks the same way means the
/// score only rewards reconstructions whose *parallax structure* matches,
/// not just per-view pixels.
pub fn epi_psnr(reference: &SaiStack, test: &SaiStack, peak: f64) -> Result<f64> {
    if reference.a() != test.a()
        || reference.channels() != test.channels()
        || reference.view_height() != test.view_height()
        || reference.view_width() != test.view_width()
    {
        return Err(Error::Shape("epi_psnr over mismatched stacks".into()));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("psnr peak {peak} must be positive")));
    }
    let a = reference.a();
    let (mid_u, mid_v) = (a / 2, a / 2);
    let mut sq = 0.0;
    let mut count = 0usize;
    for ch in 0..reference.channels() {
        for s in 0..reference.view_height() {
            let er = reference.epi_horizontal(mid_u, s, ch)?;
            let et = test.epi_horizontal(mid_u, s, ch)?;
            sq += er
                .data()
                .iter()
                .zip(et.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<f64>();
            count += er.data().len();
        }
        for t in 0..reference.view_width() {
            let er = reference.epi_vertical(mid_v, t, ch)?;
            let et = test.epi_vertical(mid_v, t, ch)?;
            sq += er
                .data()
                .iter()
                .zip(et.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<f64>();
            count += er.data().len();
        }
    }
    if count == 0 {
        return Err(Error::Shape("epi_psnr over empty stacks".into()));
    }
    Ok(psnr_from_mse(sq / count as f64, peak))
}

/// One operating point of a codec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// A rate-distortion sweep, serialized as `bpp,psnr,ssim` CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(points: Vec<RdPoint>) -> Self {
        RdCurve { points }
    }

    /// `(rate, quality)` pairs for the distortion summaries.
    pub fn rate_psnr(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.bpp, p.psnr)).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "bpp,psnr,ssim")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.bpp, p.psnr, p.ssim)?;
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.eq_ignore_ascii_case("bpp,psnr,ssim")) {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Data(format!("line {}: missing {name}", lineno + 1)))?
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("line {}: bad {name}", lineno + 1)))
            };
            let p = RdPoint { bpp: next("bpp")?, psnr: next("psnr")?, ssim: next("ssim")? };
            if fields.next().is_some() {
                return Err(Error::Data(format!("line {}: trailing fields", lineno + 1)));
            }
            points.push(p);
        }
        Ok(RdCurve { points })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::{generate_lightfield, LayerSpec, SceneSpec, TextureSpec};

    #[test]
    fn psnr_of_constant_offset() {
        let a = Tensor::full([1, 1, 8, 8], 0.5);
        let b = Tensor::full([1, 1, 8, 8], 0.75);
        // MSE 1/16 against peak 1 is 10 log10 16
        let expect = 10.0 * 16f64.log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn psnr_caps_on_identical_inputs() {
        let a = Tensor::full([1, 1, 4, 4], 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let b = Tensor::full([1, 1, 4, 5], 0.3);
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    fn noise_stack(seed: u64) -> SaiStack {
        let spec = SceneSpec {
            a: 3,
            channels: 1,
            view_height: 12,
            view_width: 16,
            layers: vec![LayerSpec::full(TextureSpec::Noise { seed, scale: 2.0 }, 1.0)],
        };
        generate_lightfield(&spec).unwrap()
    }

    #[test]
    fn epi_psnr_caps_on_self_and_falls_with_error() {
        let lf = noise_stack(3);
        assert_eq!(epi_psnr(&lf, &lf, 1.0).unwrap(), PSNR_CAP_DB);
        let other = noise_stack(4);
        let v = epi_psnr(&lf, &other, 1.0).unwrap();
        assert!(v < 40.0, "unrelated stacks should score low, got {v}");
    }

    #[test]
    fn rd_curve_csv_round_trip() {
        let curve = RdCurve::new(vec![
            RdPoint { bpp: 0.1, psnr: 30.0, ssim: 0.91 },
            RdPoint { bpp: 0.25, psnr: 33.5, ssim: 0.95 },
        ]);
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let back = RdCurve::read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, curve);

        assert!(RdCurve::read_csv(std::io::BufReader::new(&b"bpp,psnr,ssim\n1,2\n"[..])).is_err());
        assert!(RdCurve::read_csv(std::io::BufReader::new(&b"0.1,abc,0.9\n"[..])).is_err());
    }
}

//! Stream-level compression: analysis, rounding, entropy coding, and
//! container framing — plus the exact inverse.
//!
//! Inputs whose per-view extent does not divide the trunk reduction are
//! edge-replicated view by view before analysis; the container records
//! the original extent and the decoder crops back to it, so callers
//! never see the padding.

use crate::autodiff::Tensor;
use crate::entropy::{
    build_table, decode_latent_planes, encode_latent_planes, read_stream, symbol_range,
    write_stream, Header, SymbolTable, PROB_FLOOR,
};
use crate::lightfield::{LensletImage, SaiStack};
use crate::model::SadnModel;
use crate::{Error, Result};

/// Smallest view extent at or above `extent` whose lenslet extent
/// (`a * extent`) divides the trunk reduction.
fn padded_view_extent(extent: usize, a: usize, reduction: usize) -> usize {
    let mut e = extent;
    while (a * e) % reduction != 0 {
        e += 1;
    }
    e
}

/// Edge-replicates every view out to `target_vh x target_vw` pixels.
fn pad_views(li: &LensletImage, target_vh: usize, target_vw: usize) -> Result<LensletImage> {
    let views = li.to_views();
    let [b, c, vh, vw] = views.tensor().shape();
    let mut out = Tensor::zeros([b, c, target_vh, target_vw]);
    for n in 0..b {
        for ch in 0..c {
            for i in 0..target_vh {
                let src_i = i.min(vh - 1);
                let src = views.tensor().row(n, ch, src_i);
                let dst = out.row_mut(n, ch, i);
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = src[j.min(vw - 1)];
                }
            }
        }
    }
    Ok(SaiStack::new(li.a(), out)?.to_lenslet())
}

/// Crops every view back to `vh x vw` pixels.
fn crop_views(li: &LensletImage, vh: usize, vw: usize) -> Result<LensletImage> {
    let views = li.to_views();
    let [b, c, _, _] = views.tensor().shape();
    let mut out = Tensor::zeros([b, c, vh, vw]);
    for n in 0..b {
        for ch in 0..c {
            for i in 0..vh {
                let src = views.tensor().row(n, ch, i);
                out.row_mut(n, ch, i).copy_from_slice(&src[..vw]);
            }
        }
    }
    Ok(SaiStack::new(li.a(), out)?.to_lenslet())
}

/// One entropy table per latent channel over the given symbol ranges.
fn channel_tables(model: &SadnModel, ranges: &[(i16, i16)]) -> Result<Vec<SymbolTable>> {
    let mu = &model.params["entropy.mu"];
    let log_s = &model.params["entropy.log_s"];
    ranges
        .iter()
        .enumerate()
        .map(|(ch, &(lo, hi))| {
            build_table(mu[[0, ch, 0, 0]], log_s[[0, ch, 0, 0]], lo as i32, hi as i32)
        })
        .collect()
}

/// Codelength of rounded latents under the model's continuous logistic
/// densities, in bits — the quantity the training loss optimizes. Once
/// the entropy parameters fit the latent statistics, the payload from
/// [`encode_lightfield`] lands within a few percent of this; for the
/// coder's own accounting, compare against
/// [`crate::entropy::ideal_payload_bits`] instead.
pub fn estimated_rate_bits(model: &SadnModel, latents_q: &Tensor) -> Result<f64> {
    let [_, c, _, _] = latents_q.shape();
    if c != model.config.m {
        return Err(Error::Shape(format!(
            "{c} latent channels, model prices {}",
            model.config.m
        )));
    }
    let mu = &model.params["entropy.mu"];
    let log_s = &model.params["entropy.log_s"];
    let [n, _, h, _] = latents_q.shape();
    let mut bits = 0.0;
    for b in 0..n {
        for ch in 0..c {
            let (m, s) = (mu[[0, ch, 0, 0]], log_s[[0, ch, 0, 0]]);
            for i in 0..h {
                for &v in latents_q.row(b, ch, i) {
                    bits += -crate::autodiff::graph::bin_prob(v, m, s, PROB_FLOOR).log2();
                }
            }
        }
    }
    Ok(bits)
}

/// Compresses a lenslet image into a self-describing byte stream.
pub fn encode_lightfield(model: &SadnModel, li: &LensletImage, lambda_index: u8) -> Result<Vec<u8>> {
    let cfg = &model.config;
    if li.a() != cfg.a {
        return Err(Error::ModelMismatch(format!(
            "input tiles {0}x{0} views, model wants {1}x{1}",
            li.a(),
            cfg.a
        )));
    }
    let [_, c, h, w] = li.tensor().shape();
    if c != cfg.channels {
        return Err(Error::ModelMismatch(format!(
            "input has {c} channels, model wants {}",
            cfg.channels
        )));
    }
    if cfg.a > u8::MAX as usize || c > u8::MAX as usize {
        return Err(Error::Format("container limits views and channels to 255".into()));
    }
    if h > u32::MAX as usize || w > u32::MAX as usize {
        return Err(Error::Format("container limits extent to u32".into()));
    }
    if !li.tensor().is_finite() {
        return Err(Error::Numeric("input contains non-finite samples".into()));
    }

    let (vh, vw) = (h / cfg.a, w / cfg.a);
    let r = cfg.reduction();
    let (pvh, pvw) = (padded_view_extent(vh, cfg.a, r), padded_view_extent(vw, cfg.a, r));
    let padded;
    let source = if (pvh, pvw) == (vh, vw) {
        li
    } else {
        padded = pad_views(li, pvh, pvw)?;
        &padded
    };

    let latents = model.analyze(source.tensor())?;
    let rounded = latents.map(f64::round);

    let mut ranges = Vec::with_capacity(cfg.m);
    for ch in 0..cfg.m {
        let (lo, hi) = symbol_range(&rounded, ch)?;
        if lo < i16::MIN as i64 || hi > i16::MAX as i64 {
            return Err(Error::Numeric(format!(
                "latent channel {ch} spans [{lo}, {hi}], outside the container's i16 range"
            )));
        }
        ranges.push((lo as i16, hi as i16));
    }
    let tables = channel_tables(model, &ranges)?;
    let payload = encode_latent_planes(&rounded, &tables)?;

    let header = Header {
        a: cfg.a as u8,
        channels: c as u8,
        height: h as u32,
        width: w as u32,
        model_checksum: model.checksum(),
        lambda_index,
        symbol_ranges: ranges,
        payload_len: payload.len() as u64,
    };
    let mut out = Vec::new();
    write_stream(&header, &payload, &mut out)?;
    Ok(out)
}

/// Decompresses a byte stream produced by [`encode_lightfield`] with the
/// same model. Samples come back clamped to `[0, 1]`.
pub fn decode_lightfield(model: &SadnModel, stream: &[u8]) -> Result<LensletImage> {
    let cfg = &model.config;
    let (header, payload) = read_stream(stream, cfg.m)?;
    if header.a as usize != cfg.a {
        return Err(Error::ModelMismatch(format!(
            "stream tiles {0}x{0} views, model wants {1}x{1}",
            header.a, cfg.a
        )));
    }
    if header.channels as usize != cfg.channels {
        return Err(Error::ModelMismatch(format!(
            "stream has {} channels, model wants {}",
            header.channels, cfg.channels
        )));
    }
    if header.model_checksum != model.checksum() {
        return Err(Error::ModelMismatch(
            "stream was produced by different weights (checksum mismatch)".into(),
        ));
    }
    let (h, w) = (header.height as usize, header.width as usize);
    if h == 0 || w == 0 || h % cfg.a != 0 || w % cfg.a != 0 {
        return Err(Error::Format(format!(
            "stream extent {h}x{w} does not tile into {0}x{0} views",
            cfg.a
        )));
    }

    let (vh, vw) = (h / cfg.a, w / cfg.a);
    let r = cfg.reduction();
    let (pvh, pvw) = (padded_view_extent(vh, cfg.a, r), padded_view_extent(vw, cfg.a, r));
    let (ph, pw) = (cfg.a * pvh, cfg.a * pvw);

    let tables = channel_tables(model, &header.symbol_ranges)?;
    let latents = decode_latent_planes(&payload, &tables, cfg.latent_shape(ph, pw))?;
    let recon = model.synthesize(&latents)?;
    let clamped = recon.map(|v| v.clamp(0.0, 1.0));
    let full = LensletImage::new(cfg.a, clamped)?;
    if (pvh, pvw) == (vh, vw) {
        Ok(full)
    } else {
        crop_views(&full, vh, vw)
    }
}

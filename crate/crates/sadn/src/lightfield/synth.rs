//! Procedurally generated light fields with known geometry.
//!
//! A scene is a back-to-front list of fronto-parallel layers. Each layer
//! carries a procedural texture on an infinite plane, a binary mask, and a
//! disparity `d`: the view at angular position `(u, v)` samples the layer
//! at spatial coordinates shifted by `d * (u - c), d * (v - c)` with `c`
//! the grid centre `(A-1)/2`. Integer disparities therefore translate
//! content by exactly `d` pixels between neighbouring views, which makes
//! these scenes ground truth for epipolar-slope checks. Masks are
//! evaluated as indicator functions at the shifted real-valued point, so
//! occlusion boundaries never blend.

use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::lightfield::SaiStack;
use crate::{Error, Result};

/// Procedural texture over an infinite plane, valued in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum TextureSpec {
    Flat { value: f64 },
    /// Squares of edge `period`, alternating `lo` and `hi`.
    Checker { period: f64, lo: f64, hi: f64 },
    /// `0.5 + 0.5 sin(2pi (fx x + fy y) + phase)`
    Sine { fx: f64, fy: f64, phase: f64 },
    /// Hash-lattice value noise, bilinearly interpolated, lattice spacing
    /// `scale` pixels.
    Noise { seed: u64, scale: f64 },
}

impl TextureSpec {
    fn sample(&self, x: f64, y: f64) -> f64 {
        match *self {
            TextureSpec::Flat { value } => value,
            TextureSpec::Checker { period, lo, hi } => {
                let k = (x / period).floor() + (y / period).floor();
                if (k as i64) % 2 == 0 {
                    hi
                } else {
                    lo
                }
            }
            TextureSpec::Sine { fx, fy, phase } => {
                0.5 + 0.5 * (std::f64::consts::TAU * (fx * x + fy * y) + phase).sin()
            }
            TextureSpec::Noise { seed, scale } => {
                let gx = x / scale;
                let gy = y / scale;
                let ix = gx.floor();
                let iy = gy.floor();
                let (fx, fy) = (gx - ix, gy - iy);
                let (ix, iy) = (ix as i64, iy as i64);
                let v00 = lattice(seed, ix, iy);
                let v01 = lattice(seed, ix + 1, iy);
                let v10 = lattice(seed, ix, iy + 1);
                let v11 = lattice(seed, ix + 1, iy + 1);
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                top + (bot - top) * fy
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TextureSpec::Flat { value } => value.is_finite(),
            TextureSpec::Checker { period, lo, hi } => period > 0.0 && lo.is_finite() && hi.is_finite(),
            TextureSpec::Sine { fx, fy, phase } => fx.is_finite() && fy.is_finite() && phase.is_finite(),
            TextureSpec::Noise { scale, .. } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad texture parameters: {self:?}")))
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic lattice value in `[0, 1)` for noise textures.
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(seed ^ mix(ix as u64) ^ mix((iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Region a layer covers, in scene coordinates `(x right, y down)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Full,
    Disk { cx: f64, cy: f64, r: f64 },
    /// Half-open box `[x0, x1) x [y0, y1)`.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl MaskSpec {
    fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            MaskSpec::Full => true,
            MaskSpec::Disk { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            MaskSpec::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

/// One fronto-parallel plane of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub texture: TextureSpec,
    pub disparity: f64,
    pub mask: MaskSpec,
    /// Per-channel gain; length 1 broadcasts.
    pub tint: Vec<f64>,
}

impl LayerSpec {
    pub fn full(texture: TextureSpec, disparity: f64) -> Self {
        LayerSpec { texture, disparity, mask: MaskSpec::Full, tint: vec![1.0] }
    }
}

/// Complete recipe for one synthetic light field.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub a: usize,
    pub channels: usize,
    /// Per-view spatial extents; the lenslet image is `a` times larger.
    pub view_height: usize,
    pub view_width: usize,
    /// Ordered back to front; later layers paint over earlier ones.
    pub layers: Vec<LayerSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.a == 0 || self.channels == 0 || self.view_height == 0 || self.view_width == 0 {
            return Err(Error::Config(format!("degenerate scene dimensions: {self:?}")));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("scene needs at least one layer".into()));
        }
        for layer in &self.layers {
            layer.texture.validate()?;
            if !layer.disparity.is_finite() {
                return Err(Error::Config("layer disparity must be finite".into()));
            }
            if layer.tint.len() != 1 && layer.tint.len() != self.channels {
                return Err(Error::Config(format!(
                    "tint has {} entries for {} channels",
                    layer.tint.len(),
                    self.channels
                )));
            }
        }
        Ok(())
    }
}

/// Renders the scene into a sub-aperture stack with values in `[0, 1]`.
pub fn generate_lightfield(spec: &SceneSpec) -> Result<SaiStack> {
    spec.validate()?;
    let a = spec.a;
    let c = (a as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros([a * a, spec.channels, spec.view_height, spec.view_width]);
    for u in 0..a {
        for v in 0..a {
            for s in 0..spec.view_height {
                for t in 0..spec.view_width {
                    let mut value = vec![0.0; spec.channels];
                    for layer in &spec.layers {
                        let x = t as f64 + layer.disparity * (v as f64 - c);
                        let y = s as f64 + layer.disparity * (u as f64 - c);
                        if !layer.mask.covers(x, y) {
                            continue;
                        }
                        let tex = layer.texture.sample(x, y);
                        for (ch, slot) in value.iter_mut().enumerate() {
                            let gain = if layer.tint.len() == 1 { layer.tint[0] } else { layer.tint[ch] };
                            *slot = (tex * gain).clamp(0.0, 1.0);
                        }
                    }
                    for ch in 0..spec.channels {
                        out[[u * a + v, ch, s, t]] = value[ch];
                    }
                }
            }
        }
    }
    SaiStack::new(a, out)
}

// ---- scene-file text format ---------------------------------------------
//
// Line-oriented key=value header followed by one `layer:` line per layer,
// back to front:
//
//   a=4
//   channels=1
//   height=32
//   width=48
//   layer: texture=checker period=4 lo=0.2 hi=0.9 disparity=0 mask=full
//   layer: texture=noise seed=7 scale=3 disparity=2 mask=disk cx=24 cy=16 r=10
//
// `#` starts a comment; blank lines are skipped.

fn parse_num<T: FromStr>(key: &str, val: &str) -> Result<T> {
    val.parse::<T>()
        .map_err(|_| Error::Data(format!("bad value {val:?} for {key}")))
}

fn kv(token: &str) -> Result<(&str, &str)> {
    token
        .split_once('=')
        .ok_or_else(|| Error::Data(format!("expected key=value, got {token:?}")))
}

fn parse_layer(rest: &str) -> Result<LayerSpec> {
    let mut fields = std::collections::BTreeMap::new();
    for token in rest.split_whitespace() {
        let (k, v) = kv(token)?;
        if fields.insert(k, v).is_some() {
            return Err(Error::Data(format!("duplicate layer field {k}")));
        }
    }
    let mut take = |k: &str| fields.remove(k);
    let texture = match take("texture") {
        Some("flat") => TextureSpec::Flat {
            value: parse_num("value", take("value").unwrap_or("0.5"))?,
        },
        Some("checker") => TextureSpec::Checker {
            period: parse_num("period", take("period").unwrap_or("4"))?,
            lo: parse_num("lo", take("lo").unwrap_or("0.1"))?,
            hi: parse_num("hi", take("hi").unwrap_or("0.9"))?,
        },
        Some("sine") => TextureSpec::Sine {
            fx: parse_num("fx", take("fx").unwrap_or("0.1"))?,
            fy: parse_num("fy", take("fy").unwrap_or("0.0"))?,
            phase: parse_num("phase", take("phase").unwrap_or("0"))?,
        },
        Some("noise") => TextureSpec::Noise {
            seed: parse_num("seed", take("seed").unwrap_or("1"))?,
            scale: parse_num("scale", take("scale").unwrap_or("3"))?,
        },
        Some(other) => return Err(Error::Data(format!("unknown texture {other:?}"))),
        None => return Err(Error::Data("layer is missing texture=".into())),
    };
    let disparity = parse_num("disparity", take("disparity").unwrap_or("0"))?;
    let mask = match take("mask") {
        None | Some("full") => MaskSpec::Full,
        Some("disk") => MaskSpec::Disk {
            cx: parse_num("cx", take("cx").ok_or_else(|| Error::Data("disk mask needs cx".into()))?)?,
            cy: parse_num("cy", take("cy").ok_or_else(|| Error::Data("disk mask needs cy".into()))?)?,
            r: parse_num("r", take("r").ok_or_else(|| Error::Data("disk mask needs r".into()))?)?,
        },
        Some("rect") => MaskSpec::Rect {
            x0: parse_num("x0", take("x0").ok_or_else(|| Error::Data("rect mask needs x0".into()))?)?,
            y0: parse_num("y0", take("y0").ok_or_else(|| Error::Data("rect mask needs y0".into()))?)?,
            x1: parse_num("x1", take("x1").ok_or_else(|| Error::Data("rect mask needs x1".into()))?)?,
            y1: parse_num("y1", take("y1").ok_or_else(|| Error::Data("rect mask needs y1".into()))?)?,
        },
        Some(other) => return Err(Error::Data(format!("unknown mask {other:?}"))),
    };
    let tint = match take("tint") {
        None => vec![1.0],
        Some(list) => list
            .split(',')
            .map(|v| parse_num("tint", v))
            .collect::<Result<Vec<f64>>>()?,
    };
    if let Some((k, _)) = fields.into_iter().next() {
        return Err(Error::Data(format!("unknown layer field {k}")));
    }
    Ok(LayerSpec { texture, disparity, mask, tint })
}

impl FromStr for SceneSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut a = None;
        let mut channels = None;
        let mut height = None;
        let mut width = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("layer:") {
                layers.push(parse_layer(rest).map_err(|e| {
                    Error::Data(format!("line {}: {e}", lineno + 1))
                })?);
                continue;
            }
            let (k, v) = kv(line).map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
            match k.trim() {
                "a" => a = Some(parse_num("a", v.trim())?),
                "channels" => channels = Some(parse_num("channels", v.trim())?),
                "height" => height = Some(parse_num("height", v.trim())?),
                "width" => width = Some(parse_num("width", v.trim())?),
                other => return Err(Error::Data(format!("line {}: unknown key {other}", lineno + 1))),
            }
        }
        let spec = SceneSpec {
            a: a.ok_or_else(|| Error::Data("scene is missing a=".into()))?,
            channels: channels.unwrap_or(1),
            view_height: height.ok_or_else(|| Error::Data("scene is missing height=".into()))?,
            view_width: width.ok_or_else(|| Error::Data("scene is missing width=".into()))?,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::estimate_epi_slope;

    fn noise_scene(a: usize, d: f64) -> SceneSpec {
        SceneSpec {
            a,
            channels: 1,
            view_height: 24,
            view_width: 32,
            layers: vec![LayerSpec::full(TextureSpec::Noise { seed: 9, scale: 2.5 }, d)],
        }
    }

    #[test]
    fn zero_disparity_makes_identical_views() {
        let lf = generate_lightfield(&noise_scene(3, 0.0)).unwrap();
        let reference = lf.view(0, 0).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(lf.view(u, v).unwrap(), reference);
            }
        }
    }

    #[test]
    fn integer_disparity_shifts_views_exactly() {
        let d = 1;
        let lf = generate_lightfield(&noise_scene(3, d as f64)).unwrap();
        let v0 = lf.view(1, 0).unwrap();
        let v1 = lf.view(1, 1).unwrap();
        // view (u, v+1) samples d pixels further right in scene space
        for s in 0..lf.view_height() {
            for t in 0..lf.view_width() - d {
                assert_eq!(v1[[0, 0, s, t]], v0[[0, 0, s, t + d]], "at ({s}, {t})");
            }
        }
    }

    #[test]
    fn epi_slope_matches_layer_disparity() {
        for d in [0i64, 1, 2] {
            let lf = generate_lightfield(&noise_scene(4, d as f64)).unwrap();
            let epi = lf.epi_horizontal(1, 10, 0).unwrap();
            assert_eq!(estimate_epi_slope(&epi, 3).unwrap(), d, "disparity {d}");
        }
    }

    #[test]
    fn occlusion_paints_front_layer_only() {
        let spec = SceneSpec {
            a: 2,
            channels: 1,
            view_height: 16,
            view_width: 16,
            layers: vec![
                LayerSpec::full(TextureSpec::Flat { value: 0.2 }, 0.0),
                LayerSpec {
                    texture: TextureSpec::Flat { value: 0.8 },
                    disparity: 0.0,
                    mask: MaskSpec::Disk { cx: 8.0, cy: 8.0, r: 4.0 },
                    tint: vec![1.0],
                },
            ],
        };
        let lf = generate_lightfield(&spec).unwrap();
        let v = lf.view(0, 0).unwrap();
        assert_eq!(v[[0, 0, 8, 8]], 0.8);
        assert_eq!(v[[0, 0, 0, 0]], 0.2);
        // indicator masks never blend: every sample is one of the two values
        for &x in lf.tensor().data() {
            assert!(x == 0.2 || x == 0.8, "blended value {x}");
        }
    }

    #[test]
    fn tint_scales_channels_independently() {
        let spec = SceneSpec {
            a: 1,
            channels: 3,
            view_height: 4,
            view_width: 4,
            layers: vec![LayerSpec {
                texture: TextureSpec::Flat { value: 0.5 },
                disparity: 0.0,
                mask: MaskSpec::Full,
                tint: vec![1.0, 0.5, 2.0],
            }],
        };
        let lf = generate_lightfield(&spec).unwrap();
        let v = lf.view(0, 0).unwrap();
        assert_eq!(v[[0, 0, 1, 1]], 0.5);
        assert_eq!(v[[0, 1, 1, 1]], 0.25);
        assert_eq!(v[[0, 2, 1, 1]], 1.0); // clamped
    }

    #[test]
    fn scene_text_round_trip() {
        let text = "\
            # two layers over a checkerboard\n\
            a=4\n\
            channels=2\n\
            height=24\n\
            width=32\n\
            layer: texture=checker period=4 lo=0.2 hi=0.9 disparity=0 mask=full\n\
            layer: texture=noise seed=7 scale=3 disparity=2 mask=disk cx=16 cy=12 r=6 tint=1.0,0.7\n";
        let spec: SceneSpec = text.parse().unwrap();
        assert_eq!(spec.a, 4);
        assert_eq!(spec.channels, 2);
        assert_eq!(spec.layers.len(), 2);
        assert_eq!(spec.layers[1].tint, vec![1.0, 0.7]);
        assert!(matches!(spec.layers[1].mask, MaskSpec::Disk { r, .. } if r == 6.0));
        generate_lightfield(&spec).unwrap();
    }

    #[test]
    fn scene_text_rejects_errors() {
        assert!("height=2\nwidth=2\n".parse::<SceneSpec>().is_err()); // missing a
        assert!("a=2\nheight=2\nwidth=2\nbogus=1\n".parse::<SceneSpec>().is_err());
        assert!("a=2\nheight=2\nwidth=2\nlayer: texture=wat\n".parse::<SceneSpec>().is_err());
        assert!("a=2\nheight=2\nwidth=2\nlayer: texture=flat mask=disk cx=1 cy=1\n"
            .parse::<SceneSpec>()
            .is_err());
        // tint length must match channel count
        assert!(
            "a=2\nchannels=3\nheight=2\nwidth=2\nlayer: texture=flat tint=1.0,0.5\n"
                .parse::<SceneSpec>()
                .is_err()
        );
    }
}

//! 8-bit image files in and out of `[0, 1]` tensors.
//!
//! Loading maps byte `k` to `k / 255`; saving clamps to `[0, 1]` and
//! rounds to the nearest byte, so a load/save cycle reproduces files
//! exactly. Lenslet images carry their angular resolution in a sidecar
//! `<file>.meta`; view stacks live in directories of
//! `view_UU_VV.png` files indexed by angular row and column.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, RgbImage};

use crate::autodiff::Tensor;
use crate::lightfield::{LensletImage, SaiStack};
use crate::{Error, Result};

/// Reads a gray or color image as `[1, C, H, W]` with `C` of 1 or 3.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?;
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
    );
    Ok(if gray {
        let buf = img.to_luma8();
        let (w, h) = (buf.width() as usize, buf.height() as usize);
        let data = buf.as_raw().iter().map(|&k| k as f64 / 255.0).collect();
        Tensor::from_vec([1, 1, h, w], data)?
    } else {
        let buf = img.to_rgb8();
        let (w, h) = (buf.width() as usize, buf.height() as usize);
        let raw = buf.as_raw();
        let mut data = vec![0.0; 3 * h * w];
        for ch in 0..3 {
            for i in 0..h * w {
                data[ch * h * w + i] = raw[3 * i + ch] as f64 / 255.0;
            }
        }
        Tensor::from_vec([1, 3, h, w], data)?
    })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[1, 1, H, W]` or `[1, 3, H, W]` tensor; the format follows
/// the file extension (`.png`, `.ppm`, `.pgm`).
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let [n, c, h, w] = t.shape();
    if n != 1 {
        return Err(Error::Shape(format!("image files hold batch 1, got {n}")));
    }
    match c {
        1 => {
            let raw: Vec<u8> = t.data().iter().map(|&v| to_byte(v)).collect();
            let buf = GrayImage::from_raw(w as u32, h as u32, raw)
                .expect("raw buffer sized from the tensor");
            buf.save(path)?;
        }
        3 => {
            let plane = h * w;
            let data = t.data();
            let mut raw = vec![0u8; 3 * plane];
            for i in 0..plane {
                for ch in 0..3 {
                    raw[3 * i + ch] = to_byte(data[ch * plane + i]);
                }
            }
            let buf = RgbImage::from_raw(w as u32, h as u32, raw)
                .expect("raw buffer sized from the tensor");
            buf.save(path)?;
        }
        other => {
            return Err(Error::Shape(format!("image files hold 1 or 3 channels, got {other}")))
        }
    }
    Ok(())
}

/// Sidecar path holding a lenslet image's angular resolution.
pub fn meta_path(image_path: &Path) -> PathBuf {
    let mut os = image_path.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

/// Writes the `a=N` sidecar next to a lenslet image.
pub fn write_meta(image_path: &Path, a: usize) -> Result<()> {
    std::fs::write(meta_path(image_path), format!("a={a}\n"))?;
    Ok(())
}

/// Reads the angular resolution from a lenslet image's sidecar.
pub fn read_meta(image_path: &Path) -> Result<usize> {
    let path = meta_path(image_path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("a=") {
            let a: usize = rest
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad angular resolution {rest:?}")))?;
            if a == 0 {
                return Err(Error::Data("angular resolution must be >= 1".into()));
            }
            return Ok(a);
        }
        return Err(Error::Data(format!("unrecognized sidecar line {line:?}")));
    }
    Err(Error::Data(format!("{} has no a= line", path.display())))
}

/// Loads a lenslet image plus its sidecar.
pub fn load_lenslet(path: &Path) -> Result<LensletImage> {
    let a = read_meta(path)?;
    let tensor = load_image(path)?;
    LensletImage::new(a, tensor)
}

/// Saves a lenslet image plus its sidecar.
pub fn save_lenslet(path: &Path, li: &LensletImage) -> Result<()> {
    save_image(path, li.tensor())?;
    write_meta(path, li.a())
}

fn view_file_name(u: usize, v: usize) -> String {
    format!("view_{u:02}_{v:02}.png")
}

/// Writes every view of a stack into `dir` as `view_UU_VV.png`.
pub fn save_views(dir: &Path, stack: &SaiStack) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let a = stack.a();
    for u in 0..a {
        for v in 0..a {
            let view = stack.view(u, v)?;
            save_image(&dir.join(view_file_name(u, v)), &view)?;
        }
    }
    Ok(())
}

/// Reads a complete `view_UU_VV.png` grid back into a stack, inferring
/// the angular resolution from the files present.
pub fn load_views(dir: &Path) -> Result<SaiStack> {
    let mut found = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(uv) = parse_view_name(name) {
            found.insert(uv, entry.path());
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!("{} contains no view_UU_VV.png files", dir.display())));
    }
    let a = found.keys().map(|&(u, v)| u.max(v)).max().expect("non-empty") + 1;
    if found.len() != a * a {
        return Err(Error::Data(format!(
            "{} views found, a complete {a}x{a} grid needs {}",
            found.len(),
            a * a
        )));
    }

    let mut stack: Option<Tensor> = None;
    for (&(u, v), path) in &found {
        let view = load_image(path)?;
        let [_, c, vh, vw] = view.shape();
        let tensor = stack.get_or_insert_with(|| Tensor::zeros([a * a, c, vh, vw]));
        if tensor.shape()[1..] != view.shape()[1..] {
            return Err(Error::Data(format!(
                "view ({u}, {v}) is {:?}, other views are {:?}",
                view.shape(),
                tensor.shape()
            )));
        }
        let b = u * a + v;
        for ch in 0..c {
            for i in 0..vh {
                tensor.row_mut(b, ch, i).copy_from_slice(view.row(0, ch, i));
            }
        }
    }
    SaiStack::new(a, stack.expect("at least one view"))
}

fn parse_view_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("view_")?;
    let rest = rest.strip_suffix(".png")?;
    let (u, v) = rest.split_once('_')?;
    if u.len() != 2 || v.len() != 2 {
        return None;
    }
    Some((u.parse().ok()?, v.parse().ok()?))
}

//! 8-bit RGB images, palettes, runway masks, and the conversions between
//! them and network tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid palette: {0}")]
    Palette(String),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RasterError>;

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::Shape(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(RasterError::Shape(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let pixels = color.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        RasterImage { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    pub fn colors(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Decode any supported image file, dropping alpha.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        RasterImage::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    /// PNG encoding of the image.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut buf,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(buf.into_inner())
    }

    pub fn from_encoded(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        RasterImage::new(w, h, img.into_raw())
    }
}

/// Row-major boolean occupancy grid.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(RasterError::Shape(format!("{} bits for a {width}x{height} mask", bits.len())));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Mask { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Grayscale PNG, 255 for set bits.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::save_buffer_with_format(
            path,
            &data,
            self.width,
            self.height,
            image::ExtendedColorType::L8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Mask::new(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())
    }

    /// Nearest-neighbour resample, for comparing masks across resolutions.
    pub fn resize_nearest(&self, w: u32, h: u32) -> Mask {
        let mut out = Mask::empty(w, h);
        for y in 0..h {
            let sy = ((y as u64 * self.height as u64) / h as u64) as u32;
            for x in 0..w {
                let sx = ((x as u64 * self.width as u64) / w as u64) as u32;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteClass {
    pub name: String,
    pub color: Rgb,
}

/// Named map colors. Must contain a `runway` class; colors are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub classes: Vec<PaletteClass>,
}

pub const RUNWAY: &str = "runway";
pub const BACKGROUND: &str = "background";
pub const BORDER: &str = "border";
pub const BUILDING: &str = "building";
pub const ROAD: &str = "road";

impl Palette {
    pub fn new(classes: Vec<(&str, Rgb)>) -> Result<Self> {
        let p = Palette {
            classes: classes.into_iter().map(|(n, c)| PaletteClass { name: n.to_string(), color: c }).collect(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Tan-grey vendor-style map colors.
    pub fn standard() -> Self {
        Palette::new(vec![
            (BACKGROUND, [242, 239, 233]),
            (RUNWAY, [232, 232, 232]),
            (BORDER, [200, 200, 200]),
            (BUILDING, [217, 208, 199]),
            (ROAD, [255, 255, 255]),
        ])
        .expect("standard palette is valid")
    }

    /// High-contrast red-black map colors.
    pub fn red_black() -> Self {
        Palette::new(vec![
            (BACKGROUND, [0, 0, 0]),
            (RUNWAY, [255, 0, 0]),
            (BORDER, [128, 0, 0]),
            (BUILDING, [64, 0, 0]),
            (ROAD, [176, 0, 0]),
        ])
        .expect("red-black palette is valid")
    }

    /// Built-in palette by name (`standard` or `redblack`).
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "standard" => Some(Palette::standard()),
            "redblack" | "red-black" | "red_black" => Some(Palette::red_black()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.color_of(RUNWAY).is_none() {
            return Err(RasterError::Palette("missing `runway` class".into()));
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.color == b.color {
                    return Err(RasterError::Palette(format!(
                        "classes `{}` and `{}` share color {:?}",
                        a.name, b.name, a.color
                    )));
                }
                if a.name == b.name {
                    return Err(RasterError::Palette(format!("duplicate class `{}`", a.name)));
                }
            }
        }
        Ok(())
    }

    pub fn color_of(&self, name: &str) -> Option<Rgb> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.color)
    }

    /// Palette color for `name`, or the runway color when the class is absent.
    pub fn color_or_runway(&self, name: &str) -> Rgb {
        self.color_of(name).or_else(|| self.color_of(RUNWAY)).expect("validated palette")
    }

    pub fn runway(&self) -> Rgb {
        self.color_of(RUNWAY).expect("validated palette")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Palette = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Built-in name or path to a JSON palette file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if let Some(p) = Palette::named(spec) {
            return Ok(p);
        }
        let path = Path::new(spec);
        if path.exists() {
            return Palette::from_json(&std::fs::read_to_string(path)?);
        }
        Err(RasterError::Palette(format!("unknown palette `{spec}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorPair {
    pub from: Rgb,
    pub to: Rgb,
}

/// Color substitution table; `from` colors are pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteMap {
    pub entries: Vec<ColorPair>,
}

impl PaletteMap {
    pub fn new(entries: Vec<(Rgb, Rgb)>) -> Result<Self> {
        let m = PaletteMap { entries: entries.into_iter().map(|(from, to)| ColorPair { from, to }).collect() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.entries.iter().enumerate() {
            if self.entries[i + 1..].iter().any(|b| b.from == a.from) {
                return Err(RasterError::Palette(format!("source color {:?} mapped twice", a.from)));
            }
        }
        Ok(())
    }

    /// Class-by-class map between two palettes, over the classes they share.
    pub fn between(from: &Palette, to: &Palette) -> Result<Self> {
        let entries = from
            .classes
            .iter()
            .filter_map(|c| to.color_of(&c.name).map(|t| (c.color, t)))
            .collect();
        PaletteMap::new(entries)
    }

    /// Every palette color mapped to itself; with snapping this coerces an
    /// image onto the palette.
    pub fn identity(p: &Palette) -> Self {
        PaletteMap { entries: p.classes.iter().map(|c| ColorPair { from: c.color, to: c.color }).collect() }
    }

    /// Reverse map; fails when two sources share a target.
    pub fn inverse(&self) -> Result<Self> {
        PaletteMap::new(self.entries.iter().map(|e| (e.to, e.from)).collect())
    }

    /// Parse `a:b` where both sides are built-in palette names.
    pub fn parse_named(spec: &str) -> Result<Self> {
        let (a, b) = spec
            .split_once(':')
            .ok_or_else(|| RasterError::Palette(format!("expected FROM:TO, got `{spec}`")))?;
        let pa = Palette::named(a).ok_or_else(|| RasterError::Palette(format!("unknown palette `{a}`")))?;
        let pb = Palette::named(b).ok_or_else(|| RasterError::Palette(format!("unknown palette `{b}`")))?;
        PaletteMap::between(&pa, &pb)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: PaletteMap = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn color_dist_sq(a: Rgb, b: Rgb) -> u32 {
    a.iter().zip(&b).map(|(&x, &y)| (x as i32 - y as i32).pow(2) as u32).sum()
}

/// Bilinear resample with half-pixel-center alignment; rounds to nearest.
pub fn resize_bilinear(img: &RasterImage, w: u32, h: u32) -> Result<RasterImage> {
    if w == 0 || h == 0 {
        return Err(RasterError::Shape(format!("target size {w}x{h} is empty")));
    }
    if (w, h) == img.dims() {
        return Ok(img.clone());
    }
    let (sw, sh) = (img.width as usize, img.height as usize);
    let axis = |dst: u32, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(w, sw);
    let ys = axis(h, sh);
    let src = &img.pixels;
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |x: usize, y: usize| src[(y * sw + x) * 3 + c] as f64;
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bot = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                let v = top + (bot - top) * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::new(w, h, out)
}

/// Place two equally sized images side by side, `a` on the left.
pub fn join_pair(a: &RasterImage, b: &RasterImage) -> Result<RasterImage> {
    if a.dims() != b.dims() {
        return Err(RasterError::Shape(format!(
            "cannot join {}x{} with {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let row = a.width as usize * 3;
    let mut out = Vec::with_capacity(a.pixels.len() * 2);
    for y in 0..a.height as usize {
        out.extend_from_slice(&a.pixels[y * row..(y + 1) * row]);
        out.extend_from_slice(&b.pixels[y * row..(y + 1) * row]);
    }
    RasterImage::new(a.width * 2, a.height, out)
}

/// Inverse of [`join_pair`].
pub fn split_pair(img: &RasterImage) -> Result<(RasterImage, RasterImage)> {
    if !img.width.is_multiple_of(2) {
        return Err(RasterError::Shape(format!("cannot split odd width {}", img.width)));
    }
    let half = img.width / 2;
    let row = half as usize * 3;
    let mut left = Vec::with_capacity(img.pixels.len() / 2);
    let mut right = Vec::with_capacity(img.pixels.len() / 2);
    for y in 0..img.height as usize {
        let r = &img.pixels[y * row * 2..(y + 1) * row * 2];
        left.extend_from_slice(&r[..row]);
        right.extend_from_slice(&r[row..]);
    }
    Ok((RasterImage::new(half, img.height, left)?, RasterImage::new(half, img.height, right)?))
}

/// Horizontal strip of equally tall images.
pub fn hstack(images: &[&RasterImage]) -> Result<RasterImage> {
    let Some(first) = images.first() else {
        return Err(RasterError::Shape("nothing to stack".into()));
    };
    let h = first.height;
    if images.iter().any(|i| i.height != h) {
        return Err(RasterError::Shape("hstack needs equal heights".into()));
    }
    let w: u32 = images.iter().map(|i| i.width).sum();
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h as usize {
        for img in images {
            let row = img.width as usize * 3;
            out.extend_from_slice(&img.pixels[y * row..(y + 1) * row]);
        }
    }
    RasterImage::new(w, h, out)
}

/// Substitute colors. With `snap`, every pixel first becomes the nearest
/// `from` color (squared Euclidean RGB, first entry wins ties).
pub fn remap_palette(img: &RasterImage, map: &PaletteMap, snap: bool) -> RasterImage {
    if map.entries.is_empty() {
        return img.clone();
    }
    let mut out = img.clone();
    for px in out.pixels.chunks_exact_mut(3) {
        let c = [px[0], px[1], px[2]];
        let entry = if snap {
            map.entries.iter().min_by_key(|e| color_dist_sq(e.from, c))
        } else {
            map.entries.iter().find(|e| e.from == c)
        };
        if let Some(e) = entry {
            px.copy_from_slice(&e.to);
        }
    }
    out
}

/// Image to a `1×3×H×W` tensor in [-1, 1].
pub fn to_unit(img: &RasterImage) -> Tensor<f32> {
    let (w, h) = (img.width as usize, img.height as usize);
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data).expect("consistent shape")
}

/// `1×3×H×W` tensor in [-1, 1] back to an image; values are clamped.
pub fn from_unit(t: &Tensor<f32>) -> Result<RasterImage> {
    let [1, 3, h, w] = *t.shape() else {
        return Err(RasterError::Shape(format!("expected 1x3xHxW tensor, got {:?}", t.shape())));
    };
    if h == 0 || w == 0 {
        return Err(RasterError::Shape("empty tensor".into()));
    }
    let plane = h * w;
    let d = t.data();
    let mut px = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = d[c * plane + i].clamp(-1.0, 1.0) * 127.5 + 127.5;
            px.push(v.round() as u8);
        }
    }
    RasterImage::new(w as u32, h as u32, px)
}

/// Runway occupancy: pixels within `tol` of the runway color that are not
/// closer to another palette class.
pub fn binarize_runway(img: &RasterImage, palette: &Palette, tol: f64) -> Mask {
    let runway = palette.runway();
    let tol_sq = tol.max(0.0) * tol.max(0.0);
    let others: Vec<Rgb> = palette.classes.iter().map(|c| c.color).filter(|&c| c != runway).collect();
    let bits = img
        .colors()
        .map(|c| {
            let d = color_dist_sq(c, runway);
            d as f64 <= tol_sq && others.iter().all(|&o| d <= color_dist_sq(c, o))
        })
        .collect();
    Mask { width: img.width, height: img.height, bits }
}

#[derive(Debug, Clone)]
pub struct MaskComparison {
    pub iou: f64,
    /// Set in `b` only.
    pub added: Mask,
    /// Set in `a` only.
    pub removed: Mask,
    pub diff_image: RasterImage,
}

pub const DIFF_ADDED: Rgb = [0, 200, 0];
pub const DIFF_REMOVED: Rgb = [220, 0, 0];
pub const DIFF_BOTH: Rgb = [96, 96, 96];
pub const DIFF_NEITHER: Rgb = [224, 224, 224];

/// Intersection-over-union plus added/removed regions of `b` relative to `a`.
pub fn compare_masks(a: &Mask, b: &Mask) -> Result<MaskComparison> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(RasterError::Shape(format!(
            "mask sizes {}x{} and {}x{} differ",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    let mut added = Vec::with_capacity(a.bits.len());
    let mut removed = Vec::with_capacity(a.bits.len());
    let mut px = Vec::with_capacity(a.bits.len() * 3);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
        added.push(y && !x);
        removed.push(x && !y);
        px.extend_from_slice(&match (x, y) {
            (false, true) => DIFF_ADDED,
            (true, false) => DIFF_REMOVED,
            (true, true) => DIFF_BOTH,
            (false, false) => DIFF_NEITHER,
        });
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(MaskComparison {
        iou,
        added: Mask { width: a.width, height: a.height, bits: added },
        removed: Mask { width: a.width, height: a.height, bits: removed },
        diff_image: RasterImage::new(a.width, a.height, px)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: u32, h: u32) -> RasterImage {
        let px = (0..w * h * 3).map(|i| ((i * 97 + i / 3 * 13) % 256) as u8).collect();
        RasterImage::new(w, h, px).unwrap()
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = checker(60, 60);
        assert_eq!(resize_bilinear(&img, 60, 60).unwrap(), img);
        let c = RasterImage::filled(120, 120, [10, 200, 77]);
        let r = resize_bilinear(&c, 25, 25).unwrap();
        assert!(r.colors().all(|p| p == [10, 200, 77]));
    }

    #[test]
    fn resize_two_pixels_to_four() {
        // Half-pixel centers: sample positions -0.25, 0.25, 0.75, 1.25 clamp
        // to [0, 1], giving weights 0, 0.25, 0.75, 1 on the white pixel.
        let img = RasterImage::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let r = resize_bilinear(&img, 4, 1).unwrap();
        let expected: Vec<u8> = [0.0f64, 0.25, 0.75, 1.0]
            .iter()
            .map(|w| (w * 255.0).round() as u8)
            .flat_map(|v| [v, v, v])
            .collect();
        assert_eq!(r.pixels(), &expected[..]);
        assert_eq!(&r.pixels()[..12], &[0, 0, 0, 64, 64, 64, 191, 191, 191, 255, 255, 255]);
    }

    #[test]
    fn join_and_split() {
        let a = checker(6, 4);
        let b = RasterImage::filled(6, 4, [1, 2, 3]);
        let j = join_pair(&a, &b).unwrap();
        assert_eq!(j.dims(), (12, 4));
        assert_eq!(j.get(0, 0), a.get(0, 0));
        assert_eq!(j.get(6, 3), [1, 2, 3]);
        assert_eq!(split_pair(&j).unwrap(), (a.clone(), b));
        assert!(matches!(join_pair(&a, &checker(4, 4)), Err(RasterError::Shape(_))));
        assert!(matches!(split_pair(&checker(7, 4)), Err(RasterError::Shape(_))));
    }

    #[test]
    fn palette_validation() {
        assert!(Palette::new(vec![(BACKGROUND, [0, 0, 0])]).is_err());
        assert!(Palette::new(vec![(RUNWAY, [1, 1, 1]), (BACKGROUND, [1, 1, 1])]).is_err());
        assert!(PaletteMap::new(vec![([1, 1, 1], [0, 0, 0]), ([1, 1, 1], [2, 2, 2])]).is_err());
        let json = r#"{"classes":[{"name":"runway","color":[232,232,232]},{"name":"background","color":[242,239,233]}]}"#;
        let p = Palette::from_json(json).unwrap();
        assert_eq!(p.runway(), [232, 232, 232]);
        let m = PaletteMap::from_json(r#"{"entries":[{"from":[242,239,233],"to":[0,0,0]}]}"#).unwrap();
        assert_eq!(m.entries[0].to, [0, 0, 0]);
    }

    #[test]
    fn remap_identity_and_inverse() {
        let std = Palette::standard();
        let mut img = RasterImage::filled(8, 8, std.color_of(BACKGROUND).unwrap());
        for x in 0..8 {
            img.set(x, 3, std.runway());
            img.set(x, 5, [1, 2, 3]);
        }
        assert_eq!(remap_palette(&img, &PaletteMap::identity(&std), false), img);
        let fwd = PaletteMap::between(&std, &Palette::red_black()).unwrap();
        let red = remap_palette(&img, &fwd, false);
        assert_eq!(red.get(0, 3), [255, 0, 0]);
        assert_eq!(red.get(0, 0), [0, 0, 0]);
        assert_eq!(red.get(0, 5), [1, 2, 3]);
        assert_eq!(remap_palette(&red, &fwd.inverse().unwrap(), false), img);
    }

    #[test]
    fn snapping_matches_nearest_color_oracle() {
        let tan = [242u8, 239, 233];
        let map = PaletteMap::new(vec![(tan, [0, 0, 0]), ([232, 232, 232], [255, 0, 0]), ([200, 200, 200], [90, 0, 0])]).unwrap();
        let mut px = Vec::new();
        for i in 0..64i32 {
            let d = [(i % 7) - 3, (i % 5) - 2, (i % 3) - 1];
            for c in 0..3 {
                px.push((tan[c] as i32 + d[c]).clamp(0, 255) as u8);
            }
        }
        let img = RasterImage::new(8, 8, px).unwrap();
        // every pixel is within distance 10 of tan
        assert!(img.colors().all(|c| (color_dist_sq(c, tan) as f64).sqrt() <= 10.0));
        let out = remap_palette(&img, &map, true);
        for (src, dst) in img.colors().zip(out.colors()) {
            let nearest = map.entries.iter().min_by_key(|e| color_dist_sq(e.from, src)).unwrap();
            assert_eq!(dst, nearest.to);
        }
        assert!(out.colors().all(|c| c == [0, 0, 0]));
    }

    #[test]
    fn unit_round_trip_all_values() {
        let px: Vec<u8> = (0..=255u8).flat_map(|v| [v, 255 - v, v / 2]).collect();
        let img = RasterImage::new(256, 1, px).unwrap();
        let t = to_unit(&img);
        assert_eq!(t.shape(), &[1, 3, 1, 256]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[255], 1.0);
        assert_eq!(from_unit(&t).unwrap(), img);
        let over = Tensor::from_vec(&[1, 3, 1, 1], vec![2.0, -3.0, 0.0]).unwrap();
        assert_eq!(from_unit(&over).unwrap().get(0, 0), [255, 0, 128]);
        assert!(from_unit(&Tensor::zeros(&[3, 4, 4])).is_err());
    }

    #[test]
    fn binarize_edges() {
        let p = Palette::standard();
        let all = RasterImage::filled(4, 4, p.runway());
        assert_eq!(binarize_runway(&all, &p, 0.0).count(), 16);
        let none = RasterImage::filled(4, 4, [0, 0, 255]);
        assert_eq!(binarize_runway(&none, &p, 30.0).count(), 0);
        // background tan is within 30 of runway grey but nearer to itself
        let bg = RasterImage::filled(4, 4, p.color_of(BACKGROUND).unwrap());
        assert_eq!(binarize_runway(&bg, &p, 30.0).count(), 0);
    }

    #[test]
    fn mask_comparison_cases() {
        let mut a = Mask::empty(6, 4);
        let mut b = Mask::empty(6, 4);
        for y in 1..3 {
            for x in 1..3 {
                a.set(x, y, true);
                b.set(x + 1, y, true);
            }
        }
        let cmp = compare_masks(&a, &b).unwrap();
        // brute force: overlap column x=2 (2 px), union columns 1..=3 (6 px)
        let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
        let union = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x || **y).count();
        assert_eq!((inter, union), (2, 6));
        assert!((cmp.iou - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cmp.added.count(), 2);
        assert_eq!(cmp.removed.count(), 2);
        assert_eq!(cmp.diff_image.get(3, 1), DIFF_ADDED);
        assert_eq!(cmp.diff_image.get(1, 1), DIFF_REMOVED);
        assert_eq!(cmp.diff_image.get(2, 1), DIFF_BOTH);

        let same = compare_masks(&a, &a).unwrap();
        assert_eq!(same.iou, 1.0);
        assert_eq!(same.added.count() + same.removed.count(), 0);
        let mut far = Mask::empty(6, 4);
        far.set(5, 3, true);
        assert_eq!(compare_masks(&a, &far).unwrap().iou, 0.0);
        assert_eq!(compare_masks(&Mask::empty(2, 2), &Mask::empty(2, 2)).unwrap().iou, 1.0);
        assert!(compare_masks(&a, &Mask::empty(4, 4)).is_err());
    }
}

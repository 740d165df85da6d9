//! Procedural runway scenes with registered satellite-style render,
//! map-style render, and exact runway mask.
//!
//! Every random draw comes from a ChaCha8 stream seeded with the scene seed,
//! consumed in a fixed order, so a spec always produces the same bytes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetManifest, ManifestRecord, Split};
use crate::raster::{self, join_pair, resize_bilinear, Mask, Palette, RasterError, RasterImage, Rgb};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub const SCENE_SIZES: [u32; 4] = [64, 128, 256, 600];
/// Largest A/B folder image side.
pub const UNPAIRED_MAX: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Single,
    Parallel,
    Cross,
    ThreeWay,
    FiveWay,
    Loop,
    Urban,
}

impl Layout {
    pub const ALL: [Layout; 7] = [
        Layout::Single,
        Layout::Parallel,
        Layout::Cross,
        Layout::ThreeWay,
        Layout::FiveWay,
        Layout::Loop,
        Layout::Urban,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Single => "single",
            Layout::Parallel => "parallel",
            Layout::Cross => "cross",
            Layout::ThreeWay => "three_way",
            Layout::FiveWay => "five_way",
            Layout::Loop => "loop",
            Layout::Urban => "urban",
        }
    }

    pub fn parse(s: &str) -> Option<Layout> {
        Layout::ALL.into_iter().find(|l| l.name() == s.replace('-', "_"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub size_px: u32,
    pub layout: Layout,
    pub palette: Palette,
    pub label_clutter: bool,
}

impl SceneSpec {
    pub fn new(seed: u64, size_px: u32, layout: Layout) -> Self {
        SceneSpec { seed, size_px, layout, palette: Palette::standard(), label_clutter: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !SCENE_SIZES.contains(&self.size_px) {
            return Err(SynthError::Spec(format!(
                "size {} not in {:?}",
                self.size_px, SCENE_SIZES
            )));
        }
        self.palette.validate()?;
        Ok(())
    }
}

/// Oriented rectangle from `a` to `b` with the given half width, in pixel
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub half_width: f64,
    /// Threshold bars at the `a` end.
    pub bars_at_a: bool,
    pub bars_at_b: bool,
}

impl Strip {
    fn frame(&self) -> ((f64, f64), (f64, f64), f64) {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let u = (dx / len, dy / len);
        (u, (-u.1, u.0), len)
    }

    /// Position along the axis and signed distance across it.
    pub fn local(&self, p: (f64, f64)) -> (f64, f64, f64) {
        let (u, n, len) = self.frame();
        let (rx, ry) = (p.0 - self.a.0, p.1 - self.a.1);
        (rx * u.0 + ry * u.1, rx * n.0 + ry * n.1, len)
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (t, s, len) = self.local(p);
        t >= 0.0 && t <= len && s.abs() <= self.half_width
    }

    pub fn direction(&self) -> f64 {
        (self.b.1 - self.a.1).atan2(self.b.0 - self.a.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub center: (f64, f64),
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0 && p.0 < self.x1 && p.1 >= self.y0 && p.1 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub rect: Rect,
    pub roof: Rgb,
}

/// Everything drawn in a scene, in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub size: u32,
    pub strips: Vec<Strip>,
    /// Arms radiating from a shared junction (three/five-way layouts).
    pub junction: Option<Junction>,
    pub buildings: Vec<Building>,
    pub roads: Vec<Strip>,
    pub glyphs: Vec<Rect>,
}

impl SceneGeometry {
    pub fn is_runway(&self, p: (f64, f64)) -> bool {
        self.strips.iter().any(|s| s.contains(p))
            || self.junction.is_some_and(|j| {
                let (dx, dy) = (p.0 - j.center.0, p.1 - j.center.1);
                dx * dx + dy * dy <= j.radius * j.radius
            })
    }

    /// Copy with one runway strip removed.
    pub fn without_strip(&self, index: usize) -> SceneGeometry {
        let mut g = self.clone();
        if index < g.strips.len() {
            g.strips.remove(index);
        }
        g
    }

    /// Exact rasterization sampled at pixel centers.
    pub fn runway_mask(&self) -> Mask {
        let mut m = Mask::empty(self.size, self.size);
        for y in 0..self.size {
            for x in 0..self.size {
                if self.is_runway((x as f64 + 0.5, y as f64 + 0.5)) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub sat: RasterImage,
    pub map: RasterImage,
    pub mask: Mask,
    pub spec: SceneSpec,
    pub geometry: SceneGeometry,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn unit(angle: f64) -> (f64, f64) {
    (angle.cos(), angle.sin())
}

fn centered_strip(c: (f64, f64), angle: f64, length: f64, half_width: f64) -> Strip {
    let u = unit(angle);
    Strip {
        a: (c.0 - u.0 * length / 2.0, c.1 - u.1 * length / 2.0),
        b: (c.0 + u.0 * length / 2.0, c.1 + u.1 * length / 2.0),
        half_width,
        bars_at_a: true,
        bars_at_b: true,
    }
}

fn radial_arms(rng: &mut ChaCha8Rng, c: (f64, f64), s: f64, count: usize, jitter_deg: f64, width: (f64, f64)) -> (Vec<Strip>, Junction) {
    let base = uniform(rng, 0.0, 2.0 * PI);
    let half_width = uniform(rng, width.0, width.1) * s / 2.0;
    let step = 2.0 * PI / count as f64;
    let mut arms = Vec::with_capacity(count);
    for i in 0..count {
        let ang = base + i as f64 * step + uniform(rng, -jitter_deg, jitter_deg).to_radians();
        let len = uniform(rng, 0.38, 0.48) * s;
        let u = unit(ang);
        arms.push(Strip {
            a: c,
            b: (c.0 + u.0 * len, c.1 + u.1 * len),
            half_width,
            bars_at_a: false,
            bars_at_b: true,
        });
    }
    // the hub covers every point where two neighbouring arms overlap
    let min_sep = step - 2.0 * jitter_deg.to_radians();
    (arms, Junction { center: c, radius: half_width / (min_sep / 2.0).sin() })
}

fn build_geometry(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> SceneGeometry {
    let s = spec.size_px as f64;
    let c = (s / 2.0 + uniform(rng, -0.05, 0.05) * s, s / 2.0 + uniform(rng, -0.05, 0.05) * s);
    let mut g = SceneGeometry {
        size: spec.size_px,
        strips: Vec::new(),
        junction: None,
        buildings: Vec::new(),
        roads: Vec::new(),
        glyphs: Vec::new(),
    };
    match spec.layout {
        Layout::Single => {
            let ang = uniform(rng, 0.0, PI);
            let len = uniform(rng, 0.7, 0.95) * s;
            let hw = uniform(rng, 0.08, 0.20) * s / 2.0;
            g.strips.push(centered_strip(c, ang, len, hw));
        }
        Layout::Parallel => {
            let ang = uniform(rng, 0.0, PI);
            let hw = uniform(rng, 0.08, 0.16) * s / 2.0;
            let gap = uniform(rng, 0.08, 0.15) * s;
            let offset = hw + gap / 2.0;
            let n = unit(ang + PI / 2.0);
            for sign in [-1.0, 1.0] {
                let len = uniform(rng, 0.6, 0.85) * s;
                let shift = uniform(rng, -0.05, 0.05) * s;
                let u = unit(ang);
                let cc = (c.0 + sign * offset * n.0 + shift * u.0, c.1 + sign * offset * n.1 + shift * u.1);
                g.strips.push(centered_strip(cc, ang, len, hw));
            }
        }
        Layout::Cross => {
            let a1 = uniform(rng, 0.0, PI);
            let a2 = a1 + uniform(rng, 50.0, 90.0).to_radians();
            for ang in [a1, a2] {
                let len = uniform(rng, 0.7, 0.95) * s;
                let hw = uniform(rng, 0.08, 0.16) * s / 2.0;
                g.strips.push(centered_strip(c, ang, len, hw));
            }
        }
        Layout::ThreeWay => {
            let (arms, j) = radial_arms(rng, c, s, 3, 20.0, (0.08, 0.16));
            g.strips = arms;
            g.junction = Some(j);
        }
        Layout::FiveWay => {
            let (arms, j) = radial_arms(rng, c, s, 5, 10.0, (0.08, 0.12));
            g.strips = arms;
            g.junction = Some(j);
        }
        Layout::Loop => {
            let ang = uniform(rng, 0.0, PI);
            let half_a = uniform(rng, 0.22, 0.34) * s;
            let half_b = uniform(rng, 0.14, 0.24) * s;
            let hw = uniform(rng, 0.08, 0.12) * s / 2.0;
            let u = unit(ang);
            let n = unit(ang + PI / 2.0);
            let corner = |su: f64, sn: f64| (c.0 + su * half_a * u.0 + sn * half_b * n.0, c.1 + su * half_a * u.1 + sn * half_b * n.1);
            let corners = [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];
            for i in 0..4 {
                let (p, q) = (corners[i], corners[(i + 1) % 4]);
                let (dx, dy) = (q.0 - p.0, q.1 - p.1);
                let l = (dx * dx + dy * dy).sqrt();
                let e = (dx / l * hw, dy / l * hw);
                // extend by the half width so corners close
                g.strips.push(Strip {
                    a: (p.0 - e.0, p.1 - e.1),
                    b: (q.0 + e.0, q.1 + e.1),
                    half_width: hw,
                    bars_at_a: false,
                    bars_at_b: false,
                });
            }
        }
        Layout::Urban => {
            let n_roads = rng.random_range(3..=6);
            for _ in 0..n_roads {
                let ang = uniform(rng, 0.0, PI);
                let through = (uniform(rng, 0.0, s), uniform(rng, 0.0, s));
                let width_px = rng.random_range(1..=3) as f64;
                let mut r = centered_strip(through, ang, 3.0 * s, width_px / 2.0);
                r.bars_at_a = false;
                r.bars_at_b = false;
                g.roads.push(r);
            }
            let n_buildings = rng.random_range(8..=20);
            for _ in 0..n_buildings {
                let w = uniform(rng, 0.04, 0.12) * s;
                let h = uniform(rng, 0.04, 0.12) * s;
                let x0 = uniform(rng, 0.0, s - w);
                let y0 = uniform(rng, 0.0, s - h);
                let roof = ROOFS[rng.random_range(0..ROOFS.len())];
                g.buildings.push(Building { rect: Rect { x0, y0, x1: x0 + w, y1: y0 + h }, roof });
            }
            let ang = uniform(rng, 0.0, PI);
            let len = uniform(rng, 0.7, 0.95) * s;
            let hw = uniform(rng, 0.08, 0.14) * s / 2.0;
            g.strips.push(centered_strip(c, ang, len, hw));
        }
    }
    if spec.label_clutter {
        let groups = rng.random_range(3..=8);
        for _ in 0..groups {
            let gx = uniform(rng, 0.0, s * 0.85);
            let gy = uniform(rng, 0.0, s * 0.95);
            let n = rng.random_range(3..=6);
            let mut x = gx;
            for _ in 0..n {
                let w = rng.random_range(2..=3) as f64;
                let h = rng.random_range(4..=5) as f64;
                g.glyphs.push(Rect { x0: x, y0: gy, x1: x + w, y1: gy + h });
                x += w + 1.0;
            }
        }
    }
    g
}

const ROOFS: [Rgb; 4] = [[168, 160, 152], [150, 92, 80], [190, 190, 186], [120, 118, 125]];
const GRASS: Rgb = [72, 104, 52];
const SOIL: Rgb = [139, 115, 85];
/// Base asphalt tone of runways in the satellite render.
pub const ASPHALT: Rgb = [105, 105, 110];
const MARKING: Rgb = [236, 236, 236];
const SAT_ROAD: Rgb = [150, 150, 150];
const GLYPH: Rgb = [60, 60, 60];

/// Multi-octave value noise in [0, 1]: bilinear interpolation of random
/// lattices with 4, 8 and 16 cells per side.
fn value_noise(rng: &mut ChaCha8Rng, size: u32) -> Vec<f64> {
    let n = size as usize;
    let mut out = vec![0.0; n * n];
    let octaves = [(4usize, 0.5), (8, 0.3), (16, 0.2)];
    for &(cells, amp) in &octaves {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        let at = |i: usize, j: usize| lattice[j * (cells + 1) + i];
        for y in 0..n {
            let fy = (y as f64 + 0.5) / n as f64 * cells as f64;
            let j = (fy.floor() as usize).min(cells - 1);
            let ty = fy - j as f64;
            for x in 0..n {
                let fx = (x as f64 + 0.5) / n as f64 * cells as f64;
                let i = (fx.floor() as usize).min(cells - 1);
                let tx = fx - i as f64;
                let top = at(i, j) + (at(i + 1, j) - at(i, j)) * tx;
                let bot = at(i, j + 1) + (at(i + 1, j + 1) - at(i, j + 1)) * tx;
                out[y * n + x] += amp * (top + (bot - top) * ty);
            }
        }
    }
    out
}

fn jitter(c: Rgb, d: i32) -> Rgb {
    [
        (c[0] as i32 + d).clamp(0, 255) as u8,
        (c[1] as i32 + d).clamp(0, 255) as u8,
        (c[2] as i32 + d).clamp(0, 255) as u8,
    ]
}

fn lerp_rgb(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let mut o = [0u8; 3];
    for i in 0..3 {
        o[i] = (a[i] as f64 + (b[i] as f64 - a[i] as f64) * t).round().clamp(0.0, 255.0) as u8;
    }
    o
}

fn on_marking(strip: &Strip, p: (f64, f64), size: f64) -> bool {
    let (t, s, len) = strip.local(p);
    if t < 0.0 || t > len || s.abs() > strip.half_width {
        return false;
    }
    // dashed centerline
    let line_half = (strip.half_width * 0.08).max(0.5);
    let period = 0.1 * size;
    if s.abs() <= line_half && t > 0.12 * len && t < 0.88 * len && (t % period) < 0.6 * period {
        return true;
    }
    // threshold bars: stripes across the width near the ends
    let in_bar_zone = |t: f64| t >= 0.02 * len && t <= 0.08 * len;
    let bar = (strip.bars_at_a && in_bar_zone(t)) || (strip.bars_at_b && in_bar_zone(len - t));
    if bar && s.abs() <= strip.half_width * 0.85 {
        let stripe = (strip.half_width * 0.85 * 2.0 / 7.0).max(1.0);
        let k = ((s + strip.half_width * 0.85) / stripe).floor() as i64;
        return k % 2 == 0;
    }
    false
}

fn render_sat(g: &SceneGeometry, mask: &Mask, rng: &mut ChaCha8Rng) -> RasterImage {
    let n = g.size;
    let terrain = value_noise(rng, n);
    let tarmac = value_noise(rng, n);
    let mut img = RasterImage::filled(n, n, GRASS);
    for y in 0..n {
        for x in 0..n {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let i = (y * n + x) as usize;
            let mut c = jitter(lerp_rgb(GRASS, SOIL, terrain[i]), rng.random_range(-8..=8));
            if g.roads.iter().any(|r| r.contains(p)) {
                c = jitter(SAT_ROAD, rng.random_range(-6..=6));
            }
            if let Some(b) = g.buildings.iter().rev().find(|b| b.rect.contains(p)) {
                c = jitter(b.roof, rng.random_range(-5..=5));
            }
            if mask.get(x, y) {
                let shade = ((tarmac[i] - 0.5) * 16.0).round() as i32;
                c = jitter(ASPHALT, shade + rng.random_range(-10..=10));
                if g.strips.iter().any(|s| on_marking(s, p, n as f64)) {
                    c = jitter(MARKING, rng.random_range(-6..=6));
                }
            }
            img.set(x, y, c);
        }
    }
    img
}

/// Flat palette rendering of a scene geometry.
pub fn render_map(g: &SceneGeometry, palette: &Palette) -> RasterImage {
    let n = g.size;
    let mask = g.runway_mask();
    let bg = palette.color_of(raster::BACKGROUND).unwrap_or([255, 255, 255]);
    let mut img = RasterImage::filled(n, n, bg);
    let road = palette.color_of(raster::ROAD);
    let building = palette.color_of(raster::BUILDING);
    let border = palette.color_of(raster::BORDER);
    for y in 0..n {
        for x in 0..n {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            if mask.get(x, y) {
                img.set(x, y, palette.runway());
                continue;
            }
            if let Some(c) = border {
                let near = (-1i64..=1).any(|dy| {
                    (-1i64..=1).any(|dx| {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        xx >= 0 && yy >= 0 && xx < n as i64 && yy < n as i64 && mask.get(xx as u32, yy as u32)
                    })
                });
                if near {
                    img.set(x, y, c);
                    continue;
                }
            }
            if g.glyphs.iter().any(|r| r.contains(p)) {
                img.set(x, y, GLYPH);
            } else if let Some(c) = building.filter(|_| g.buildings.iter().any(|b| b.rect.contains(p))) {
                img.set(x, y, c);
            } else if let Some(c) = road.filter(|_| g.roads.iter().any(|r| r.contains(p))) {
                img.set(x, y, c);
            }
        }
    }
    img
}

/// Render one scene. The same spec always yields the same bytes.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geometry = build_geometry(spec, &mut rng);
    let mask = geometry.runway_mask();
    let sat = render_sat(&geometry, &mask, &mut rng);
    let map = render_map(&geometry, &spec.palette);
    Ok(SceneSample { sat, map, mask, spec: spec.clone(), geometry })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Render `n` scenes with seeds `base_seed + i` and write the Pix2Pix and
/// CycleGAN folder layouts plus `manifest.jsonl` under `out_dir`.
///
/// Scene `i` uses `layouts[i % layouts.len()]`, or the template layout when
/// `layouts` is empty. The first `round(n · split_frac)` indices form the
/// training split.
pub fn generate_dataset(
    n: usize,
    base_seed: u64,
    template: &SceneSpec,
    layouts: &[Layout],
    out_dir: &Path,
    split_frac: f64,
    palette_name: &str,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(SynthError::Spec("dataset needs at least one scene".into()));
    }
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(SynthError::Spec(format!("split fraction {split_frac} not in (0, 1)")));
    }
    template.validate()?;
    for sub in ["sat", "map", "mask", "pairs", "A", "B"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let n_train = ((n as f64 * split_frac).round() as usize).min(n);
    let ab_size = template.size_px.min(UNPAIRED_MAX);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let layout = if layouts.is_empty() { template.layout } else { layouts[i % layouts.len()] };
        let spec = SceneSpec { seed: base_seed.wrapping_add(i as u64), layout, ..template.clone() };
        let sample = generate_scene(&spec)?;
        let name = format!("{i:05}.png");
        let rel = |dir: &str| PathBuf::from(dir).join(&name);
        sample.sat.save_png(&out_dir.join(rel("sat")))?;
        sample.map.save_png(&out_dir.join(rel("map")))?;
        sample.mask.save_png(&out_dir.join(rel("mask")))?;
        join_pair(&sample.sat, &sample.map)?.save_png(&out_dir.join(rel("pairs")))?;
        resize_bilinear(&sample.sat, ab_size, ab_size)?.save_png(&out_dir.join(rel("A")))?;
        resize_bilinear(&sample.map, ab_size, ab_size)?.save_png(&out_dir.join(rel("B")))?;
        records.push(ManifestRecord {
            id: format!("synth-{:05}", i),
            icao: None,
            lat: None,
            lon: None,
            seed: Some(spec.seed),
            layout: Some(spec.layout),
            sat_path: rel("sat"),
            map_path: rel("map"),
            mask_path: Some(rel("mask")),
            pair_path: Some(rel("pairs")),
            a_path: Some(rel("A")),
            b_path: Some(rel("B")),
            split: if i < n_train { Split::Train } else { Split::Val },
            palette: palette_name.to_string(),
        });
    }
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), records);
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

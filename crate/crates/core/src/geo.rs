//! Airport database parsing and spherical Web-Mercator math.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RasterImage;

/// Spherical Mercator radius used by web tile providers.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Projection cutoff, in degrees of latitude.
pub const MAX_LATITUDE: f64 = 85.05;
pub const MAX_ZOOM: u32 = 22;
pub const TILE_SIZE: f64 = 256.0;
pub const SQ_METERS_PER_SQ_MILE: f64 = 2_589_988.110_336;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("failed to read airport database: {0}")]
    Io(#[from] std::io::Error),
    #[error("airport database contains no valid records ({skipped} lines skipped)")]
    EmptyDataset { skipped: usize },
    #[error("latitude {0} is outside the Web-Mercator projection")]
    OutOfProjection(f64),
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("invalid zoom spec: {0}")]
    InvalidZoom(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(GeoError::InvalidCoordinate(format!("latitude {lat}")));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(GeoError::InvalidCoordinate(format!("longitude {lon}")));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirportRecord {
    pub icao: String,
    pub name: String,
    pub location: GeoPoint,
}

/// Returns true for four-character uppercase alphanumeric codes.
pub fn is_valid_icao(code: &str) -> bool {
    code.len() == 4 && code.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoomSpec {
    pub zoom: u32,
    pub image_px: u32,
}

impl Default for ZoomSpec {
    fn default() -> Self {
        ZoomSpec { zoom: 18, image_px: 1200 }
    }
}

impl ZoomSpec {
    pub fn new(zoom: u32, image_px: u32) -> Result<Self> {
        if zoom > MAX_ZOOM {
            return Err(GeoError::InvalidZoom(format!("zoom {zoom} exceeds {MAX_ZOOM}")));
        }
        if image_px == 0 {
            return Err(GeoError::InvalidZoom("image side must be positive".into()));
        }
        Ok(ZoomSpec { zoom, image_px })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbFormat {
    /// Colon-separated legacy layout: ICAO first, decimal lat/lon last.
    PartowColon,
    /// `icao,name,lat,lon`, header optional.
    SimpleCsv,
}

impl DbFormat {
    /// Guess the layout from the first non-empty line.
    pub fn sniff(text: &str) -> DbFormat {
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        if first.matches(':').count() >= 3 && !first.contains(',') {
            DbFormat::PartowColon
        } else {
            DbFormat::SimpleCsv
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAirports {
    pub records: Vec<AirportRecord>,
    /// Lines that were present but not turned into a record.
    pub skipped: usize,
}

fn make_record(icao: &str, name: &str, lat: &str, lon: &str) -> Option<AirportRecord> {
    let icao = icao.trim().to_ascii_uppercase();
    if !is_valid_icao(&icao) {
        return None;
    }
    let lat: f64 = lat.trim().parse().ok()?;
    let lon: f64 = lon.trim().parse().ok()?;
    // (0, 0) marks an unknown location in the source data.
    if lat == 0.0 && lon == 0.0 {
        return None;
    }
    let location = GeoPoint::new(lat, lon).ok()?;
    Some(AirportRecord { icao, name: name.trim().to_string(), location })
}

/// Parse an airport database. Rows with an invalid ICAO code, unparsable or
/// out-of-range coordinates, or the (0, 0) placeholder are skipped and
/// counted.
pub fn parse_airport_db<R: Read>(mut source: R, format: DbFormat) -> Result<ParsedAirports> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    match format {
        DbFormat::PartowColon => {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let fields: Vec<&str> = line.split(':').collect();
                let rec = if fields.len() >= 4 {
                    let n = fields.len();
                    let name = if n >= 5 { fields[2] } else { "" };
                    make_record(fields[0], name, fields[n - 2], fields[n - 1])
                } else {
                    None
                };
                match rec {
                    Some(r) => records.push(r),
                    None => skipped += 1,
                }
            }
        }
        DbFormat::SimpleCsv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            for (i, row) in rdr.records().enumerate() {
                let row = match row {
                    Ok(r) => r,
                    Err(_) => {
                        skipped += 1;
                        continue;
                    }
                };
                if row.iter().all(|f| f.is_empty()) {
                    continue;
                }
                if i == 0 && row.get(0).is_some_and(|f| f.eq_ignore_ascii_case("icao")) {
                    continue;
                }
                let rec = if row.len() >= 4 {
                    make_record(&row[0], &row[1], &row[2], &row[3])
                } else {
                    None
                };
                match rec {
                    Some(r) => records.push(r),
                    None => skipped += 1,
                }
            }
        }
    }
    if records.is_empty() {
        return Err(GeoError::EmptyDataset { skipped });
    }
    Ok(ParsedAirports { records, skipped })
}

/// Serialize records in the given layout; parsing the output yields the same
/// records.
pub fn write_airport_db<W: Write>(records: &[AirportRecord], format: DbFormat, out: W) -> Result<()> {
    match format {
        DbFormat::SimpleCsv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["icao", "name", "lat", "lon"])?;
            for r in records {
                w.write_record([
                    r.icao.clone(),
                    r.name.clone(),
                    r.location.lat.to_string(),
                    r.location.lon.to_string(),
                ])?;
            }
            w.flush()?;
        }
        DbFormat::PartowColon => {
            let mut out = out;
            for r in records {
                let name = r.name.replace(':', " ");
                writeln!(out, "{}:N/A:{}:N/A:N/A:{}:{}", r.icao, name, r.location.lat, r.location.lon)?;
            }
        }
    }
    Ok(())
}

fn check_projection(lat: f64) -> Result<()> {
    if !lat.is_finite() || lat.abs() >= MAX_LATITUDE {
        return Err(GeoError::OutOfProjection(lat));
    }
    Ok(())
}

fn check_zoom(zoom: u32) -> Result<()> {
    if zoom > MAX_ZOOM {
        return Err(GeoError::InvalidZoom(format!("zoom {zoom} exceeds {MAX_ZOOM}")));
    }
    Ok(())
}

fn world_size(zoom: u32) -> f64 {
    TILE_SIZE * 2f64.powi(zoom as i32)
}

/// Meters per pixel at `lat` and `zoom`.
pub fn ground_resolution(lat: f64, zoom: u32) -> Result<f64> {
    check_projection(lat)?;
    check_zoom(zoom)?;
    Ok((lat * PI / 180.0).cos() * 2.0 * PI * EARTH_RADIUS_M / world_size(zoom))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub side_m: f64,
    pub area_sq_mi: f64,
    /// Corners in order north-west, north-east, south-east, south-west.
    pub bbox: [GeoPoint; 4],
}

/// Ground coverage of a square image centered on `center`.
pub fn footprint(center: GeoPoint, spec: ZoomSpec) -> Result<Footprint> {
    let res = ground_resolution(center.lat, spec.zoom)?;
    let side_m = spec.image_px as f64 * res;
    let area_sq_mi = side_m * side_m / SQ_METERS_PER_SQ_MILE;
    let c = latlon_to_world_pixel(center, spec.zoom)?;
    let half = spec.image_px as f64 / 2.0;
    let corner = |dx: f64, dy: f64| world_pixel_to_latlon(WorldPixel { x: c.x + dx, y: c.y + dy }, spec.zoom);
    Ok(Footprint {
        side_m,
        area_sq_mi,
        bbox: [corner(-half, -half), corner(half, -half), corner(half, half), corner(-half, half)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPixel {
    pub x: f64,
    pub y: f64,
}

/// Global pixel coordinates on the `256·2^zoom` canvas; y grows southward.
pub fn latlon_to_world_pixel(p: GeoPoint, zoom: u32) -> Result<WorldPixel> {
    check_projection(p.lat)?;
    check_zoom(zoom)?;
    let size = world_size(zoom);
    let phi = p.lat.to_radians();
    let x = (p.lon + 180.0) / 360.0 * size;
    let y = (0.5 - (phi.tan() + 1.0 / phi.cos()).ln() / (2.0 * PI)) * size;
    Ok(WorldPixel { x, y })
}

/// Inverse of [`latlon_to_world_pixel`]; longitude wraps into [-180, 180].
pub fn world_pixel_to_latlon(px: WorldPixel, zoom: u32) -> GeoPoint {
    let size = world_size(zoom);
    let mut lon = px.x / size * 360.0 - 180.0;
    if !(-180.0..=180.0).contains(&lon) {
        lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
    }
    let n = PI * (1.0 - 2.0 * px.y / size);
    let lat = n.sinh().atan().to_degrees().clamp(-90.0, 90.0);
    GeoPoint { lat, lon }
}

const DOT_COLOR: [u8; 3] = [24, 24, 24];

/// Equirectangular scatter of airport locations on a white canvas.
///
/// Dots are 1 px wide on canvases at least 1024 px wide, 2 px otherwise.
pub fn plot_airports(records: &[AirportRecord], width: u32, height: u32) -> Result<RasterImage> {
    if width < 64 || height < 64 {
        return Err(GeoError::InvalidCoordinate(format!(
            "plot canvas {width}x{height} is smaller than 64x64"
        )));
    }
    let mut img = RasterImage::filled(width, height, [255, 255, 255]);
    let dot = if width >= 1024 { 1 } else { 2 };
    for r in records {
        let (cx, cy) = plot_position(r.location, width, height);
        for dy in 0..dot {
            for dx in 0..dot {
                // 2-px dots straddle the projected point.
                let x = (cx + dx).saturating_sub(dot - 1).min(width - 1);
                let y = (cy + dy).saturating_sub(dot - 1).min(height - 1);
                img.set(x, y, DOT_COLOR);
            }
        }
    }
    Ok(img)
}

/// Pixel hit by a location in the equirectangular plot.
pub fn plot_position(p: GeoPoint, width: u32, height: u32) -> (u32, u32) {
    let x = ((p.lon + 180.0) / 360.0 * width as f64).floor() as i64;
    let y = ((90.0 - p.lat) / 180.0 * height as f64).floor() as i64;
    (x.clamp(0, width as i64 - 1) as u32, y.clamp(0, height as i64 - 1) as u32)
}

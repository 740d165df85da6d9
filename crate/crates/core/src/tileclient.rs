//! Static-map client for paired satellite/roadmap images with an on-disk
//! cache and request spacing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{AirportRecord, GeoPoint, ZoomSpec};
use crate::raster::RasterImage;

pub const API_KEY_ENV: &str = "RUNWAY_TILE_API_KEY";
pub const MIN_SIZE: u32 = 64;
pub const MAX_SIZE: u32 = 1280;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("tile client config: {0}")]
    Config(String),
    #[error("invalid tile request: {0}")]
    Request(String),
    #[error("missing credential: set {API_KEY_ENV}")]
    Credential,
    #[error("offline mode: no cached tile for {0}; use the synthetic dataset source instead")]
    Offline(String),
    #[error("HTTP {status} from tile provider")]
    Status { status: u16 },
    #[error("transport: {0}")]
    Transport(String),
    #[error("cannot decode tile: {0}")]
    Decode(String),
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
}

impl TileError {
    /// HTTP status of a non-success response.
    pub fn status(&self) -> Option<u16> {
        match self {
            TileError::Status { status } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, TileError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Satellite,
    Roadmap,
}

impl Style {
    pub fn as_str(&self) -> &'static str {
        match self {
            Style::Satellite => "satellite",
            Style::Roadmap => "roadmap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRequest {
    pub center: GeoPoint,
    pub zoom: u32,
    pub size_px: u32,
    pub style: Style,
    pub provider_base: String,
}

impl TileRequest {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&self.size_px) {
            return Err(TileError::Request(format!("size {} outside {MIN_SIZE}..={MAX_SIZE}", self.size_px)));
        }
        if self.zoom > 22 {
            return Err(TileError::Request(format!("zoom {} above 22", self.zoom)));
        }
        if self.provider_base.trim().is_empty() {
            return Err(TileError::Config("empty provider_base".into()));
        }
        Ok(())
    }

    /// Request text without the credential; the cache key hashes this.
    pub fn canonical(&self) -> String {
        format!(
            "{}|{:.7},{:.7}|z{}|{}px|{}",
            self.provider_base,
            self.center.lat(),
            self.center.lon(),
            self.zoom,
            self.size_px,
            self.style.as_str()
        )
    }

    pub fn cache_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Provider URL. `provider_base` may contain `{lat}`, `{lon}`, `{zoom}`,
    /// `{size}`, `{style}` and `{key}` placeholders; without placeholders a
    /// static-map style query string is appended.
    pub fn url(&self, key: &str) -> String {
        let (lat, lon) = (format!("{:.7}", self.center.lat()), format!("{:.7}", self.center.lon()));
        if self.provider_base.contains('{') {
            return self
                .provider_base
                .replace("{lat}", &lat)
                .replace("{lon}", &lon)
                .replace("{zoom}", &self.zoom.to_string())
                .replace("{size}", &self.size_px.to_string())
                .replace("{style}", self.style.as_str())
                .replace("{key}", key);
        }
        let sep = if self.provider_base.contains('?') { '&' } else { '?' };
        format!(
            "{}{sep}center={lat},{lon}&zoom={}&size={s}x{s}&maptype={}&key={key}",
            self.provider_base,
            self.zoom,
            self.style.as_str(),
            s = self.size_px
        )
    }
}

pub fn build_tile_request(airport: &AirportRecord, spec: ZoomSpec, style: Style, provider_base: Option<&str>) -> Result<TileRequest> {
    let base = provider_base
        .filter(|b| !b.trim().is_empty())
        .ok_or_else(|| TileError::Config("no provider_base configured".into()))?;
    let req = TileRequest { center: airport.location, zoom: spec.zoom, size_px: spec.image_px, style, provider_base: base.to_string() };
    req.validate()?;
    Ok(req)
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub cache_dir: PathBuf,
    pub api_key: Option<String>,
    pub min_interval: Duration,
    pub offline: bool,
    pub timeout: Duration,
}

impl ClientConfig {
    /// Defaults with the credential read from the environment.
    pub fn from_env(cache_dir: PathBuf) -> Self {
        ClientConfig {
            cache_dir,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            min_interval: Duration::from_secs(1),
            offline: false,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheMeta {
    request: TileRequest,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Clone)]
pub struct TilePair {
    pub sat: RasterImage,
    pub map: RasterImage,
    /// Whether the satellite and map images came from the cache.
    pub from_cache: (bool, bool),
}

pub struct TileClient {
    config: ClientConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
    requests: Mutex<u64>,
}

impl TileClient {
    pub fn new(config: ClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        TileClient { config, agent, last_request: Mutex::new(None), requests: Mutex::new(0) }
    }

    /// Network requests issued so far.
    pub fn request_count(&self) -> u64 {
        *self.requests.lock().expect("counter lock")
    }

    fn paths(&self, req: &TileRequest) -> (PathBuf, PathBuf) {
        let key = req.cache_key();
        (self.config.cache_dir.join(format!("{key}.bin")), self.config.cache_dir.join(format!("{key}.meta.json")))
    }

    fn cached(&self, req: &TileRequest) -> Option<Vec<u8>> {
        let (bin, meta) = self.paths(req);
        if !meta.exists() {
            return None;
        }
        fs::read(bin).ok()
    }

    /// Rate-limited GET. Calls are serialized through the timestamp lock.
    fn download(&self, req: &TileRequest) -> Result<Vec<u8>> {
        if self.config.offline {
            return Err(TileError::Offline(req.canonical()));
        }
        let key = self.config.api_key.as_deref().ok_or(TileError::Credential)?;
        let mut last = self.last_request.lock().expect("rate limit lock");
        if let Some(t) = *last {
            let wait = self.config.min_interval.saturating_sub(t.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
        *self.requests.lock().expect("counter lock") += 1;
        let resp = self.agent.get(&req.url(key)).call().map_err(|e| TileError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TileError::Status { status });
        }
        resp.into_body().read_to_vec().map_err(|e| TileError::Transport(e.to_string()))
    }

    fn decode(bytes: &[u8], req: &TileRequest) -> Result<RasterImage> {
        RasterImage::from_encoded(bytes).map_err(|e| TileError::Decode(format!("{}: {e}", req.style.as_str())))
    }

    fn write_entry(&self, req: &TileRequest, bytes: &[u8]) -> Result<[(PathBuf, PathBuf); 2]> {
        let (bin, meta) = self.paths(req);
        let meta_json = serde_json::to_vec_pretty(&CacheMeta {
            request: req.clone(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        })
        .expect("metadata serializes");
        let (tb, tm) = (bin.with_extension("bin.tmp"), meta.with_extension("json.tmp"));
        fs::write(&tb, bytes)?;
        fs::write(&tm, meta_json)?;
        Ok([(tb, bin), (tm, meta)])
    }

    /// Fetch both styles of one location. Both downloads must succeed and
    /// decode before either is committed to the cache.
    pub fn fetch_pair(&self, req_sat: &TileRequest, req_map: &TileRequest) -> Result<TilePair> {
        req_sat.validate()?;
        req_map.validate()?;
        if req_sat.center != req_map.center || req_sat.zoom != req_map.zoom || req_sat.size_px != req_map.size_px {
            return Err(TileError::Request("satellite and map requests differ in center, zoom or size".into()));
        }
        if req_sat.style == req_map.style {
            return Err(TileError::Request("satellite and map requests share a style".into()));
        }
        let sat_cached = self.cached(req_sat);
        let map_cached = self.cached(req_map);
        let from_cache = (sat_cached.is_some(), map_cached.is_some());
        let sat_bytes = match sat_cached {
            Some(b) => b,
            None => self.download(req_sat)?,
        };
        let map_bytes = match map_cached {
            Some(b) => b,
            None => self.download(req_map)?,
        };
        let sat = Self::decode(&sat_bytes, req_sat)?;
        let map = Self::decode(&map_bytes, req_map)?;

        let mut staged = Vec::new();
        if !(from_cache.0 && from_cache.1) {
            fs::create_dir_all(&self.config.cache_dir)?;
        }
        let result = (|| -> Result<()> {
            if !from_cache.0 {
                staged.extend(self.write_entry(req_sat, &sat_bytes)?);
            }
            if !from_cache.1 {
                staged.extend(self.write_entry(req_map, &map_bytes)?);
            }
            // metadata last: an entry counts as cached only once its sidecar exists
            for (tmp, dst) in staged.iter().filter(|(_, d)| d.extension().is_some_and(|e| e == "bin")) {
                fs::rename(tmp, dst)?;
            }
            for (tmp, dst) in staged.iter().filter(|(_, d)| d.extension().is_some_and(|e| e == "json")) {
                fs::rename(tmp, dst)?;
            }
            Ok(())
        })();
        if result.is_err() {
            for (tmp, dst) in &staged {
                let _ = fs::remove_file(tmp);
                let _ = fs::remove_file(dst);
            }
        }
        result?;
        Ok(TilePair { sat, map, from_cache })
    }
}

/// Cache directory entry paths for a request.
pub fn cache_paths(cache_dir: &Path, req: &TileRequest) -> (PathBuf, PathBuf) {
    let key = req.cache_key();
    (cache_dir.join(format!("{key}.bin")), cache_dir.join(format!("{key}.meta.json")))
}

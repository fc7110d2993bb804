//! Scene files on disk.
//!
//! A scene directory holds one subdirectory per scene with the raster
//! (`raster.pgm` or `raster.f32`), the ground truth (`gt.json`, optional)
//! and the generator metadata (`scene.json`, optional), plus a
//! `manifest.json` at the root.
//!
//! `.pgm` rasters are binary 16-bit PGM with intensities scaled by 65535
//! and the resolution in a `# resolution <m/px>` comment. `.f32` rasters
//! are a one-line JSON header `{"height":..,"width":..,"resolution":..}`
//! followed by the little-endian `f32` grid in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LaneGraph;
use crate::scenegen::{BevRaster, OcclusionBand, RasterGeometry, Scene, SceneConfig};

pub const MANIFEST: &str = "manifest.json";
pub const GROUND_TRUTH: &str = "gt.json";
pub const SCENE_META: &str = "scene.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Pgm,
    F32,
}

impl RasterFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::Pgm => "pgm",
            RasterFormat::F32 => "f32",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Ok(RasterFormat::Pgm),
            Some("f32") => Ok(RasterFormat::F32),
            _ => Err(Error::format(path, "unknown raster extension (expected .pgm or .f32)")),
        }
    }

    pub fn file_name(self) -> String {
        format!("raster.{}", self.extension())
    }
}

impl std::str::FromStr for RasterFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pgm" => Ok(RasterFormat::Pgm),
            "f32" => Ok(RasterFormat::F32),
            other => Err(format!("unknown raster format `{other}` (expected pgm or f32)")),
        }
    }
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp.{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

pub fn encode_raster(r: &BevRaster, format: RasterFormat) -> Vec<u8> {
    match format {
        RasterFormat::Pgm => {
            let mut out = format!(
                "P5\n# resolution {}\n{} {}\n65535\n",
                r.resolution(),
                r.width(),
                r.height()
            )
            .into_bytes();
            out.reserve(r.data().len() * 2);
            for &v in r.data() {
                let q = (v as f64 * 65535.0).round().clamp(0.0, 65535.0) as u16;
                out.extend_from_slice(&q.to_be_bytes());
            }
            out
        }
        RasterFormat::F32 => {
            let mut out = serde_json::to_vec(&r.geometry()).expect("geometry serializes");
            out.push(b'\n');
            out.reserve(r.data().len() * 4);
            for &v in r.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        }
    }
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<BevRaster> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0;
    let mut resolution = None;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
            if let Some(v) = comment.trim().strip_prefix("resolution") {
                resolution = Some(v.trim().parse::<f64>().map_err(|_| bad("bad resolution comment"))?);
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 65535 {
        return Err(bad("expected a 16-bit PGM (maxval 65535)"));
    }
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != width * height * 2 {
        return Err(bad("pixel data length does not match the header"));
    }
    let intensity = data
        .chunks_exact(2)
        .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0) as f32)
        .collect();
    let geometry = RasterGeometry {
        height,
        width,
        resolution: resolution.unwrap_or(crate::scenegen::DEFAULT_RESOLUTION),
    };
    BevRaster::from_data(geometry, intensity).map_err(|e| bad(&e.to_string()))
}

fn decode_f32(path: &Path, bytes: &[u8]) -> Result<BevRaster> {
    let bad = |reason: String| Error::format(path, reason);
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing JSON header line".into()))?;
    let geometry: RasterGeometry =
        serde_json::from_slice(&bytes[..split]).map_err(|e| bad(format!("header: {e}")))?;
    let data = &bytes[split + 1..];
    if data.len() != geometry.height * geometry.width * 4 {
        return Err(bad("grid length does not match the header".into()));
    }
    let intensity = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    BevRaster::from_data(geometry, intensity).map_err(|e| bad(e.to_string()))
}

pub fn write_raster(path: &Path, r: &BevRaster) -> Result<()> {
    write_atomic(path, &encode_raster(r, RasterFormat::from_path(path)?))
}

pub fn read_raster(path: &Path) -> Result<BevRaster> {
    let format = RasterFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        RasterFormat::Pgm => decode_pgm(path, &bytes),
        RasterFormat::F32 => decode_f32(path, &bytes),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_lane_graph(path: &Path) -> Result<LaneGraph> {
    read_json(path)
}

pub fn write_lane_graph(path: &Path, g: &LaneGraph) -> Result<()> {
    let mut bytes = g.to_json().into_bytes();
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Generator settings stored next to each scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    pub seed: u64,
    pub config: SceneConfig,
    pub occlusions: Vec<OcclusionBand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    /// Paths relative to the scene directory root.
    pub raster: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub scenes: Vec<ManifestEntry>,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes one scene's files under `root/<id>/` and returns its manifest entry.
pub fn write_scene(root: &Path, id: &str, scene: &Scene, format: RasterFormat) -> Result<ManifestEntry> {
    let dir = root.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let raster = format.file_name();
    write_atomic(&dir.join(&raster), &encode_raster(&scene.raster, format))?;
    write_lane_graph(&dir.join(GROUND_TRUTH), &scene.ground_truth)?;
    write_json(
        &dir.join(SCENE_META),
        &SceneMeta {
            id: id.to_string(),
            seed: scene.config.seed,
            config: scene.config.clone(),
            occlusions: scene.occlusions.clone(),
        },
    )?;
    Ok(ManifestEntry {
        id: id.to_string(),
        seed: scene.config.seed,
        raster: format!("{id}/{raster}"),
        ground_truth: format!("{id}/{GROUND_TRUTH}"),
    })
}

pub fn write_manifest(root: &Path, m: &Manifest) -> Result<()> {
    write_json(&root.join(MANIFEST), m)
}

/// The manifest of `root`, or one built from its subdirectories (sorted by
/// name) when there is none.
pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    if path.exists() {
        return read_json(&path);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut scenes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let id = entry.file_name().to_string_lossy().into_owned();
        let raster = [RasterFormat::Pgm, RasterFormat::F32]
            .into_iter()
            .map(|f| f.file_name())
            .find(|f| dir.join(f).exists());
        if let Some(raster) = raster {
            scenes.push(ManifestEntry {
                seed: 0,
                raster: format!("{id}/{raster}"),
                ground_truth: format!("{id}/{GROUND_TRUTH}"),
                id,
            });
        }
    }
    scenes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Manifest { scenes })
}

#[derive(Debug, Clone)]
pub struct StoredScene {
    pub id: String,
    pub raster: BevRaster,
    pub ground_truth: Option<LaneGraph>,
    pub meta: Option<SceneMeta>,
}

pub fn read_raster_entry(root: &Path, e: &ManifestEntry) -> Result<BevRaster> {
    read_raster(&root.join(&e.raster))
}

/// The ground truth of a scene, `None` when the file is absent.
pub fn read_ground_truth(root: &Path, e: &ManifestEntry) -> Result<Option<LaneGraph>> {
    let path = root.join(&e.ground_truth);
    if !path.exists() {
        return Ok(None);
    }
    read_lane_graph(&path).map(Some)
}

pub fn read_scene(root: &Path, e: &ManifestEntry) -> Result<StoredScene> {
    let meta_path = root.join(&e.id).join(SCENE_META);
    let meta = if meta_path.exists() {
        Some(read_json(&meta_path)?)
    } else {
        None
    };
    Ok(StoredScene {
        id: e.id.clone(),
        raster: read_raster_entry(root, e)?,
        ground_truth: read_ground_truth(root, e)?,
        meta,
    })
}

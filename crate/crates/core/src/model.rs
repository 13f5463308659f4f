//! Object/view data model shared by every stage.
//!
//! An object is described by a JSON manifest naming one rendered image per
//! viewpoint and a point cloud file:
//!
//! ```json
//! {
//!   "object_id": "mug-001",
//!   "views": { "front": "front.png", "back": "back.png", "left": "left.png",
//!              "right": "right.png", "top": "top.png", "bottom": "bottom.png" },
//!   "point_cloud": "cloud.ply",
//!   "metadata": { "source": "synthetic" }
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Point clouds are
//! ASCII PLY or a flat JSON array of `[x, y, z]` triples.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::stable_seed;

/// Default point budget applied at ingestion.
pub const DEFAULT_POINT_BUDGET: usize = 10_000;

/// One of the six canonical camera directions.
///
/// The declaration order is the canonical serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viewpoint {
    Front,
    Back,
    Left,
    Right,
    Top,
    Bottom,
}

impl Viewpoint {
    pub const ALL: [Viewpoint; 6] = [
        Viewpoint::Front,
        Viewpoint::Back,
        Viewpoint::Left,
        Viewpoint::Right,
        Viewpoint::Top,
        Viewpoint::Bottom,
    ];

    /// Views that carry supplementary detail rather than identity.
    pub const SIDES: [Viewpoint; 4] = [
        Viewpoint::Left,
        Viewpoint::Right,
        Viewpoint::Top,
        Viewpoint::Bottom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Viewpoint::Front => "front",
            Viewpoint::Back => "back",
            Viewpoint::Left => "left",
            Viewpoint::Right => "right",
            Viewpoint::Top => "top",
            Viewpoint::Bottom => "bottom",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Viewpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Viewpoint::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown viewpoint `{s}`"))
    }
}

/// A list of finite 3D points in model units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, ModelError> {
        if let Some(i) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(ModelError::NonFinitePoint(i));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Uniform random subset of `budget` points, keeping the original order.
    /// Clouds already within budget are returned unchanged.
    pub fn downsample(&self, budget: usize, seed: u64) -> PointCloud {
        if self.points.len() <= budget {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = index::sample(&mut rng, self.points.len(), budget).into_vec();
        keep.sort_unstable();
        PointCloud {
            points: keep.into_iter().map(|i| self.points[i]).collect(),
        }
    }

    /// Parses an ASCII PLY file. Only the `x`, `y`, `z` vertex properties are
    /// read; other vertex properties and later elements are skipped.
    pub fn from_ply(text: &str) -> Result<Self, ModelError> {
        let bad = |msg: String| ModelError::PointCloudFormat(msg);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(bad("missing `ply` magic".into()));
        }
        let mut vertex_count = None;
        let mut in_vertex = false;
        let mut props: Vec<String> = Vec::new();
        let mut elements_before_vertex = 0usize;
        let mut saw_vertex = false;
        loop {
            let line = lines
                .next()
                .ok_or_else(|| bad("unterminated header".into()))?
                .trim();
            let mut words = line.split_whitespace();
            match words.next() {
                Some("format") => {
                    if words.next() != Some("ascii") {
                        return Err(bad(format!("unsupported format line `{line}`")));
                    }
                }
                Some("element") => {
                    let name = words.next().unwrap_or_default();
                    let n: usize = words
                        .next()
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| bad(format!("bad element line `{line}`")))?;
                    in_vertex = name == "vertex";
                    if in_vertex {
                        vertex_count = Some(n);
                        saw_vertex = true;
                    } else if !saw_vertex {
                        elements_before_vertex += n;
                    }
                }
                Some("property") if in_vertex => {
                    if let Some(name) = line.split_whitespace().last() {
                        props.push(name.to_string());
                    }
                }
                Some("end_header") => break,
                _ => {}
            }
        }
        let n = vertex_count.ok_or_else(|| bad("no vertex element".into()))?;
        let col = |axis: &str| {
            props
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| bad(format!("vertex property `{axis}` missing")))
        };
        let (xi, yi, zi) = (col("x")?, col("y")?, col("z")?);
        let mut points = Vec::with_capacity(n);
        let mut body = lines.filter(|l| !l.trim().is_empty()).skip(elements_before_vertex);
        for row in 0..n {
            let line = body
                .next()
                .ok_or_else(|| bad(format!("expected {n} vertices, found {row}")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let get = |i: usize| -> Result<f64, ModelError> {
                fields
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("vertex {row}: bad field {i}")))
            };
            points.push([get(xi)?, get(yi)?, get(zi)?]);
        }
        PointCloud::new(points)
    }

    pub fn to_ply(&self) -> String {
        let mut out = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
            self.points.len()
        );
        for [x, y, z] in &self.points {
            out.push_str(&format!("{x} {y} {z}\n"));
        }
        out
    }
}

impl TryFrom<Vec<[f64; 3]>> for PointCloud {
    type Error = ModelError;

    fn try_from(points: Vec<[f64; 3]>) -> Result<Self, Self::Error> {
        PointCloud::new(points)
    }
}

impl From<PointCloud> for Vec<[f64; 3]> {
    fn from(c: PointCloud) -> Self {
        c.points
    }
}

/// A fixed-length real vector with no NaN/Inf entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Result<Self, ModelError> {
        Self::new(self.0.iter().map(|v| v * k).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = ModelError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Where a candidate's raw confidence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// Mean absolute token log-probability.
    Logprobs,
    /// Provider supplied no token probabilities; see
    /// [`crate::confidence::fill_missing_confidence`].
    Fallback,
}

/// One generated caption for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDescription {
    pub view: Viewpoint,
    pub index: usize,
    pub text: String,
    /// Natural-log token probabilities; empty when the provider omitted them.
    pub token_logprobs: Vec<f64>,
    pub raw_confidence: f64,
    pub confidence_source: ConfidenceSource,
}

/// A validated object: six view references plus a loaded point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectManifest {
    pub object_id: String,
    pub view_images: BTreeMap<Viewpoint, String>,
    /// Point cloud reference as written in the manifest.
    pub point_cloud_ref: String,
    pub point_cloud: PointCloud,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// On-disk manifest layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub object_id: String,
    pub views: BTreeMap<String, String>,
    pub point_cloud: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub point_budget: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            point_budget: DEFAULT_POINT_BUDGET,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("manifest is missing viewpoint(s): {}", join_views(.0))]
    MissingViewpoint(Vec<Viewpoint>),
    #[error("unknown viewpoint key `{0}`")]
    UnknownViewpoint(String),
    #[error("point cloud has no points")]
    EmptyPointCloud,
    #[error("parse error at byte {offset}: {message}")]
    ParseError { offset: usize, message: String },
    #[error("point cloud format: {0}")]
    PointCloudFormat(String),
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
    #[error("embedding has no components")]
    EmptyEmbedding,
    #[error("embedding has NaN or infinite components")]
    NonFiniteEmbedding,
    #[error("empty object_id")]
    EmptyObjectId,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn join_views(v: &[Viewpoint]) -> String {
    v.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, b) in text.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(text.len())
}

fn read(path: &Path) -> Result<Vec<u8>, ModelError> {
    std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a point cloud from a `.ply` or `.json` file.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud, ModelError> {
    let bytes = read(path)?;
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        let pts: Vec<[f64; 3]> =
            serde_json::from_slice(&bytes).map_err(|e| ModelError::ParseError {
                offset: byte_offset(&bytes, e.line(), e.column()),
                message: e.to_string(),
            })?;
        PointCloud::new(pts)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|e| ModelError::PointCloudFormat(format!("not utf-8: {e}")))?;
        PointCloud::from_ply(&text)
    }
}

/// Parses and validates a manifest held in memory. `base_dir` resolves a
/// relative point cloud path.
pub fn ingest_manifest_bytes(
    bytes: &[u8],
    base_dir: &Path,
    opts: IngestOptions,
) -> Result<ObjectManifest, ModelError> {
    let file: ManifestFile = serde_json::from_slice(bytes).map_err(|e| ModelError::ParseError {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if file.object_id.trim().is_empty() {
        return Err(ModelError::EmptyObjectId);
    }
    let mut view_images = BTreeMap::new();
    for (key, image) in &file.views {
        let view: Viewpoint = key
            .parse()
            .map_err(|_| ModelError::UnknownViewpoint(key.clone()))?;
        view_images.insert(view, image.clone());
    }
    let missing: Vec<Viewpoint> = Viewpoint::ALL
        .into_iter()
        .filter(|v| !view_images.contains_key(v))
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::MissingViewpoint(missing));
    }

    let cloud_path = base_dir.join(&file.point_cloud);
    let cloud = load_point_cloud(&cloud_path)?;
    if cloud.is_empty() {
        return Err(ModelError::EmptyPointCloud);
    }
    let cloud = cloud.downsample(opts.point_budget, stable_seed(&["cloud", &file.object_id]));

    Ok(ObjectManifest {
        object_id: file.object_id,
        view_images,
        point_cloud_ref: file.point_cloud,
        point_cloud: cloud,
        metadata: file.metadata,
    })
}

/// Reads and validates a manifest file.
pub fn ingest_manifest(path: &Path, opts: IngestOptions) -> Result<ObjectManifest, ModelError> {
    let bytes = read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    ingest_manifest_bytes(&bytes, base, opts)
}

impl ObjectManifest {
    pub fn to_manifest_file(&self) -> ManifestFile {
        ManifestFile {
            object_id: self.object_id.clone(),
            views: self
                .view_images
                .iter()
                .map(|(v, p)| (v.as_str().to_string(), p.clone()))
                .collect(),
            point_cloud: self.point_cloud_ref.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Serializes the manifest with views in canonical order.
    pub fn to_json(&self) -> String {
        let views: Vec<String> = Viewpoint::ALL
            .iter()
            .filter_map(|v| {
                self.view_images.get(v).map(|p| {
                    format!(
                        "    {}: {}",
                        serde_json::to_string(v.as_str()).unwrap(),
                        serde_json::to_string(p).unwrap()
                    )
                })
            })
            .collect();
        format!(
            "{{\n  \"object_id\": {},\n  \"views\": {{\n{}\n  }},\n  \"point_cloud\": {},\n  \"metadata\": {}\n}}\n",
            serde_json::to_string(&self.object_id).unwrap(),
            views.join(",\n"),
            serde_json::to_string(&self.point_cloud_ref).unwrap(),
            serde_json::to_string(&self.metadata).unwrap(),
        )
    }

    /// Writes `manifest.json` and the point cloud (as PLY or JSON, chosen by
    /// the reference's extension) into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, ModelError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ModelError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let cloud_path = dir.join(&self.point_cloud_ref);
        let body = if self.point_cloud_ref.ends_with(".json") {
            serde_json::to_string(&self.point_cloud).unwrap()
        } else {
            self.point_cloud.to_ply()
        };
        std::fs::write(&cloud_path, body).map_err(io(&cloud_path))?;
        let manifest_path = dir.join("manifest.json");
        std::fs::write(&manifest_path, self.to_json()).map_err(io(&manifest_path))?;
        Ok(manifest_path)
    }
}

//! Feature, geotag and ground-truth data models with their on-disk formats,
//! plus the cosine distance every other module builds on.
//!
//! Binary feature files are `"VPRF"`, then little-endian `u32` version (1),
//! count and dim, followed by `count * dim` little-endian `f32` values in
//! row-major order. CSV feature files hold one frame per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors whose norm is within this of 1 are stored untouched.
pub const NORM_TOLERANCE: f64 = 1e-5;
/// Vectors whose norm is off by more than this are rejected at ingest.
pub const RENORM_TOLERANCE: f64 = 1e-3;

const MAGIC: &[u8; 4] = b"VPRF";
const VERSION: u32 = 1;

/// Unit-normalized embedding of one image frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f32>,
}

impl FeatureVector {
    /// Normalizes `values` to unit length. Zero and non-finite vectors are
    /// rejected.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        normalize(values, 0, None).map(|values| FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}

impl AsRef<[f32]> for FeatureVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

fn normalize(mut values: Vec<f32>, frame: usize, max_dev: Option<f64>) -> Result<Vec<f32>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadValue { frame });
    }
    let norm = values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector { frame });
    }
    let dev = (norm - 1.0).abs();
    if let Some(max_dev) = max_dev {
        if dev > max_dev {
            return Err(Error::NormOutOfTolerance { frame, norm });
        }
    }
    if dev > NORM_TOLERANCE {
        for v in values.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(values)
}

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
#[inline]
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// `1 - cos(a, b)` on raw unit slices, clamped to [0, 2]. Dimensions are not
/// checked.
#[inline]
pub fn distance_unchecked(a: &[f32], b: &[f32]) -> f64 {
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

/// Cosine distance `1 - cos(a, b)` in [0, 2].
pub fn distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(distance_unchecked(&a.values, &b.values))
}

/// Latitude/longitude in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    pub lat: f64,
    pub lon: f64,
}

impl GeoTag {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoTag { lat, lon }
    }

    /// Manhattan distance in raw degrees.
    pub fn manhattan(&self, other: &GeoTag) -> f64 {
        (self.lat - other.lat).abs() + (self.lon - other.lon).abs()
    }
}

/// Temporally ordered sequence of unit feature vectors with optional geotags.
///
/// Frames are stored contiguously; frame `i` is the `i`-th captured image.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDatabase {
    dim: usize,
    data: Vec<f32>,
    geotags: Option<Vec<GeoTag>>,
    label: String,
}

impl FrameDatabase {
    pub fn from_vectors(frames: Vec<FeatureVector>, label: impl Into<String>) -> Result<Self> {
        let dim = frames.first().ok_or(Error::EmptyDatabase)?.dim();
        let mut data = Vec::with_capacity(frames.len() * dim);
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::InconsistentDim {
                    frame: i,
                    expected: dim,
                    found: f.dim(),
                });
            }
            data.extend_from_slice(&f.values);
        }
        Ok(FrameDatabase {
            dim,
            data,
            geotags: None,
            label: label.into(),
        })
    }

    /// Binds geotags; their count must equal the frame count.
    pub fn with_geotags(mut self, geotags: Vec<GeoTag>) -> Result<Self> {
        if geotags.len() != self.len() {
            return Err(Error::Geotag(format!(
                "{} geotags for {} frames",
                geotags.len(),
                self.len()
            )));
        }
        self.geotags = Some(geotags);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn vector(&self, i: usize) -> FeatureVector {
        FeatureVector {
            values: self.frame(i).to_vec(),
        }
    }

    pub fn geotags(&self) -> Option<&[GeoTag]> {
        self.geotags.as_deref()
    }

    /// Sub-database holding frames `range`, geotags included.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "frame range {range:?} outside 0..{}",
                self.len()
            )));
        }
        Ok(FrameDatabase {
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
            geotags: self.geotags.as_ref().map(|g| g[range].to_vec()),
            label: self.label.clone(),
        })
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: dim,
            });
        }
        Ok(())
    }
}

/// On-disk feature file layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` means CSV; everything else is treated as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_features(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FrameDatabase> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        FeatureFormat::Binary => read_features_binary(reader, label_of(path)),
        FeatureFormat::Csv => read_features_csv(reader, label_of(path)),
    }
    .map_err(Error::in_file(path))
}

pub fn read_features_binary(mut reader: impl Read, label: impl Into<String>) -> Result<FrameDatabase> {
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::MalformedHeader("file shorter than 16-byte header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::MalformedHeader("missing VPRF magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (version, count, dim) = (word(4), word(8), word(12));
    if version != VERSION as usize {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    if count == 0 {
        return Err(Error::EmptyDatabase);
    }
    if dim == 0 {
        return Err(Error::MalformedHeader("dim must be positive".into()));
    }
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::MalformedHeader(format!("reading body: {e}")))?;
    let row_bytes = dim * 4;
    if body.len() != count * row_bytes {
        return Err(Error::CountMismatch {
            declared: count,
            found: body.len() / row_bytes,
        });
    }
    let frames = body
        .chunks_exact(row_bytes)
        .enumerate()
        .map(|(i, row)| {
            let values = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            normalize(values, i, Some(RENORM_TOLERANCE)).map(|values| FeatureVector { values })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameDatabase::from_vectors(frames, label)
}

pub fn read_features_csv(reader: impl Read, label: impl Into<String>) -> Result<FrameDatabase> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut frames = Vec::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|s| s.parse::<f32>().map_err(|_| Error::BadValue { frame: i }))
            .collect::<Result<Vec<_>>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::InconsistentDim {
                frame: i,
                expected,
                found: values.len(),
            });
        }
        frames.push(FeatureVector {
            values: normalize(values, i, Some(RENORM_TOLERANCE))?,
        });
    }
    FrameDatabase::from_vectors(frames, label)
}

pub fn save_features(db: &FrameDatabase, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FeatureFormat::Binary => write_features_binary(db, &mut w),
        FeatureFormat::Csv => write_features_csv(db, &mut w),
    }
    .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_features_binary(db: &FrameDatabase, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for word in [VERSION, db.len() as u32, db.dim() as u32] {
        w.write_all(&word.to_le_bytes())?;
    }
    for v in &db.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_features_csv(db: &FrameDatabase, w: &mut impl Write) -> std::io::Result<()> {
    for frame in db.frames() {
        let line = frame.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, row: usize) -> std::result::Result<T, String> {
    let raw = rec.get(col).ok_or_else(|| format!("row {row}: missing column {col}"))?;
    raw.trim()
        .parse()
        .map_err(|_| format!("row {row}: cannot parse {raw:?}"))
}

fn expect_header(rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<Vec<String>> {
    let got: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got.iter().map(String::as_str).ne(want.iter().copied()) {
        return Err(Error::MalformedHeader(format!(
            "expected header {:?}, found {:?}",
            want.join(","),
            got.join(",")
        )));
    }
    Ok(got)
}

/// Sorts `(index, value)` rows and checks that indices are exactly `0..len`.
fn into_dense<T>(mut rows: Vec<(usize, T)>, what: &str) -> std::result::Result<Vec<T>, String> {
    rows.sort_by_key(|(i, _)| *i);
    for (pos, (i, _)) in rows.iter().enumerate() {
        if *i < pos {
            return Err(format!("duplicate {what} index {i}"));
        }
        if *i > pos {
            return Err(format!("missing {what} index {pos}"));
        }
    }
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

/// Reads a `frame,lat,lon` CSV; rows may appear in any order but must cover
/// every frame index exactly once.
pub fn load_geotags(path: impl AsRef<Path>) -> Result<Vec<GeoTag>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_geotags(BufReader::new(file)).map_err(Error::in_file(path))
}

pub fn read_geotags(reader: impl Read) -> Result<Vec<GeoTag>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    expect_header(&mut rdr, &["frame", "lat", "lon"])?;
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed = (|| {
            let frame: usize = parse_field(&rec, 0, row)?;
            let lat: f64 = parse_field(&rec, 1, row)?;
            let lon: f64 = parse_field(&rec, 2, row)?;
            if !lat.is_finite() || !lon.is_finite() {
                return Err(format!("row {row}: non-finite coordinate"));
            }
            Ok((frame, GeoTag { lat, lon }))
        })();
        rows.push(parsed.map_err(Error::Geotag)?);
    }
    into_dense(rows, "frame").map_err(Error::Geotag)
}

pub fn save_geotags(geotags: &[GeoTag], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "lat", "lon"])?;
    for (i, g) in geotags.iter().enumerate() {
        w.write_record([i.to_string(), g.lat.to_string(), g.lon.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Correct answer for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truth {
    Frame(usize),
    Gps(GeoTag),
}

/// Per-query ground truth, indexed by query frame.
#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    /// `frames[q]` is the true database frame of query `q`.
    Frame(Vec<usize>),
    /// `coords[q]` is the true location of query `q`.
    Gps(Vec<GeoTag>),
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        match self {
            GroundTruth::Frame(v) => v.len(),
            GroundTruth::Gps(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, query: usize) -> Option<Truth> {
        match self {
            GroundTruth::Frame(v) => v.get(query).copied().map(Truth::Frame),
            GroundTruth::Gps(v) => v.get(query).copied().map(Truth::Gps),
        }
    }

    /// Checks that every query in `0..n_queries` has an entry and every
    /// referenced database frame exists.
    pub fn validate(&self, db_len: usize, n_queries: usize) -> Result<()> {
        if self.len() != n_queries {
            return Err(Error::GroundTruth(format!(
                "{} entries for {n_queries} queries",
                self.len()
            )));
        }
        if let GroundTruth::Frame(v) = self {
            if let Some((q, &i)) = v.iter().enumerate().find(|(_, &i)| i >= db_len) {
                return Err(Error::GroundTruth(format!(
                    "query {q} references frame {i}, database has {db_len}"
                )));
            }
        }
        Ok(())
    }
}

/// Reads a ground-truth CSV; the header selects frame mode (`query,db`) or
/// GPS mode (`query,lat,lon`).
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ground_truth(BufReader::new(file)).map_err(Error::in_file(path))
}

pub fn read_ground_truth(reader: impl Read) -> Result<GroundTruth> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let gps = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["query", "db"] => false,
        ["query", "lat", "lon"] => true,
        _ => {
            return Err(Error::MalformedHeader(format!(
                "ground truth header must be \"query,db\" or \"query,lat,lon\", found {:?}",
                header.join(",")
            )))
        }
    };
    let mut frames = Vec::new();
    let mut coords = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let q: usize = parse_field(&rec, 0, row).map_err(Error::GroundTruth)?;
        if gps {
            let lat: f64 = parse_field(&rec, 1, row).map_err(Error::GroundTruth)?;
            let lon: f64 = parse_field(&rec, 2, row).map_err(Error::GroundTruth)?;
            coords.push((q, GeoTag { lat, lon }));
        } else {
            let db: usize = parse_field(&rec, 1, row).map_err(Error::GroundTruth)?;
            frames.push((q, db));
        }
    }
    Ok(if gps {
        GroundTruth::Gps(into_dense(coords, "query").map_err(Error::GroundTruth)?)
    } else {
        GroundTruth::Frame(into_dense(frames, "query").map_err(Error::GroundTruth)?)
    })
}

pub fn save_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    match gt {
        GroundTruth::Frame(v) => {
            w.write_record(["query", "db"])?;
            for (q, i) in v.iter().enumerate() {
                w.write_record([q.to_string(), i.to_string()])?;
            }
        }
        GroundTruth::Gps(v) => {
            w.write_record(["query", "lat", "lon"])?;
            for (q, g) in v.iter().enumerate() {
                w.write_record([q.to_string(), g.lat.to_string(), g.lon.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

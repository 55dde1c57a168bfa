//! Keyframe selection: medoid clustering plus the three scan/lattice
//! baselines (similarity change, GPS distance change, fixed frame rate).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clustering::{faster_msc_with, lattice_indices, DistanceMatrix, Init};
use crate::error::{Error, Result};
use crate::featurestore::{cosine, FrameDatabase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Medoid,
    Similarity,
    Distance,
    FixedRate,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Medoid => "medoid",
            StrategyKind::Similarity => "similarity",
            StrategyKind::Distance => "distance",
            StrategyKind::FixedRate => "fixed_rate",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medoid" => Ok(StrategyKind::Medoid),
            "similarity" => Ok(StrategyKind::Similarity),
            "distance" => Ok(StrategyKind::Distance),
            "fixed_rate" => Ok(StrategyKind::FixedRate),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Selected keyframes plus how they were obtained. This is the JSON handoff
/// between `select` and `query`/`bench`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub strategy: StrategyKind,
    pub ratio: f64,
    pub ams: Option<f64>,
    pub indices: Vec<usize>,
    pub params: BTreeMap<String, Value>,
    pub db_label: String,
}

impl KeyframeSet {
    fn new(db: &FrameDatabase, strategy: StrategyKind, indices: Vec<usize>, ams: Option<f64>) -> Self {
        KeyframeSet {
            strategy,
            ratio: indices.len() as f64 / db.len() as f64,
            ams,
            indices,
            params: BTreeMap::new(),
            db_label: db.label().to_string(),
        }
    }

    fn with_param(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks the set against a database of `n` frames.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.len() < 2 {
            return Err(Error::Contract("a keyframe set needs at least 2 indices".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("keyframe indices must be strictly increasing".into()));
        }
        if let Some(&last) = self.indices.last() {
            if last >= n {
                return Err(Error::Contract(format!(
                    "keyframe {last} outside a database of {n} frames"
                )));
            }
        }
        if self.ams.is_some() != (self.strategy == StrategyKind::Medoid) {
            return Err(Error::Contract("ams must be present exactly for the medoid strategy".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// `round(ratio * n)` medoids, rejecting counts outside `2..=n-1`.
pub fn medoid_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} outside (0, 1]")));
    }
    let k = (ratio * n as f64).round() as usize;
    if k < 2 || k + 1 > n {
        return Err(Error::InvalidK { k, n });
    }
    Ok(k)
}

/// Keyframes as the medoids of a medoid silhouette clustering with
/// `round(ratio * N)` medoids.
pub fn select_medoid(db: &FrameDatabase, ratio: f64, init: Init) -> Result<KeyframeSet> {
    let k = medoid_count(db.len(), ratio)?;
    select_medoid_k(db, &DistanceMatrix::from_database(db), k, init)
}

/// [`select_medoid`] with an explicit medoid count and a shared distance matrix.
pub fn select_medoid_k(db: &FrameDatabase, dist: &DistanceMatrix, k: usize, init: Init) -> Result<KeyframeSet> {
    let res = faster_msc_with(dist, k, init)?;
    let mut set = KeyframeSet::new(db, StrategyKind::Medoid, res.medoids().to_vec(), Some(res.ams))
        .with_param("k", json!(k))
        .with_param("init", json!(init.name()))
        .with_param("swaps", json!(res.iterations));
    if let Init::RandomRestart { restarts, seed } = init {
        set = set
            .with_param("restarts", json!(restarts))
            .with_param("seed", json!(seed))
            .with_param("best_restart", json!(res.restart));
    }
    Ok(set)
}

fn pad(mut indices: Vec<usize>, n: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "{n} frame(s): at least 2 are needed for a keyframe set"
        )));
    }
    if indices.len() < 2 {
        indices.push(n - 1);
    }
    Ok(indices)
}

fn similarity_scan(db: &FrameDatabase, threshold: f64) -> Vec<usize> {
    let mut keys = vec![0];
    let mut last = db.frame(0);
    for (i, f) in db.frames().enumerate().skip(1) {
        if cosine(f, last) < threshold {
            keys.push(i);
            last = f;
        }
    }
    keys
}

/// Frame 0 plus every frame whose cosine similarity to the last keyframe drops
/// below `threshold`.
pub fn select_similarity(db: &FrameDatabase, threshold: f64) -> Result<KeyframeSet> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let indices = pad(similarity_scan(db, threshold), db.len())?;
    Ok(KeyframeSet::new(db, StrategyKind::Similarity, indices, None)
        .with_param("threshold", json!(threshold)))
}

fn distance_scan(db: &FrameDatabase, threshold_deg: f64) -> Result<Vec<usize>> {
    let tags = db.geotags().ok_or(Error::MissingGeotags)?;
    let mut keys = vec![0];
    let mut last = tags[0];
    for (i, g) in tags.iter().enumerate().skip(1) {
        if g.manhattan(&last) > threshold_deg {
            keys.push(i);
            last = *g;
        }
    }
    Ok(keys)
}

/// Frame 0 plus every frame whose Manhattan GPS distance (degrees) from the
/// last keyframe exceeds `threshold_deg`.
pub fn select_distance(db: &FrameDatabase, threshold_deg: f64) -> Result<KeyframeSet> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if !(threshold_deg > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance threshold must be positive, got {threshold_deg}"
        )));
    }
    let indices = pad(distance_scan(db, threshold_deg)?, db.len())?;
    Ok(KeyframeSet::new(db, StrategyKind::Distance, indices, None)
        .with_param("threshold_deg", json!(threshold_deg)))
}

/// `count` keyframes on the centered uniform lattice.
pub fn select_fixed_rate(db: &FrameDatabase, count: usize) -> Result<KeyframeSet> {
    let n = db.len();
    if count < 2 || count > n {
        return Err(Error::InvalidArgument(format!(
            "fixed-rate count {count} outside 2..={n}"
        )));
    }
    Ok(KeyframeSet::new(db, StrategyKind::FixedRate, lattice_indices(n, count), None)
        .with_param("count", json!(count)))
}

const CALIBRATION_STEPS: usize = 64;

/// Bisects a threshold whose keyframe count is closest to `target`. `count_at`
/// must be non-decreasing in the threshold when `increasing` is set and
/// non-increasing otherwise. Returns the best threshold seen.
fn bisect_threshold(
    mut lo: f64,
    mut hi: f64,
    target: usize,
    increasing: bool,
    mut count_at: impl FnMut(f64) -> usize,
) -> f64 {
    let mut best = (usize::MAX, lo);
    for t in [lo, hi] {
        let c = count_at(t);
        if c.abs_diff(target) < best.0 {
            best = (c.abs_diff(target), t);
        }
    }
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let c = count_at(mid);
        if c.abs_diff(target) < best.0 {
            best = (c.abs_diff(target), mid);
        }
        if c == target {
            break;
        }
        if (c < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.1
}

/// Similarity strategy with its threshold tuned so the keyframe count lands as
/// close to `target` as the scan allows.
pub fn calibrate_similarity(db: &FrameDatabase, target: usize) -> Result<KeyframeSet> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let t = bisect_threshold(-1.0 - 1e-9, 1.0 + 1e-9, target, true, |t| {
        similarity_scan(db, t).len().max(2)
    });
    Ok(select_similarity(db, t)?.with_param("target_count", json!(target)))
}

/// Distance strategy with its threshold tuned towards `target` keyframes.
pub fn calibrate_distance(db: &FrameDatabase, target: usize) -> Result<KeyframeSet> {
    let tags = db.geotags().ok_or(Error::MissingGeotags)?;
    let span = tags
        .iter()
        .map(|g| g.manhattan(&tags[0]))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let t = bisect_threshold(f64::MIN_POSITIVE, 2.0 * span, target, false, |t| {
        distance_scan(db, t).map(|k| k.len().max(2)).unwrap_or(0)
    });
    Ok(select_distance(db, t)?.with_param("target_count", json!(target)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurestore::{FeatureVector, GeoTag};

    fn db_angles(angles: &[f64]) -> FrameDatabase {
        FrameDatabase::from_vectors(
            angles
                .iter()
                .map(|a| FeatureVector::new(vec![a.cos() as f32, a.sin() as f32]).unwrap())
                .collect(),
            "t",
        )
        .unwrap()
    }

    fn bundles() -> FrameDatabase {
        let deg = [0.0f64, 2.0, 4.0, 88.0, 90.0, 92.0];
        db_angles(&deg.map(|d| d.to_radians()))
    }

    #[test]
    fn medoid_picks_one_per_bundle() {
        let db = bundles();
        let ks = select_medoid(&db, 0.33, Init::FixedRate).unwrap();
        ks.validate(db.len()).unwrap();
        assert_eq!(ks.indices, vec![1, 4]);
        assert!(ks.ams.unwrap() > 0.9);
    }

    #[test]
    fn medoid_ratio_bounds() {
        let db = bundles();
        assert!(matches!(
            select_medoid(&db, 1.0, Init::FixedRate),
            Err(Error::InvalidK { k: 6, n: 6 })
        ));
        let three = db.slice(0..3).unwrap();
        let ks = select_medoid(&three, 0.67, Init::random(1)).unwrap();
        assert_eq!(ks.len(), 2);
    }

    #[test]
    fn similarity_constant_sequence_padded() {
        let db = db_angles(&[0.3; 5]);
        let ks = select_similarity(&db, 0.9).unwrap();
        assert_eq!(ks.indices, vec![0, 4]);
        ks.validate(5).unwrap();
    }

    #[test]
    fn similarity_alternating_orthogonal_selects_all() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let db = db_angles(&[0.0, half_pi, 0.0, half_pi, 0.0, half_pi]);
        let ks = select_similarity(&db, 0.5).unwrap();
        assert_eq!(ks.indices, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn similarity_drift_matches_scalar_scan() {
        // constant angular drift of 0.01 rad per frame; threshold cos(0.035)
        let drift = 0.01;
        let threshold = 0.035f64.cos();
        let angles: Vec<f64> = (0..50).map(|i| i as f64 * drift).collect();
        let db = db_angles(&angles);
        let ks = select_similarity(&db, threshold).unwrap();
        // every 4th frame: 0.04 rad is the first lag whose cosine is below cos(0.035)
        let expected: Vec<usize> = (0..50).step_by(4).collect();
        assert_eq!(ks.indices, expected);
    }

    fn with_lats(lats: &[f64]) -> FrameDatabase {
        db_angles(&vec![0.0; lats.len()])
            .with_geotags(lats.iter().map(|&l| GeoTag::new(l, -1.26)).collect())
            .unwrap()
    }

    #[test]
    fn distance_every_third_frame() {
        let lats: Vec<f64> = (0..10).map(|i| i as f64 * 0.00005).collect();
        let db = with_lats(&lats);
        let ks = select_distance(&db, 0.0001).unwrap();
        assert_eq!(ks.indices, vec![0, 3, 6, 9]);
    }

    #[test]
    fn distance_identical_geotags_padded() {
        let db = with_lats(&[51.75; 4]);
        assert_eq!(select_distance(&db, 0.0001).unwrap().indices, vec![0, 3]);
    }

    #[test]
    fn distance_needs_geotags() {
        assert!(matches!(select_distance(&bundles(), 0.0001), Err(Error::MissingGeotags)));
    }

    #[test]
    fn fixed_rate_examples() {
        let db = db_angles(&[0.0; 10]);
        assert_eq!(select_fixed_rate(&db, 2).unwrap().indices, vec![2, 7]);
        assert_eq!(select_fixed_rate(&db, 10).unwrap().indices, (0..10).collect::<Vec<_>>());
        assert!(select_fixed_rate(&db, 1).is_err());
        assert!(select_fixed_rate(&db, 11).is_err());
    }

    #[test]
    fn fixed_rate_large_scale_is_distinct() {
        let idx = lattice_indices(12836, 1283);
        assert_eq!(idx.len(), 1283);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(*idx.last().unwrap() < 12836);
    }

    #[test]
    fn json_shape() {
        let db = db_angles(&[0.0; 10]);
        let ks = select_fixed_rate(&db, 2).unwrap();
        let v: Value = serde_json::to_value(&ks).unwrap();
        assert_eq!(v["strategy"], "fixed_rate");
        assert_eq!(v["ams"], Value::Null);
        assert_eq!(v["indices"], json!([2, 7]));
        assert_eq!(v["db_label"], "t");
        let back: KeyframeSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, ks);
    }

    #[test]
    fn calibration_hits_reachable_counts() {
        let angles: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let lats: Vec<f64> = (0..100).map(|i| 51.0 + i as f64 * 0.0001).collect();
        let db = db_angles(&angles)
            .with_geotags(lats.iter().map(|&l| GeoTag::new(l, 0.0)).collect())
            .unwrap();
        for target in [5, 10, 20, 50] {
            assert_eq!(calibrate_similarity(&db, target).unwrap().len(), target);
            let d = calibrate_distance(&db, target).unwrap();
            assert!(d.len().abs_diff(target) <= 1, "target {target} got {}", d.len());
        }
    }
}

//! Synthetic clustered trajectories for desk-scale experiments.
//!
//! The database is a walk through `n_clusters` places. Each place has a unit
//! center; while the walk is in a place, the view sweeps along a great-circle
//! arc through the center (so similarity falls off with temporal distance)
//! and every frame receives isotropic angular jitter of `intra_noise`.
//! Queries are database frames re-perturbed by `query_noise`.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{
    save_features, save_geotags, save_ground_truth, FeatureFormat, FeatureVector, FrameDatabase,
    GeoTag, GroundTruth,
};

const CENTER_ATTEMPTS: usize = 10_000;
const GEO_ORIGIN: GeoTag = GeoTag {
    lat: 51.75,
    lon: -1.26,
};
/// Mean geotag step per frame, degrees.
const GEO_STEP: f64 = 0.00005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub dim: usize,
    pub n_clusters: usize,
    /// Angular std-dev (radians) of per-frame jitter around the sweep path.
    pub intra_noise: f64,
    /// Minimum angle (radians) between cluster centers.
    pub inter_gap: f64,
    /// Angular perturbation (radians) turning a database frame into a query.
    pub query_noise: f64,
    /// Half-width (radians) of the arc swept inside each cluster.
    pub sweep: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_frames: 1000,
            dim: 64,
            n_clusters: 10,
            intra_noise: 0.05,
            inter_gap: 0.5,
            query_noise: 0.02,
            sweep: 0.3,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n_clusters < 2 {
            return bad("n_clusters must be at least 2");
        }
        if self.n_frames < self.n_clusters {
            return bad("n_frames must be at least n_clusters");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        let params = [self.intra_noise, self.inter_gap, self.query_noise, self.sweep];
        if params.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("noise, gap and sweep parameters must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    /// Database frames with geotags attached.
    pub db: FrameDatabase,
    pub queries: FrameDatabase,
    /// Query `q` was generated from database frame `q`.
    pub truth: GroundTruth,
    /// Frame range of each cluster visit, in walk order.
    pub segments: Vec<Range<usize>>,
}

impl SynthData {
    pub fn geotags(&self) -> &[GeoTag] {
        self.db.geotags().expect("synthetic databases carry geotags")
    }

    /// Ground truth expressed as the source frame's coordinates.
    pub fn gps_truth(&self) -> GroundTruth {
        GroundTruth::Gps(self.geotags().to_vec())
    }

    /// Writes `db.vprf`, `queries.vprf`, `geotags.csv`, `ground_truth.csv` and
    /// `ground_truth_gps.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_features(&self.db, dir.join("db.vprf"), FeatureFormat::Binary)?;
        save_features(&self.queries, dir.join("queries.vprf"), FeatureFormat::Binary)?;
        save_geotags(self.geotags(), dir.join("geotags.csv"))?;
        save_ground_truth(&self.truth, dir.join("ground_truth.csv"))?;
        save_ground_truth(&self.gps_truth(), dir.join("ground_truth_gps.csv"))
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random unit vector orthogonal to the unit vector `v`.
fn tangent(rng: &mut impl Rng, v: &[f64]) -> Vec<f64> {
    loop {
        let mut t = gaussian(rng, v.len());
        let along = dot(&t, v);
        t.iter_mut().zip(v).for_each(|(x, y)| *x -= along * y);
        if norm(&t) > 1e-9 {
            return unit(t);
        }
    }
}

/// Rotates `v` by roughly `sigma` radians in a uniformly random tangent
/// direction (Gaussian tangent offset with expected norm `sigma`).
fn perturb(rng: &mut impl Rng, v: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return v.to_vec();
    }
    let scale = sigma / ((v.len() - 1) as f64).sqrt();
    let mut z = gaussian(rng, v.len());
    let along = dot(&z, v);
    z.iter_mut().zip(v).for_each(|(x, y)| *x = (*x - along * y) * scale);
    unit(v.iter().zip(&z).map(|(a, b)| a + b).collect())
}

fn centers(rng: &mut impl Rng, spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    let min_cos = spec.inter_gap.cos();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.n_clusters);
    while out.len() < spec.n_clusters {
        let placed = (0..CENTER_ATTEMPTS).find_map(|_| {
            let c = unit(gaussian(rng, spec.dim));
            // angle >= gap  <=>  cos <= cos(gap) for gaps in [0, pi]
            out.iter().all(|o| dot(o, &c) <= min_cos).then_some(c)
        });
        match placed {
            Some(c) => out.push(c),
            None => {
                return Err(Error::InfeasibleSeparation {
                    clusters: spec.n_clusters,
                    gap: spec.inter_gap,
                    dim: spec.dim,
                })
            }
        }
    }
    Ok(out)
}

/// Splits `n` frames over `parts` visits with random weights in [0.5, 1.5),
/// at least one frame each.
fn segment_lengths(rng: &mut impl Rng, n: usize, parts: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..parts).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let spare = n - parts;
    let exact: Vec<f64> = weights.iter().map(|w| w / total * spare as f64).collect();
    let mut lens: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..parts).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let assigned: usize = lens.iter().sum();
    for &i in order.iter().take(n - assigned) {
        lens[i] += 1;
    }
    lens
}

/// Generates a database, its queries, frame ground truth and geotags.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = centers(&mut rng, spec)?;
    let lens = segment_lengths(&mut rng, spec.n_frames, spec.n_clusters);

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut raw = Vec::with_capacity(spec.n_frames);
    let mut tags = Vec::with_capacity(spec.n_frames);
    let mut segments = Vec::with_capacity(spec.n_clusters);
    let mut pos = GEO_ORIGIN;
    for (center, &len) in centers.iter().zip(&lens) {
        let start = frames.len();
        let dir = tangent(&mut rng, center);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = GEO_STEP * rng.random_range(0.6..1.4);
        for t in 0..len {
            let phase = if len > 1 {
                2.0 * t as f64 / (len - 1) as f64 - 1.0
            } else {
                0.0
            };
            let angle = spec.sweep * phase;
            let on_path: Vec<f64> = center
                .iter()
                .zip(&dir)
                .map(|(c, d)| angle.cos() * c + angle.sin() * d)
                .collect();
            let v = perturb(&mut rng, &on_path, spec.intra_noise);
            frames.push(FeatureVector::new(v.iter().map(|&x| x as f32).collect())?);
            raw.push(v);
            tags.push(pos);
            pos = GeoTag::new(pos.lat + speed * heading.sin(), pos.lon + speed * heading.cos());
        }
        segments.push(start..frames.len());
    }

    let queries = raw
        .iter()
        .map(|v| {
            let q = perturb(&mut rng, v, spec.query_noise);
            FeatureVector::new(q.iter().map(|&x| x as f32).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthData {
        db: FrameDatabase::from_vectors(frames, "synthetic_db")?.with_geotags(tags)?,
        queries: FrameDatabase::from_vectors(queries, "synthetic_queries")?,
        truth: GroundTruth::Frame((0..spec.n_frames).collect()),
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec {
            n_frames: 120,
            dim: 16,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.db, b.db);
        assert_eq!(a.queries, b.queries);
        let c = generate(&SynthSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a.db, c.db);
    }

    #[test]
    fn zero_query_noise_copies_sources() {
        let spec = SynthSpec {
            n_frames: 6,
            dim: 8,
            n_clusters: 2,
            intra_noise: 0.02,
            query_noise: 0.0,
            ..SynthSpec::default()
        };
        let data = generate(&spec).unwrap();
        for i in 0..6 {
            assert_eq!(data.queries.frame(i), data.db.frame(i));
        }
    }

    #[test]
    fn segments_tile_the_walk() {
        let data = generate(&SynthSpec {
            n_frames: 103,
            dim: 8,
            n_clusters: 7,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(data.segments.len(), 7);
        assert_eq!(data.segments[0].start, 0);
        assert_eq!(data.segments.last().unwrap().end, 103);
        assert!(data.segments.windows(2).all(|w| w[0].end == w[1].start));
        assert!(data.segments.iter().all(|s| !s.is_empty()));
        assert_eq!(data.geotags().len(), 103);
    }

    #[test]
    fn centers_respect_gap() {
        let spec = SynthSpec {
            dim: 3,
            n_clusters: 6,
            inter_gap: 0.9,
            ..SynthSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs = centers(&mut rng, &spec).unwrap();
        for i in 0..cs.len() {
            for j in 0..i {
                assert!(dot(&cs[i], &cs[j]).clamp(-1.0, 1.0).acos() >= 0.9 - 1e-12);
            }
        }
    }

    #[test]
    fn impossible_separation_errors() {
        let spec = SynthSpec {
            dim: 2,
            n_clusters: 8,
            inter_gap: 1.5,
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::InfeasibleSeparation { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = SynthSpec::default();
        for bad in [
            SynthSpec { n_clusters: 1, ..base.clone() },
            SynthSpec { n_frames: 5, n_clusters: 6, ..base.clone() },
            SynthSpec { dim: 1, ..base.clone() },
            SynthSpec { intra_noise: -0.1, ..base.clone() },
        ] {
            assert!(generate(&bad).is_err());
        }
    }
}

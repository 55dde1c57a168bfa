//! Medoid silhouette and eager swap-based medoid silhouette clustering.
//!
//! The per-point score of a non-medoid is `1 - a/b`, where `a` and `b` are
//! its cosine distances to the nearest and second-nearest medoid. The
//! clustering objective (AMS) is the mean score over the non-medoids only.
//!
//! The optimizer caches the three nearest medoids of every point, which is
//! enough to evaluate the effect of removing any one medoid and adding one
//! candidate exactly. For a fixed candidate, the deltas of all `k` possible
//! removals are accumulated in a single `O(N + k)` pass.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{distance_unchecked, FrameDatabase};

/// A swap is only executed when it raises AMS by more than this.
pub const SWAP_EPSILON: f64 = 1e-12;

/// Default number of random restarts.
pub const DEFAULT_RESTARTS: usize = 10;

/// Dense pairwise cosine-distance matrix.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_database(db: &FrameDatabase) -> Self {
        let n = db.len();
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let fi = db.frame(i);
            for (j, d) in row.iter_mut().enumerate() {
                // same operand order for (i, j) and (j, i) keeps the matrix symmetric
                *d = if i <= j {
                    distance_unchecked(fi, db.frame(j))
                } else {
                    distance_unchecked(db.frame(j), fi)
                };
            }
        });
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

#[inline]
fn sil(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        1.0 - a / b
    } else {
        0.0
    }
}

/// Two smallest of three values, ascending.
#[inline]
fn two_smallest(x: f64, y: f64, z: f64) -> (f64, f64) {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if z < lo {
        (z, lo)
    } else if z < hi {
        (lo, z)
    } else {
        (lo, hi)
    }
}

/// Medoid silhouette `1 - a/b` of one point; `a == b == 0` scores 0.
pub fn silhouette_score(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0) || !(b >= a) {
        return Err(Error::Contract(format!(
            "silhouette needs b >= a >= 0, got a = {a}, b = {b}"
        )));
    }
    Ok(sil(a, b))
}

/// Mean silhouette over `(a, b)` pairs, one per non-medoid.
pub fn average_silhouette(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in pairs {
        sum += silhouette_score(a, b)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Contract("no non-medoids to average over".into()));
    }
    Ok(sum / n as f64)
}

fn check_medoids(n: usize, medoids: &[usize]) -> Result<Vec<usize>> {
    let k = medoids.len();
    if n == 0 {
        return Err(Error::EmptyDatabase);
    }
    if k < 2 || k + 1 > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut sorted = medoids.to_vec();
    sorted.sort_unstable();
    if let Some(&bad) = sorted.iter().find(|&&m| m >= n) {
        return Err(Error::Contract(format!("medoid {bad} outside 0..{n}")));
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("duplicate medoid index".into()));
    }
    Ok(sorted)
}

/// Average medoid silhouette evaluated from scratch with [`distance_unchecked`].
///
/// This does not touch any cache and serves as the reference for the
/// incremental swap evaluation.
pub fn recompute_ams(db: &FrameDatabase, medoids: &[usize]) -> Result<f64> {
    let medoids = check_medoids(db.len(), medoids)?;
    let pairs = (0..db.len())
        .filter(|i| medoids.binary_search(i).is_err())
        .map(|i| {
            let fi = db.frame(i);
            let mut best = (f64::INFINITY, f64::INFINITY);
            for &m in &medoids {
                let d = distance_unchecked(db.frame(m), fi);
                if d < best.0 {
                    best = (d, best.0);
                } else if d < best.1 {
                    best.1 = d;
                }
            }
            best
        });
    average_silhouette(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbor {
    d: f64,
    m: usize,
}

const NONE: Neighbor = Neighbor {
    d: f64::INFINITY,
    m: usize::MAX,
};

impl Neighbor {
    #[inline]
    fn before(&self, other: &Neighbor) -> bool {
        self.d < other.d || (self.d == other.d && self.m < other.m)
    }
}

/// Three nearest medoids of a point, excluding the point itself.
#[derive(Clone, Copy, Debug)]
struct Nearest([Neighbor; 3]);

impl Nearest {
    fn empty() -> Self {
        Nearest([NONE; 3])
    }

    #[inline]
    fn insert(&mut self, nb: Neighbor) {
        let s = &mut self.0;
        if nb.before(&s[0]) {
            s[2] = s[1];
            s[1] = s[0];
            s[0] = nb;
        } else if nb.before(&s[1]) {
            s[2] = s[1];
            s[1] = nb;
        } else if nb.before(&s[2]) {
            s[2] = nb;
        }
    }

    #[inline]
    fn contains(&self, m: usize) -> bool {
        self.0.iter().any(|nb| nb.m == m)
    }
}

/// One non-medoid's nearest and second-nearest medoid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonMedoid {
    pub index: usize,
    pub nearest: usize,
    pub second: usize,
    pub a: f64,
    pub b: f64,
}

/// Medoid set together with each point's nearest medoids.
///
/// Ties at equal distance resolve to the lower frame index.
#[derive(Clone, Debug)]
pub struct MedoidAssignment {
    medoids: Vec<usize>,
    is_medoid: Vec<bool>,
    near: Vec<Nearest>,
}

impl MedoidAssignment {
    pub fn new(dist: &DistanceMatrix, medoids: &[usize]) -> Result<Self> {
        let medoids = check_medoids(dist.len(), medoids)?;
        let mut is_medoid = vec![false; dist.len()];
        for &m in &medoids {
            is_medoid[m] = true;
        }
        let mut a = MedoidAssignment {
            medoids,
            is_medoid,
            near: Vec::new(),
        };
        a.near = (0..dist.len()).map(|p| a.scan_nearest(dist, p)).collect();
        Ok(a)
    }

    fn scan_nearest(&self, dist: &DistanceMatrix, p: usize) -> Nearest {
        let row = dist.row(p);
        let mut nearest = Nearest::empty();
        for &m in self.medoids.iter().filter(|&&m| m != p) {
            nearest.insert(Neighbor { d: row[m], m });
        }
        nearest
    }

    /// Sorted medoid indices.
    pub fn medoids(&self) -> &[usize] {
        &self.medoids
    }

    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn len(&self) -> usize {
        self.is_medoid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_medoid.is_empty()
    }

    pub fn is_medoid(&self, i: usize) -> bool {
        self.is_medoid[i]
    }

    pub fn non_medoid_count(&self) -> usize {
        self.len() - self.k()
    }

    pub fn non_medoids(&self) -> impl Iterator<Item = NonMedoid> + '_ {
        (0..self.len())
            .filter(|&i| !self.is_medoid[i])
            .map(|i| {
                let [n1, n2, _] = self.near[i].0;
                NonMedoid {
                    index: i,
                    nearest: n1.m,
                    second: n2.m,
                    a: n1.d,
                    b: n2.d,
                }
            })
    }

    /// AMS from the cached distances.
    pub fn ams(&self) -> f64 {
        let sum: f64 = (0..self.len())
            .filter(|&i| !self.is_medoid[i])
            .map(|i| sil(self.near[i].0[0].d, self.near[i].0[1].d))
            .sum();
        sum / self.non_medoid_count() as f64
    }

    fn check_swap(&self, out: usize, candidate: usize) -> Result<()> {
        if out >= self.len() || !self.is_medoid[out] {
            return Err(Error::Contract(format!("{out} is not a medoid")));
        }
        if candidate >= self.len() || self.is_medoid[candidate] {
            return Err(Error::Contract(format!("{candidate} is not a non-medoid")));
        }
        Ok(())
    }

    /// Score of the medoid `m` once it becomes a non-medoid and `candidate`
    /// joins the medoid set.
    #[inline]
    fn demoted_score(&self, m: usize, d_to_candidate: f64) -> f64 {
        let [e1, e2, _] = self.near[m].0;
        let (a, b) = two_smallest(e1.d, e2.d, d_to_candidate);
        sil(a, b)
    }

    /// Change in AMS from replacing medoid `out` with non-medoid `candidate`.
    pub fn swap_delta(&self, dist: &DistanceMatrix, out: usize, candidate: usize) -> Result<f64> {
        self.check_swap(out, candidate)?;
        let row = dist.row(candidate);
        let mut acc = 0.0;
        for o in 0..self.len() {
            if self.is_medoid[o] || o == candidate {
                continue;
            }
            let [n1, n2, n3] = self.near[o].0;
            let dxo = row[o];
            let (a, b) = if n1.m == out {
                two_smallest(n2.d, n3.d, dxo)
            } else if n2.m == out {
                two_smallest(n1.d, n3.d, dxo)
            } else {
                two_smallest(n1.d, n2.d, dxo)
            };
            acc += sil(a, b) - sil(n1.d, n2.d);
        }
        let [x1, x2, _] = self.near[candidate].0;
        acc += self.demoted_score(out, row[out]) - sil(x1.d, x2.d);
        Ok(acc / self.non_medoid_count() as f64)
    }

    /// Best medoid to replace with `candidate` and the resulting AMS change.
    /// `bucket` is scratch space of length N. Equal deltas keep the lower
    /// medoid index.
    fn best_swap(&self, dist: &DistanceMatrix, candidate: usize, bucket: &mut [f64]) -> (usize, f64) {
        for &m in &self.medoids {
            bucket[m] = 0.0;
        }
        let row = dist.row(candidate);
        let mut shared = 0.0;
        for o in 0..self.len() {
            if self.is_medoid[o] || o == candidate {
                continue;
            }
            let [n1, n2, n3] = self.near[o].0;
            let dxo = row[o];
            let old = sil(n1.d, n2.d);
            let (a, b) = two_smallest(n1.d, n2.d, dxo);
            let keep = sil(a, b);
            shared += keep - old;
            let (a, b) = two_smallest(n2.d, n3.d, dxo);
            bucket[n1.m] += sil(a, b) - keep;
            let (a, b) = two_smallest(n1.d, n3.d, dxo);
            bucket[n2.m] += sil(a, b) - keep;
        }
        let [x1, x2, _] = self.near[candidate].0;
        let leaving = sil(x1.d, x2.d);
        let nn = self.non_medoid_count() as f64;
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &m in &self.medoids {
            let delta = (shared + bucket[m] + self.demoted_score(m, row[m]) - leaving) / nn;
            if delta > best.1 {
                best = (m, delta);
            }
        }
        best
    }

    /// Replaces medoid `out` with `candidate` and refreshes the caches.
    pub fn apply_swap(&mut self, dist: &DistanceMatrix, out: usize, candidate: usize) -> Result<()> {
        self.check_swap(out, candidate)?;
        let pos = self.medoids.binary_search(&out).expect("out is a medoid");
        self.medoids.remove(pos);
        let pos = self.medoids.binary_search(&candidate).unwrap_err();
        self.medoids.insert(pos, candidate);
        self.is_medoid[out] = false;
        self.is_medoid[candidate] = true;
        let row = dist.row(candidate);
        for p in 0..self.len() {
            if self.near[p].contains(out) {
                self.near[p] = self.scan_nearest(dist, p);
            } else if p != candidate {
                self.near[p].insert(Neighbor {
                    d: row[p],
                    m: candidate,
                });
            }
        }
        Ok(())
    }
}

/// How the initial medoids are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum Init {
    /// Best of `restarts` runs from uniform random k-subsets.
    RandomRestart { restarts: usize, seed: u64 },
    /// Medoids seeded on the centered uniform lattice.
    FixedRate,
}

impl Init {
    pub fn random(seed: u64) -> Self {
        Init::RandomRestart {
            restarts: DEFAULT_RESTARTS,
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Init::RandomRestart { .. } => "random_restart",
            Init::FixedRate => "fixed_rate",
        }
    }
}

/// Centered uniform lattice `floor((j + 0.5) * n / count)` for `j < count`,
/// de-duplicated.
pub fn lattice_indices(n: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..count)
        .map(|j| ((j as f64 + 0.5) * n as f64 / count as f64).floor() as usize)
        .map(|i| i.min(n.saturating_sub(1)))
        .collect();
    out.dedup();
    out
}

#[derive(Clone, Debug)]
pub struct ClusteringResult {
    pub assignment: MedoidAssignment,
    pub ams: f64,
    /// Number of executed swaps in the winning run.
    pub iterations: usize,
    pub init: Init,
    /// Restart ordinal that produced the result (0 for fixed-rate seeding).
    pub restart: usize,
    /// AMS after initialization and after every executed swap.
    pub trace: Vec<f64>,
}

impl ClusteringResult {
    pub fn medoids(&self) -> &[usize] {
        self.assignment.medoids()
    }

    pub fn seed(&self) -> Option<u64> {
        match self.init {
            Init::RandomRestart { seed, .. } => Some(seed),
            Init::FixedRate => None,
        }
    }
}

struct Run {
    assignment: MedoidAssignment,
    ams: f64,
    swaps: usize,
    trace: Vec<f64>,
}

/// Eager swap search from `initial` until a full cycle over all points finds
/// no improving swap.
fn optimize(dist: &DistanceMatrix, initial: &[usize]) -> Result<Run> {
    let mut assignment = MedoidAssignment::new(dist, initial)?;
    let n = dist.len();
    let mut ams = assignment.ams();
    let mut trace = vec![ams];
    let mut bucket = vec![0.0; n];
    let mut swaps = 0;
    let mut since_swap = 0;
    let mut j = 0;
    while since_swap < n {
        if !assignment.is_medoid(j) {
            let (out, delta) = assignment.best_swap(dist, j, &mut bucket);
            if delta > SWAP_EPSILON {
                assignment.apply_swap(dist, out, j)?;
                ams = assignment.ams();
                trace.push(ams);
                swaps += 1;
                since_swap = 0;
            }
        }
        j = (j + 1) % n;
        since_swap += 1;
    }
    Ok(Run {
        assignment,
        ams,
        swaps,
        trace,
    })
}

fn restart_medoids(n: usize, k: usize, seed: u64, ordinal: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal as u64);
    let mut m = index::sample(&mut rng, n, k).into_vec();
    m.sort_unstable();
    m
}

/// Medoid silhouette clustering of `db` into `k` medoids.
pub fn faster_msc(db: &FrameDatabase, k: usize, init: Init) -> Result<ClusteringResult> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if k < 2 || k + 1 > db.len() {
        return Err(Error::InvalidK { k, n: db.len() });
    }
    faster_msc_with(&DistanceMatrix::from_database(db), k, init)
}

/// Same as [`faster_msc`] on a precomputed distance matrix, so several `k`
/// values can share one matrix. Restarts run on the current rayon pool.
pub fn faster_msc_with(dist: &DistanceMatrix, k: usize, init: Init) -> Result<ClusteringResult> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::EmptyDatabase);
    }
    if k < 2 || k + 1 > n {
        return Err(Error::InvalidK { k, n });
    }
    let (restart, run) = match init {
        Init::FixedRate => (0, optimize(dist, &lattice_indices(n, k))?),
        Init::RandomRestart { restarts, seed } => {
            if restarts == 0 {
                return Err(Error::InvalidArgument("restarts must be positive".into()));
            }
            let runs = (0..restarts)
                .into_par_iter()
                .map(|r| optimize(dist, &restart_medoids(n, k, seed, r)))
                .collect::<Result<Vec<_>>>()?;
            // max AMS, earliest ordinal on ties
            let mut best: Option<(usize, Run)> = None;
            for (r, run) in runs.into_iter().enumerate() {
                if best.as_ref().is_none_or(|(_, b)| run.ams > b.ams) {
                    best = Some((r, run));
                }
            }
            best.expect("at least one restart")
        }
    };
    Ok(ClusteringResult {
        ams: run.ams,
        iterations: run.swaps,
        trace: run.trace,
        assignment: run.assignment,
        init,
        restart,
    })
}

//! Two-stage keyframe search.
//!
//! Stage 1 scores the query against every keyframe. Stage 2 searches the
//! adjacent region of the winning keyframe, i.e. the closed frame interval
//! from the preceding keyframe to the succeeding one. im2im is the `L = 1`
//! case of seq2seq, where a query sequence of length `L` is scored against a
//! window by summing per-position cosine similarities.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{cosine, FrameDatabase};
use crate::strategies::KeyframeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Im2Im,
    Seq2Seq,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Im2Im => "im2im",
            Task::Seq2Seq => "seq2seq",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "im2im" => Ok(Task::Im2Im),
            "seq2seq" => Ok(Task::Seq2Seq),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Inclusive frame interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
}

impl Region {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..=self.end).contains(&i)
    }
}

/// Outcome of a single query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    /// Best frame (im2im) or center frame of the best window (seq2seq).
    pub best_index: usize,
    pub best_similarity: f64,
    /// Winning keyframe; `None` for the exhaustive baseline.
    pub stage1_keyframe: Option<usize>,
    /// Number of feature-pair similarity evaluations.
    pub comparisons: u64,
    pub elapsed_ns: u64,
}

#[derive(Serialize)]
struct QueryLine {
    query: usize,
    best: usize,
    sim: f64,
    stage1: Option<usize>,
    comparisons: u64,
    ns: u64,
}

impl QueryReport {
    /// One JSON line: `{"query","best","sim","stage1","comparisons","ns"}`.
    pub fn to_json_line(&self, query: usize) -> String {
        serde_json::to_string(&QueryLine {
            query,
            best: self.best_index,
            sim: self.best_similarity,
            stage1: self.stage1_keyframe,
            comparisons: self.comparisons,
            ns: self.elapsed_ns,
        })
        .expect("plain struct serializes")
    }
}

/// Cosine similarity against database frames, counting every evaluation.
struct Scorer<'a> {
    db: &'a FrameDatabase,
    comparisons: u64,
}

impl<'a> Scorer<'a> {
    fn new(db: &'a FrameDatabase) -> Self {
        Scorer { db, comparisons: 0 }
    }

    #[inline]
    fn sim(&mut self, q: &[f32], frame: usize) -> f64 {
        self.comparisons += 1;
        cosine(q, self.db.frame(frame))
    }

    fn window(&mut self, qseq: &[&[f32]], start: usize) -> f64 {
        qseq.iter().enumerate().map(|(j, q)| self.sim(q, start + j)).sum()
    }
}

fn check_query<'q, Q: AsRef<[f32]>>(db: &FrameDatabase, qseq: &'q [Q]) -> Result<Vec<&'q [f32]>> {
    if qseq.is_empty() {
        return Err(Error::InvalidArgument("query sequence is empty".into()));
    }
    if qseq.len() > db.len() {
        return Err(Error::InvalidArgument(format!(
            "query sequence of {} frames is longer than the database ({})",
            qseq.len(),
            db.len()
        )));
    }
    qseq.iter()
        .map(|q| {
            let q = q.as_ref();
            db.check_dim(q.len()).map(|_| q)
        })
        .collect()
}

/// Keyframes with their adjacent regions over an immutable database.
#[derive(Clone, Debug)]
pub struct SearchIndex<'a> {
    db: &'a FrameDatabase,
    keyframes: Vec<usize>,
    regions: Vec<Region>,
}

impl<'a> SearchIndex<'a> {
    pub fn build(db: &'a FrameDatabase, keyframes: &KeyframeSet) -> Result<Self> {
        Self::from_indices(db, &keyframes.indices)
    }

    /// Index over sorted, distinct keyframe indices.
    pub fn from_indices(db: &'a FrameDatabase, keyframes: &[usize]) -> Result<Self> {
        let n = db.len();
        if keyframes.is_empty() {
            return Err(Error::InvalidArgument("no keyframes".into()));
        }
        if keyframes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("keyframe indices must be strictly increasing".into()));
        }
        if let Some(&bad) = keyframes.iter().find(|&&k| k >= n) {
            return Err(Error::Contract(format!(
                "keyframe {bad} outside a database of {n} frames"
            )));
        }
        let last = keyframes.len() - 1;
        let regions = (0..keyframes.len())
            .map(|i| Region {
                start: if i == 0 { 0 } else { keyframes[i - 1] },
                end: if i == last { n - 1 } else { keyframes[i + 1] },
            })
            .collect();
        Ok(SearchIndex {
            db,
            keyframes: keyframes.to_vec(),
            regions,
        })
    }

    pub fn db(&self) -> &'a FrameDatabase {
        self.db
    }

    pub fn keyframes(&self) -> &[usize] {
        &self.keyframes
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Region of the keyframe at frame index `keyframe`.
    pub fn region_of(&self, keyframe: usize) -> Option<Region> {
        self.keyframes
            .binary_search(&keyframe)
            .ok()
            .map(|pos| self.regions[pos])
    }

    /// The region stage 2 searches for a query of length `len`: the keyframe's
    /// region, grown around the keyframe when shorter than `len`.
    pub fn search_region(&self, keyframe_pos: usize, len: usize) -> Region {
        let mut r = self.regions[keyframe_pos];
        let last = self.db.len() - 1;
        while r.len() < len {
            if r.start > 0 {
                r.start -= 1;
            }
            if r.len() < len && r.end < last {
                r.end += 1;
            }
        }
        r
    }

    pub fn query_im2im(&self, q: &[f32]) -> Result<QueryReport> {
        self.query_seq2seq(&[q])
    }

    pub fn query_seq2seq<Q: AsRef<[f32]>>(&self, qseq: &[Q]) -> Result<QueryReport> {
        let qseq = check_query(self.db, qseq)?;
        let started = Instant::now();
        let mut scorer = Scorer::new(self.db);

        let mut best_kf = (0, f64::NEG_INFINITY);
        for (pos, &k) in self.keyframes.iter().enumerate() {
            let score: f64 = qseq.iter().map(|q| scorer.sim(q, k)).sum();
            if score > best_kf.1 {
                best_kf = (pos, score);
            }
        }

        let region = self.search_region(best_kf.0, qseq.len());
        let mut best = (region.start, f64::NEG_INFINITY);
        for p in region.start..=region.end + 1 - qseq.len() {
            let score = scorer.window(&qseq, p);
            if score > best.1 {
                best = (p, score);
            }
        }
        Ok(QueryReport {
            best_index: best.0 + qseq.len() / 2,
            best_similarity: best.1,
            stage1_keyframe: Some(self.keyframes[best_kf.0]),
            comparisons: scorer.comparisons,
            elapsed_ns: started.elapsed().as_nanos() as u64,
        })
    }
}

/// Exhaustive baseline: every window of `qseq.len()` frames is scored; a
/// single-frame query is plain im2im.
pub fn query_exhaustive<Q: AsRef<[f32]>>(db: &FrameDatabase, qseq: &[Q]) -> Result<QueryReport> {
    let qseq = check_query(db, qseq)?;
    let started = Instant::now();
    let mut scorer = Scorer::new(db);
    let mut best = (0, f64::NEG_INFINITY);
    for p in 0..=db.len() - qseq.len() {
        let score = scorer.window(&qseq, p);
        if score > best.1 {
            best = (p, score);
        }
    }
    Ok(QueryReport {
        best_index: best.0 + qseq.len() / 2,
        best_similarity: best.1,
        stage1_keyframe: None,
        comparisons: scorer.comparisons,
        elapsed_ns: started.elapsed().as_nanos() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurestore::FeatureVector;

    /// Ten frames on a quarter circle; cosine falls off with index distance.
    fn toy(n: usize) -> FrameDatabase {
        FrameDatabase::from_vectors(
            (0..n)
                .map(|i| {
                    let a = i as f64 * 0.15;
                    FeatureVector::new(vec![a.cos() as f32, a.sin() as f32, 0.1]).unwrap()
                })
                .collect(),
            "toy",
        )
        .unwrap()
    }

    fn r(start: usize, end: usize) -> Region {
        Region { start, end }
    }

    #[test]
    fn regions_follow_neighbors() {
        let db = toy(10);
        let idx = SearchIndex::from_indices(&db, &[2, 5, 8]).unwrap();
        assert_eq!(idx.regions(), &[r(0, 5), r(2, 8), r(5, 9)]);
        let idx = SearchIndex::from_indices(&db, &[0, 9]).unwrap();
        assert_eq!(idx.regions(), &[r(0, 9), r(0, 9)]);
        let all: Vec<usize> = (0..10).collect();
        let idx = SearchIndex::from_indices(&db, &all).unwrap();
        for (i, reg) in idx.regions().iter().enumerate() {
            assert_eq!(*reg, r(i.saturating_sub(1), (i + 1).min(9)));
        }
        assert!(SearchIndex::from_indices(&db, &[2, 10]).is_err());
        assert!(SearchIndex::from_indices(&db, &[5, 2]).is_err());
    }

    #[test]
    fn im2im_finds_frame_seven() {
        let db = toy(10);
        let idx = SearchIndex::from_indices(&db, &[2, 5, 8]).unwrap();
        let q = db.frame(7);
        let rep = idx.query_im2im(q).unwrap();
        let base = query_exhaustive(&db, &[q]).unwrap();
        assert_eq!(rep.best_index, 7);
        assert_eq!(base.best_index, 7);
        assert_eq!(rep.stage1_keyframe, Some(8));
        assert_eq!(rep.comparisons, 3 + 5);
        assert_eq!(base.comparisons, 10);
    }

    #[test]
    fn keyframe_query_returns_itself() {
        let db = toy(10);
        let idx = SearchIndex::from_indices(&db, &[2, 5, 8]).unwrap();
        for k in [2, 5, 8] {
            assert_eq!(idx.query_im2im(db.frame(k)).unwrap().best_index, k);
        }
    }

    #[test]
    fn seq2seq_window_six_to_eight() {
        let db = toy(10);
        let idx = SearchIndex::from_indices(&db, &[2, 5, 8]).unwrap();
        let qseq = [db.frame(6), db.frame(7), db.frame(8)];
        let rep = idx.query_seq2seq(&qseq).unwrap();
        let base = query_exhaustive(&db, &qseq).unwrap();
        assert_eq!(rep.best_index, 7);
        assert_eq!(base.best_index, 7);
        // 3 keyframes x 3 + windows in [5, 9]: 3 windows x 3
        assert_eq!(rep.comparisons, 9 + 9);
        assert_eq!(base.comparisons, 8 * 3);
    }

    #[test]
    fn length_one_sequence_is_im2im() {
        let db = toy(10);
        let idx = SearchIndex::from_indices(&db, &[1, 4, 6, 9]).unwrap();
        for i in 0..10 {
            let a = idx.query_im2im(db.frame(i)).unwrap();
            let b = idx.query_seq2seq(&[db.frame(i)]).unwrap();
            assert_eq!(a.best_index, b.best_index);
        }
    }

    #[test]
    fn short_region_grows_around_keyframe() {
        let db = toy(10);
        let all: Vec<usize> = (0..10).collect();
        let idx = SearchIndex::from_indices(&db, &all).unwrap();
        assert_eq!(idx.search_region(0, 5), r(0, 4));
        assert_eq!(idx.search_region(5, 5), r(3, 7));
        assert_eq!(idx.search_region(9, 5), r(5, 9));
        let qseq: Vec<&[f32]> = (3..8).map(|i| db.frame(i)).collect();
        assert_eq!(idx.query_seq2seq(&qseq).unwrap().best_index, 5);
    }

    #[test]
    fn constant_db_ties_to_first_frame() {
        let db = FrameDatabase::from_vectors(
            vec![FeatureVector::new(vec![1.0, 0.0]).unwrap(); 5],
            "c",
        )
        .unwrap();
        assert_eq!(query_exhaustive(&db, &[db.frame(0)]).unwrap().best_index, 0);
    }

    #[test]
    fn rejects_bad_queries() {
        let db = toy(4);
        let idx = SearchIndex::from_indices(&db, &[0, 3]).unwrap();
        assert!(matches!(
            idx.query_im2im(&[1.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
        let empty: [&[f32]; 0] = [];
        assert!(idx.query_seq2seq(&empty).is_err());
        let long = [db.frame(0); 5];
        assert!(query_exhaustive(&db, &long).is_err());
    }

    #[test]
    fn json_line_fields() {
        let rep = QueryReport {
            best_index: 7,
            best_similarity: 0.5,
            stage1_keyframe: Some(8),
            comparisons: 8,
            elapsed_ns: 100,
        };
        assert_eq!(
            rep.to_json_line(3),
            r#"{"query":3,"best":7,"sim":0.5,"stage1":8,"comparisons":8,"ns":100}"#
        );
    }
}

//! Salient scene points: loading, a geometric fallback source, projection
//! into descriptor cells, and descriptor pruning by received projections.
//!
//! Salient points live in the descriptor frame, i.e. relative to the test
//! point the descriptor origin was placed on.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agglomerate::{agglomerate_in_frame, AgglomerateError, AgglomeratedDescriptor, AgglomerationMode};
use crate::cloud::SpatialIndex;
use crate::detect::{detect_at, Scorer};
use crate::tensor::{AffordanceDescriptor, AffordanceKeypoint};

pub const SCHEMA: &str = "affordance-saliency";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("keep budget must be positive, got {0}")]
    InvalidKeep(f64),
    #[error("tally has {tally} cells and {tally_affordances} affordances, descriptor has {cells} and {affordances}")]
    TallyMismatch {
        tally: usize,
        tally_affordances: usize,
        cells: usize,
        affordances: usize,
    },
    #[error(transparent)]
    Agglomerate(#[from] AgglomerateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencyRecord {
    pub scene_id: String,
    pub affordance_ids: Vec<u32>,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SaliencyRecord {
    pub fn empty(scene_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            affordance_ids: Vec::new(),
            points: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.points[i])
    }

    /// Semantic checks against a set of known affordance ids.
    pub fn check(&self, known: &[u32]) -> Result<(), String> {
        if self.affordance_ids.is_empty() {
            return Err("no affordance ids".into());
        }
        if let Some(k) = self.affordance_ids.iter().find(|k| !known.contains(k)) {
            return Err(format!("unknown affordance id {k}"));
        }
        if self.points.len() != self.weights.len() {
            return Err(format!("{} points but {} weights", self.points.len(), self.weights.len()));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err("weights must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Whether every salient point is within `tolerance` of `cloud`.
    pub fn within(&self, cloud: &SpatialIndex, tolerance: f64) -> bool {
        (0..self.points.len()).all(|i| cloud.nearest(&self.point(i)).is_some_and(|(_, d)| d <= tolerance))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedSaliency {
    pub records: Vec<SaliencyRecord>,
    /// (record index, reason) for each record that failed semantic checks
    pub rejected: Vec<(usize, String)>,
}

/// Reads a saliency file. Malformed lines are errors; records naming unknown
/// affordances or otherwise inconsistent are skipped with a warning.
pub fn read_saliency<R: BufRead>(input: R, known: &[u32]) -> Result<LoadedSaliency, SaliencyError> {
    let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (line, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => {
            return Err(SaliencyError::Schema {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let h: Header = serde_json::from_str(&header).map_err(|e| SaliencyError::Schema {
        line,
        msg: format!("bad header: {e}"),
    })?;
    if h.schema != SCHEMA || h.version != SCHEMA_VERSION {
        return Err(SaliencyError::Schema {
            line,
            msg: format!(
                "expected schema {SCHEMA} version {SCHEMA_VERSION}, found {} version {}",
                h.schema, h.version
            ),
        });
    }
    let mut out = LoadedSaliency::default();
    for (index, (line, text)) in lines.enumerate() {
        let r: SaliencyRecord = serde_json::from_str(&text?).map_err(|e| SaliencyError::Schema {
            line,
            msg: format!("record {index}: {e}"),
        })?;
        match r.check(known) {
            Ok(()) => out.records.push(r),
            Err(reason) => {
                log::warn!("saliency record {index} (line {line}) rejected: {reason}");
                out.rejected.push((index, reason));
            }
        }
    }
    Ok(out)
}

pub fn load_saliency(path: &Path, known: &[u32]) -> Result<LoadedSaliency, SaliencyError> {
    read_saliency(io::BufReader::new(fs::File::open(path)?), known)
}

pub fn write_saliency<W: Write>(mut out: W, records: &[SaliencyRecord]) -> Result<(), SaliencyError> {
    let header = Header {
        schema: SCHEMA.into(),
        version: SCHEMA_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))?;
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("serializable"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackStatus {
    Found,
    NoDetections,
}

#[derive(Debug, Clone)]
pub struct FallbackSaliency {
    pub status: FallbackStatus,
    pub record: SaliencyRecord,
    /// scene index of the winning test point
    pub test_point_id: Option<usize>,
    /// scene indices of the salient points, same order as the record
    pub scene_indices: Vec<usize>,
}

/// Salient points from detection alone. At the best-scoring test point, every
/// cell of each above-threshold affordance (in its winning orientation) votes
/// for the scene point its test vector lands on. The most-voted points are
/// kept, `top_fraction` of all voted points, with vote counts as weights.
pub fn fallback_saliency(
    scene_id: &str,
    scene: &SpatialIndex,
    descriptor: &AgglomeratedDescriptor,
    test_ids: &[usize],
    threshold: f64,
    top_fraction: f64,
) -> FallbackSaliency {
    let none = || FallbackSaliency {
        status: FallbackStatus::NoDetections,
        record: SaliencyRecord::empty(scene_id),
        test_point_id: None,
        scene_indices: Vec::new(),
    };
    let scorer = Scorer::new(descriptor, None);
    let detections = detect_at(scene, descriptor, &scorer, test_ids, threshold);
    let Some(top) = detections.first() else {
        return none();
    };
    let tid = top.test_point_id;
    let t = scene.point(tid);
    let winners: BTreeMap<u32, u8> = detections
        .iter()
        .filter(|d| d.test_point_id == tid)
        .map(|d| (d.affordance_id, d.orientation_id))
        .collect();
    let (_, targets) = scorer.score_with_targets(scene, &t);
    let mut votes: BTreeMap<usize, u32> = BTreeMap::new();
    for (cell, target) in descriptor.cells.iter().zip(&targets) {
        let Some(target) = target else { continue };
        for e in &cell.entries {
            if winners.get(&e.affordance_id) == Some(&e.orientation_id) {
                *votes.entry(*target).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(usize, u32)> = votes.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep = ((top_fraction.clamp(0.0, 1.0) * ranked.len() as f64).ceil() as usize).min(ranked.len());
    ranked.truncate(keep);
    let record = SaliencyRecord {
        scene_id: scene_id.into(),
        affordance_ids: winners.keys().copied().collect(),
        points: ranked.iter().map(|(i, _)| (scene.point(*i) - t).into()).collect(),
        weights: ranked.iter().map(|(_, c)| *c as f64).collect(),
    };
    FallbackSaliency {
        status: FallbackStatus::Found,
        record,
        test_point_id: Some(tid),
        scene_indices: ranked.iter().map(|(i, _)| *i).collect(),
    }
}

/// Projections received per cell and affordance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTally {
    affordance_ids: Vec<u32>,
    /// `counts[cell * affordances + slot]`
    counts: Vec<f64>,
    /// projections that found no cell for their affordance
    pub unplaced: BTreeMap<u32, usize>,
}

impl ProjectionTally {
    pub fn new(descriptor: &AgglomeratedDescriptor) -> Self {
        let affordance_ids = descriptor.affordance_ids();
        Self {
            counts: vec![0.0; descriptor.cells.len() * affordance_ids.len()],
            affordance_ids,
            unplaced: BTreeMap::new(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.counts.len().checked_div(self.affordance_ids.len()).unwrap_or(0)
    }

    fn slot(&self, k: u32) -> Option<usize> {
        self.affordance_ids.binary_search(&k).ok()
    }

    pub fn get(&self, cell: usize, k: u32) -> f64 {
        self.slot(k).map_or(0.0, |s| self.counts[cell * self.affordance_ids.len() + s])
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn affordance_total(&self, k: u32) -> f64 {
        (0..self.cell_count()).map(|c| self.get(c, k)).sum()
    }

    /// Adds `other` into `self`; both must come from the same descriptor.
    pub fn merge(&mut self, other: &ProjectionTally) {
        assert_eq!(self.affordance_ids, other.affordance_ids);
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (k, n) in &other.unplaced {
            *self.unplaced.entry(*k).or_default() += n;
        }
    }
}

/// For each salient point and each affordance of its record, the nearest
/// cell holding that affordance receives one vote (or the point's weight when
/// `weighted`). Ties go to the lowest cell index.
pub fn backproject(records: &[SaliencyRecord], descriptor: &AgglomeratedDescriptor, weighted: bool) -> ProjectionTally {
    let ids = descriptor.affordance_ids();
    let n_aff = ids.len();
    let indexes: Vec<(Vec<usize>, SpatialIndex)> = ids
        .iter()
        .map(|&k| {
            let cells: Vec<usize> = (0..descriptor.cells.len())
                .filter(|&j| descriptor.cells[j].has_affordance(k))
                .collect();
            let pts = cells.iter().map(|&j| descriptor.cells[j].centroid).collect();
            (cells, SpatialIndex::build(pts))
        })
        .collect();
    let project = |r: &SaliencyRecord| {
        let mut part = ProjectionTally::new(descriptor);
        for &k in &r.affordance_ids {
            let Some(slot) = part.slot(k) else {
                *part.unplaced.entry(k).or_default() += r.points.len();
                continue;
            };
            let (cells, index) = &indexes[slot];
            for i in 0..r.points.len() {
                match index.nearest(&r.point(i)) {
                    Some((j, _)) => {
                        let add = if weighted { r.weights[i] } else { 1.0 };
                        part.counts[cells[j] * n_aff + slot] += add;
                    }
                    None => *part.unplaced.entry(k).or_default() += 1,
                }
            }
        }
        part
    };
    let tally = records
        .par_iter()
        .map(project)
        .reduce(|| ProjectionTally::new(descriptor), |mut a, b| {
            a.merge(&b);
            a
        });
    for (k, n) in &tally.unplaced {
        log::warn!("{n} projections for affordance {k} found no cell");
    }
    tally
}

/// Per-affordance budget of cells to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Keep {
    /// the `n` most-projected cells
    Count(usize),
    /// this fraction of the affordance's cells, rounded up
    Fraction(f64),
    /// the fewest top cells holding this fraction of the affordance's tally
    Mass(f64),
}

impl Default for Keep {
    fn default() -> Self {
        Keep::Mass(0.9)
    }
}

impl Keep {
    fn validate(self) -> Result<(), SaliencyError> {
        let ok = match self {
            Keep::Count(n) => n > 0,
            Keep::Fraction(f) | Keep::Mass(f) => f > 0.0 && f <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SaliencyError::InvalidKeep(match self {
                Keep::Count(n) => n as f64,
                Keep::Fraction(f) | Keep::Mass(f) => f,
            }))
        }
    }
}

/// Keeps, per affordance, the cells that received the most projections
/// (ties to the lowest cell index). Surviving cells and entries are copied
/// verbatim; cells left without entries are dropped.
pub fn optimize_descriptor(
    descriptor: &AgglomeratedDescriptor,
    tally: &ProjectionTally,
    keep: Keep,
) -> Result<AgglomeratedDescriptor, SaliencyError> {
    keep.validate()?;
    if tally.affordance_ids != descriptor.affordance_ids() || tally.cell_count() != descriptor.cells.len() {
        return Err(SaliencyError::TallyMismatch {
            tally: tally.cell_count(),
            tally_affordances: tally.affordance_ids.len(),
            cells: descriptor.cells.len(),
            affordances: descriptor.affordances.len(),
        });
    }
    let mut selected = vec![Vec::<u32>::new(); descriptor.cells.len()];
    for &k in &tally.affordance_ids {
        let mut ranked: Vec<(usize, f64)> = (0..descriptor.cells.len())
            .filter(|&j| descriptor.cells[j].has_affordance(k))
            .map(|j| (j, tally.get(j, k)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let n = match keep {
            Keep::Count(n) => n.min(ranked.len()),
            Keep::Fraction(f) => ((f * ranked.len() as f64).ceil() as usize).min(ranked.len()),
            Keep::Mass(f) => {
                let total: f64 = ranked.iter().map(|r| r.1).sum();
                let mut acc = 0.0;
                let mut n = 0;
                while n < ranked.len() && ranked[n].1 > 0.0 && acc < f * total {
                    acc += ranked[n].1;
                    n += 1;
                }
                n
            }
        };
        if n == 0 {
            log::warn!("affordance {k} keeps no cells");
        }
        for &(j, _) in &ranked[..n] {
            selected[j].push(k);
        }
    }
    let cells = descriptor
        .cells
        .iter()
        .zip(&selected)
        .filter_map(|(c, ks)| {
            let entries: Vec<_> = c
                .entries
                .iter()
                .filter(|e| ks.contains(&e.affordance_id))
                .cloned()
                .collect();
            (!entries.is_empty()).then(|| crate::agglomerate::Cell {
                centroid: c.centroid,
                entries,
            })
        })
        .collect();
    Ok(AgglomeratedDescriptor {
        cells,
        ..descriptor.clone()
    })
}

/// Per-affordance variant: each single descriptor is pruned on its own
/// projections, then the pruned keypoints are agglomerated together.
pub fn single_variant(
    descriptors: &[AffordanceDescriptor],
    records: &[SaliencyRecord],
    keep: Keep,
    cell_size: f64,
    mode: AgglomerationMode,
) -> Result<AgglomeratedDescriptor, SaliencyError> {
    let mut pruned = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        let raw = AgglomeratedDescriptor::from_single(d);
        let tally = backproject(records, &raw, false);
        let kept = optimize_descriptor(&raw, &tally, keep)?;
        let keypoints: Vec<AffordanceKeypoint> = kept
            .cells
            .iter()
            .flat_map(|c| &c.entries)
            .flat_map(|e| {
                e.kept.iter().map(move |k| AffordanceKeypoint {
                    position: k.position,
                    provenance: k.provenance,
                    weight: k.weight,
                    affordance_id: e.affordance_id,
                    orientation_id: e.orientation_id,
                })
            })
            .collect();
        if keypoints.is_empty() {
            log::warn!("affordance {} lost every keypoint and is left out", d.affordance_id);
            continue;
        }
        pruned.push(AffordanceDescriptor {
            keypoints,
            ..d.clone()
        });
    }
    Ok(agglomerate_in_frame(&pruned, cell_size, mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agglomerate::{AffordanceInfo, Cell, CellEntry, StoredKeypoint};

    fn descriptor(cells: &[(Vector3<f64>, &[u32])]) -> AgglomeratedDescriptor {
        let mut ids: Vec<u32> = cells.iter().flat_map(|c| c.1.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        AgglomeratedDescriptor {
            cell_size: 0.01,
            mode: AgglomerationMode::Closest,
            cells: cells
                .iter()
                .map(|(c, ks)| Cell {
                    centroid: *c,
                    entries: ks
                        .iter()
                        .map(|&k| CellEntry {
                            affordance_id: k,
                            orientation_id: 0,
                            kept: vec![StoredKeypoint {
                                position: *c,
                                provenance: Vector3::new(0.0, 0.0, -0.01),
                                weight: 0.5,
                            }],
                            member_count: 1,
                        })
                        .collect(),
                })
                .collect(),
            affordances: ids
                .iter()
                .map(|&id| AffordanceInfo {
                    id,
                    label: format!("A{id}"),
                    centroid_offset: Vector3::zeros(),
                    per_orientation: 1,
                    object: vec![],
                })
                .collect(),
            source_ids: ids.clone(),
        }
    }

    fn record(ks: &[u32], pts: &[[f64; 3]]) -> SaliencyRecord {
        SaliencyRecord {
            scene_id: "s".into(),
            affordance_ids: ks.to_vec(),
            points: pts.to_vec(),
            weights: vec![1.0; pts.len()],
        }
    }

    #[test]
    fn reads_valid_and_rejects_unknown() {
        let text = format!(
            "{{\"schema\":\"{SCHEMA}\",\"version\":1}}\n{}\n{}\n{}\n",
            r#"{"scene_id":"a","affordance_ids":[1],"points":[[0,0,0]],"weights":[2.0]}"#,
            r#"{"scene_id":"b","affordance_ids":[9],"points":[],"weights":[]}"#,
            r#"{"scene_id":"c","affordance_ids":[1,2],"points":[[1,2,3],[0,0,1]],"weights":[1,0.5]}"#,
        );
        let got = read_saliency(text.as_bytes(), &[1, 2]).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.rejected.len(), 1);
        assert_eq!(got.rejected[0].0, 1);
    }

    #[test]
    fn schema_errors_carry_line() {
        let bad_header = "{\"schema\":\"other\",\"version\":1}\n";
        assert!(matches!(read_saliency(bad_header.as_bytes(), &[]), Err(SaliencyError::Schema { line: 1, .. })));
        let text = format!("{{\"schema\":\"{SCHEMA}\",\"version\":1}}\n{{\"scene_id\":1}}\n");
        assert!(matches!(read_saliency(text.as_bytes(), &[]), Err(SaliencyError::Schema { line: 2, .. })));
        assert!(matches!(read_saliency("".as_bytes(), &[]), Err(SaliencyError::Schema { line: 1, .. })));
    }

    #[test]
    fn write_read_round_trip() {
        let records = vec![record(&[1], &[[0.1, 0.2, 0.3]]), record(&[2, 1], &[])];
        let mut buf = Vec::new();
        write_saliency(&mut buf, &records).unwrap();
        assert_eq!(read_saliency(buf.as_slice(), &[1, 2]).unwrap().records, records);
    }

    #[test]
    fn single_projection() {
        let d = descriptor(&[(Vector3::zeros(), &[1]), (Vector3::new(0.1, 0.0, 0.0), &[1])]);
        let t = backproject(&[record(&[1], &[[0.09, 0.0, 0.0]])], &d, false);
        assert_eq!(t.get(1, 1), 1.0);
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn duplicates_add_up_and_weights_apply() {
        let d = descriptor(&[(Vector3::zeros(), &[1])]);
        let mut r = record(&[1], &[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(backproject(&[r.clone()], &d, false).get(0, 1), 2.0);
        r.weights = vec![0.25, 0.5];
        assert_eq!(backproject(&[r], &d, true).get(0, 1), 0.75);
    }

    #[test]
    fn missing_affordance_is_reported() {
        let d = descriptor(&[(Vector3::zeros(), &[1])]);
        let t = backproject(&[record(&[7], &[[0.0, 0.0, 0.0]])], &d, false);
        assert_eq!(t.unplaced.get(&7), Some(&1));
        assert_eq!(t.total(), 0.0);
    }

    #[test]
    fn keep_all_is_identity_and_argmax_survives() {
        let d = descriptor(&[
            (Vector3::zeros(), &[1, 2]),
            (Vector3::new(0.1, 0.0, 0.0), &[1]),
            (Vector3::new(0.2, 0.0, 0.0), &[2]),
        ]);
        let recs = [
            record(&[1], &[[0.1, 0.0, 0.0], [0.11, 0.0, 0.0], [0.0, 0.0, 0.0]]),
            record(&[2], &[[0.0, 0.0, 0.0], [0.0, 0.01, 0.0], [0.2, 0.0, 0.0]]),
        ];
        let t = backproject(&recs, &d, false);
        assert_eq!(optimize_descriptor(&d, &t, Keep::Count(100)).unwrap(), d);
        assert_eq!(optimize_descriptor(&d, &t, Keep::Fraction(1.0)).unwrap(), d);
        let one = optimize_descriptor(&d, &t, Keep::Count(1)).unwrap();
        // affordance 1 peaks at cell 1, affordance 2 at cell 0
        assert_eq!(one.cells.len(), 2);
        assert_eq!(one.cells[0].centroid, Vector3::zeros());
        assert_eq!(one.cells[0].entries.len(), 1);
        assert_eq!(one.cells[0].entries[0].affordance_id, 2);
        assert_eq!(one.cells[1].centroid, Vector3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn invalid_keep() {
        let d = descriptor(&[(Vector3::zeros(), &[1])]);
        let t = ProjectionTally::new(&d);
        assert!(matches!(optimize_descriptor(&d, &t, Keep::Count(0)), Err(SaliencyError::InvalidKeep(_))));
        assert!(matches!(optimize_descriptor(&d, &t, Keep::Mass(0.0)), Err(SaliencyError::InvalidKeep(_))));
    }
}

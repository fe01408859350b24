use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::Deserialize;

use super::EvalError;
use crate::detect::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Multi,
    SingleBaseline,
    Icp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub affordance_id: u32,
    pub location: Vector3<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub scene_id: String,
    pub source: Source,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(scene_id: impl Into<String>, source: Source, predictions: Vec<Prediction>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        for p in &predictions {
            if !(p.location.iter().all(|v| v.is_finite()) && p.score.is_finite()) {
                return Err(EvalError::NonFinite);
            }
            let key = (p.affordance_id, p.location.map(f64::to_bits));
            if !seen.insert(key) {
                return Err(EvalError::DuplicatePrediction {
                    affordance_id: p.affordance_id,
                });
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            source,
            predictions,
        })
    }

    pub fn from_detections(scene_id: impl Into<String>, source: Source, detections: &[Detection]) -> Result<Self, EvalError> {
        let predictions = detections
            .iter()
            .map(|d| Prediction {
                affordance_id: d.affordance_id,
                location: d.test_point,
                score: d.score,
            })
            .collect();
        Self::new(scene_id, source, predictions)
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    affordance_id: u32,
    x: f64,
    y: f64,
    z: f64,
    score: Option<f64>,
}

/// Reads predictions from CSV with at least `affordance_id,x,y,z` and an
/// optional `score` column (missing scores read as 1). Lines starting with
/// `#` are skipped, so detection output can be read back directly.
pub fn read_predictions<R: Read>(input: R, scene_id: &str, source: Source) -> Result<PredictionSet, EvalError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut predictions = Vec::new();
    for row in reader.deserialize() {
        let r: Row = row?;
        predictions.push(Prediction {
            affordance_id: r.affordance_id,
            location: Vector3::new(r.x, r.y, r.z),
            score: r.score.unwrap_or(1.0),
        });
    }
    PredictionSet::new(scene_id, source, predictions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// one point per distinct score, thresholds descending
    pub points: Vec<CurvePoint>,
    pub truth_count: usize,
    pub auc: f64,
}

impl PrCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "precision", "recall", "true_positives", "predicted"])?;
        for p in &self.points {
            w.write_record([
                p.threshold.to_string(),
                p.precision.to_string(),
                p.recall.to_string(),
                p.true_positives.to_string(),
                p.predicted.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Order in which predictions claim truths: score descending, then location
/// and affordance id so the result does not depend on input order.
fn claim_order(pred: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&pred[a], &pred[b]);
        pb.score
            .total_cmp(&pa.score)
            .then(pa.location.x.total_cmp(&pb.location.x))
            .then(pa.location.y.total_cmp(&pb.location.y))
            .then(pa.location.z.total_cmp(&pb.location.z))
            .then(pa.affordance_id.cmp(&pb.affordance_id))
    });
    order
}

/// Precision/recall swept over every distinct prediction score. Going down
/// the claim order, each prediction takes the nearest unclaimed truth of the
/// same affordance within `match_radius`. AUC integrates precision over
/// recall with the trapezoid rule, starting from (recall 0, first precision).
pub fn precision_recall(pred: &PredictionSet, truth: &PredictionSet, match_radius: f64) -> Result<PrCurve, EvalError> {
    if !(match_radius > 0.0) {
        return Err(EvalError::InvalidRadius(match_radius));
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    if pred.scene_id != truth.scene_id {
        return Err(EvalError::SceneMismatch(pred.scene_id.clone(), truth.scene_id.clone()));
    }
    let mut by_affordance: BTreeMap<u32, Vec<(Vector3<f64>, bool)>> = BTreeMap::new();
    for t in &truth.predictions {
        by_affordance.entry(t.affordance_id).or_default().push((t.location, false));
    }
    let p = &pred.predictions;
    let order = claim_order(p);
    let r2 = match_radius * match_radius;
    let mut points = Vec::new();
    let mut tp = 0;
    for (n, &i) in order.iter().enumerate() {
        if let Some(cands) = by_affordance.get_mut(&p[i].affordance_id) {
            let mut best: Option<(f64, usize)> = None;
            for (j, (loc, used)) in cands.iter().enumerate() {
                let d = (loc - p[i].location).norm_squared();
                if !used && d <= r2 && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            if let Some((_, j)) = best {
                cands[j].1 = true;
                tp += 1;
            }
        }
        let last_of_score = order.get(n + 1).is_none_or(|&next| p[next].score != p[i].score);
        if last_of_score {
            points.push(CurvePoint {
                threshold: p[i].score,
                precision: tp as f64 / (n + 1) as f64,
                recall: tp as f64 / truth.len() as f64,
                true_positives: tp,
                predicted: n + 1,
            });
        }
    }
    let auc = area(&points);
    Ok(PrCurve {
        points,
        truth_count: truth.len(),
        auc,
    })
}

fn area(points: &[CurvePoint]) -> f64 {
    let Some(first) = points.first() else { return 0.0 };
    let mut prev = (0.0, first.precision);
    let mut auc = 0.0;
    for p in points {
        auc += (p.recall - prev.0) * (p.precision + prev.1) / 2.0;
        prev = (p.recall, p.precision);
    }
    auc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[(u32, f64, f64)]) -> PredictionSet {
        let predictions = items
            .iter()
            .map(|&(k, x, s)| Prediction {
                affordance_id: k,
                location: Vector3::new(x, 0.0, 0.0),
                score: s,
            })
            .collect();
        PredictionSet::new("s", Source::Multi, predictions).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let t = set(&[(0, 0.0, 0.9), (1, 1.0, 0.8), (0, 2.0, 0.5)]);
        let c = precision_recall(&t, &t, 0.01).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(c.points.last().unwrap().recall, 1.0);
        assert_eq!(c.auc, 1.0);
    }

    #[test]
    fn half_and_half() {
        let pred = set(&[(0, 1.0, 1.0), (1, 2.0, 1.0)]);
        let truth = set(&[(1, 2.0, 1.0), (2, 3.0, 1.0)]);
        let c = precision_recall(&pred, &truth, 0.01).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!((c.points[0].precision, c.points[0].recall), (0.5, 0.5));
    }

    #[test]
    fn one_truth_matches_once() {
        let pred = set(&[(0, 0.0, 0.9), (0, 0.001, 0.8)]);
        let truth = set(&[(0, 0.0, 1.0)]);
        let c = precision_recall(&pred, &truth, 0.01).unwrap();
        assert_eq!(c.points[1].true_positives, 1);
        assert_eq!(c.points[1].precision, 0.5);
    }

    #[test]
    fn errors() {
        let t = set(&[(0, 0.0, 1.0)]);
        assert!(matches!(precision_recall(&t, &set(&[]), 0.1), Err(EvalError::EmptyTruth)));
        assert!(matches!(precision_recall(&t, &t, 0.0), Err(EvalError::InvalidRadius(_))));
        let dup = vec![t.predictions[0]; 2];
        assert!(matches!(
            PredictionSet::new("s", Source::Multi, dup),
            Err(EvalError::DuplicatePrediction { .. })
        ));
    }

    #[test]
    fn reads_detection_csv() {
        let text = "# run\nscene,test_point_id,x,y,z,affordance_id,label,orientation_id,score\ns,4,0.1,0.2,0.3,7,Hang,2,0.950000\n";
        let p = read_predictions(text.as_bytes(), "s", Source::Multi).unwrap();
        assert_eq!(p.predictions[0].affordance_id, 7);
        assert_eq!(p.predictions[0].score, 0.95);
        let truth = "affordance_id,x,y,z\n7,0.1,0.2,0.3\n";
        assert_eq!(read_predictions(truth.as_bytes(), "s", Source::SingleBaseline).unwrap().predictions[0].score, 1.0);
    }
}

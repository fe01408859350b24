use std::io::{self, Write};

use nalgebra::Point3;

use super::Detection;
use crate::agglomerate::AgglomeratedDescriptor;
use crate::cloud::PointCloud;

pub const CSV_COLUMNS: [&str; 9] = [
    "scene",
    "test_point_id",
    "x",
    "y",
    "z",
    "affordance_id",
    "label",
    "orientation_id",
    "score",
];

/// Writes detections as CSV. Every line of `comment` is emitted first,
/// prefixed with `# `.
pub fn write_detections_csv<W: Write>(
    mut out: W,
    scene: &str,
    detections: &[Detection],
    descriptor: &AgglomeratedDescriptor,
    comment: &str,
) -> io::Result<()> {
    for line in comment.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for d in detections {
        let label = descriptor.affordance(d.affordance_id).map_or("", |a| a.label.as_str());
        w.write_record([
            scene.to_string(),
            d.test_point_id.to_string(),
            d.test_point.x.to_string(),
            d.test_point.y.to_string(),
            d.test_point.z.to_string(),
            d.affordance_id.to_string(),
            label.to_string(),
            d.orientation_id.to_string(),
            format!("{:.6}", d.score),
        ])?;
    }
    w.flush()
}

/// The stored query objects of the first `limit` detections, each moved by
/// its recovered pose, as one cloud.
pub fn overlay_cloud(detections: &[Detection], descriptor: &AgglomeratedDescriptor, limit: usize) -> PointCloud {
    let mut pts = Vec::new();
    for d in detections.iter().take(limit) {
        if let Some(a) = descriptor.affordance(d.affordance_id) {
            pts.extend(a.object.iter().map(|p| (d.object_pose * Point3::from(*p)).coords));
        }
    }
    PointCloud::new(pts)
        .expect("finite poses of finite points")
        .with_frame("overlay")
}

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use super::finish_cloud;
use crate::cloud::{CloudError, Offset, PointCloud};

fn header_err(line: usize, msg: impl Into<String>) -> CloudError {
    CloudError::MalformedHeader {
        at: Offset::Line(line),
        msg: msg.into(),
    }
}

/// Reads an ascii PCD (v0.7 style) file. Fields other than the position and
/// `normal_x/normal_y/normal_z` are skipped.
pub fn read_pcd<R: BufRead>(mut r: R) -> Result<PointCloud, CloudError> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut fields: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width = None;
    let mut height = 1usize;
    let mut declared_points = None;
    let mut frame_id = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(header_err(lineno + 1, "unexpected end of file before DATA"));
        }
        lineno += 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(comment) = text.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("frame_id") {
                frame_id = id.trim().to_string();
            }
            continue;
        }
        let mut tok = text.split_whitespace();
        let key = tok.next().unwrap_or_default();
        let rest: Vec<&str> = tok.collect();
        let parse_usize = |s: &str| -> Result<usize, CloudError> {
            s.parse()
                .map_err(|_| header_err(lineno, format!("`{s}` is not a count")))
        };
        match key {
            "VERSION" | "SIZE" | "TYPE" | "VIEWPOINT" => {}
            "FIELDS" => fields = Some(rest.iter().map(|s| s.to_string()).collect()),
            "COUNT" => counts = Some(rest.iter().map(|s| parse_usize(s)).collect::<Result<_, _>>()?),
            "WIDTH" => width = Some(parse_usize(rest.first().copied().unwrap_or(""))?),
            "HEIGHT" => height = parse_usize(rest.first().copied().unwrap_or(""))?,
            "POINTS" => declared_points = Some(parse_usize(rest.first().copied().unwrap_or(""))?),
            "DATA" => {
                match rest.first().copied() {
                    Some("ascii") => break,
                    Some(other) => {
                        return Err(CloudError::Unsupported {
                            at: Offset::Line(lineno),
                            msg: format!("PCD DATA {other}"),
                        })
                    }
                    None => return Err(header_err(lineno, "DATA without encoding")),
                }
            }
            other => return Err(header_err(lineno, format!("unknown keyword `{other}`"))),
        }
    }
    let fields = fields.ok_or_else(|| header_err(lineno, "missing FIELDS"))?;
    let counts = counts.unwrap_or_else(|| vec![1; fields.len()]);
    if counts.len() != fields.len() {
        return Err(header_err(lineno, "COUNT and FIELDS differ in length"));
    }
    let expected = match (declared_points, width) {
        (Some(p), _) => p,
        (None, Some(w)) => w * height,
        (None, None) => return Err(header_err(lineno, "missing POINTS and WIDTH")),
    };
    // column offset of each field
    let mut columns = Vec::with_capacity(fields.len());
    let mut col = 0;
    for c in &counts {
        columns.push(col);
        col += c;
    }
    let total_columns = col;
    let find = |name: &str| fields.iter().position(|f| f == name).map(|i| columns[i]);
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => [a, b, c],
        _ => return Err(header_err(lineno, "FIELDS lacks x, y, z")),
    };
    let normal_cols = match (find("normal_x"), find("normal_y"), find("normal_z")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut points = Vec::with_capacity(expected);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(expected));
    let mut values = Vec::with_capacity(total_columns);
    while points.len() < expected {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(CloudError::Truncated {
                at: Offset::Line(lineno + 1),
                expected,
                found: points.len(),
            });
        }
        lineno += 1;
        if line.trim().is_empty() {
            continue;
        }
        values.clear();
        for t in line.split_whitespace() {
            let v = t.parse::<f64>().map_err(|_| CloudError::MalformedPayload {
                at: Offset::Line(lineno),
                msg: format!("cannot parse `{t}`"),
            })?;
            values.push(v);
        }
        if values.len() != total_columns {
            return Err(CloudError::MalformedPayload {
                at: Offset::Line(lineno),
                msg: format!("expected {total_columns} values, found {}", values.len()),
            });
        }
        points.push(Vector3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]));
        if let (Some(ns), Some(nc)) = (normals.as_mut(), normal_cols) {
            ns.push(Vector3::new(values[nc[0]], values[nc[1]], values[nc[2]]));
        }
    }
    finish_cloud(points, normals, frame_id)
}

pub fn write_pcd<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<(), CloudError> {
    let has_normals = cloud.normals().is_some();
    let nfields = if has_normals { 6 } else { 3 };
    writeln!(w, "# .PCD v0.7 - Point Cloud Data file format")?;
    if !cloud.frame_id.is_empty() {
        writeln!(w, "# frame_id {}", cloud.frame_id)?;
    }
    writeln!(w, "VERSION 0.7")?;
    if has_normals {
        writeln!(w, "FIELDS x y z normal_x normal_y normal_z")?;
    } else {
        writeln!(w, "FIELDS x y z")?;
    }
    writeln!(w, "SIZE{}", " 8".repeat(nfields))?;
    writeln!(w, "TYPE{}", " F".repeat(nfields))?;
    writeln!(w, "COUNT{}", " 1".repeat(nfields))?;
    writeln!(w, "WIDTH {}", cloud.len())?;
    writeln!(w, "HEIGHT 1")?;
    writeln!(w, "VIEWPOINT 0 0 0 1 0 0 0")?;
    writeln!(w, "POINTS {}", cloud.len())?;
    writeln!(w, "DATA ascii")?;
    for (i, p) in cloud.points().iter().enumerate() {
        write!(w, "{} {} {}", p.x, p.y, p.z)?;
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            write!(w, " {} {} {}", n.x, n.y, n.z)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

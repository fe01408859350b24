//! PLY (ascii, binary little-endian) and PCD (ascii) readers and writers.
//!
//! The accepted header grammar is documented in `docs/formats.md`.

mod pcd;
mod ply;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{CloudError, Offset, PointCloud};

pub use pcd::{read_pcd, write_pcd};
pub use ply::{read_ply, write_ply, PlyEncoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    PcdAscii,
}

impl CloudFormat {
    /// Guesses the format from the file extension and, for PLY, the
    /// `format` line of the header.
    pub fn detect(path: &Path) -> Result<Self, CloudError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("pcd") => Ok(CloudFormat::PcdAscii),
            _ => {
                let mut head = [0u8; 256];
                let mut f = File::open(path)?;
                let n = f.read(&mut head)?;
                let text = String::from_utf8_lossy(&head[..n]);
                if !text.starts_with("ply") {
                    if text.contains("FIELDS") {
                        return Ok(CloudFormat::PcdAscii);
                    }
                    return Err(CloudError::MalformedHeader {
                        at: Offset::Line(1),
                        msg: "unrecognized file magic".into(),
                    });
                }
                if text.contains("format binary_little_endian") {
                    Ok(CloudFormat::PlyBinaryLe)
                } else {
                    Ok(CloudFormat::PlyAscii)
                }
            }
        }
    }
}

impl FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ply-ascii" => Ok(CloudFormat::PlyAscii),
            "ply-binary-le" | "ply" => Ok(CloudFormat::PlyBinaryLe),
            "pcd-ascii" | "pcd" => Ok(CloudFormat::PcdAscii),
            other => Err(format!("unknown cloud format `{other}`")),
        }
    }
}

/// Parses `path`, requiring the file to be in `format`.
pub fn parse_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud, CloudError> {
    let reader = BufReader::new(File::open(path)?);
    parse_from(reader, format)
}

/// Parses `path`, detecting its format.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    let format = CloudFormat::detect(path.as_ref())?;
    parse_cloud(path, format)
}

pub fn parse_from<R: BufRead>(reader: R, format: CloudFormat) -> Result<PointCloud, CloudError> {
    match format {
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => {
            let (cloud, encoding) = read_ply(reader)?;
            let expected = match format {
                CloudFormat::PlyAscii => PlyEncoding::Ascii,
                _ => PlyEncoding::BinaryLittleEndian,
            };
            if encoding != expected {
                return Err(CloudError::MalformedHeader {
                    at: Offset::Line(2),
                    msg: format!("expected {expected:?} encoding, file declares {encoding:?}"),
                });
            }
            Ok(cloud)
        }
        CloudFormat::PcdAscii => read_pcd(reader),
    }
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<(), CloudError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cloud_to(cloud, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_cloud_to<W: Write>(cloud: &PointCloud, w: &mut W, format: CloudFormat) -> Result<(), CloudError> {
    match format {
        CloudFormat::PlyAscii => write_ply(cloud, w, PlyEncoding::Ascii),
        CloudFormat::PlyBinaryLe => write_ply(cloud, w, PlyEncoding::BinaryLittleEndian),
        CloudFormat::PcdAscii => write_pcd(cloud, w),
    }
}

/// Loaded normals are renormalized when they are within this distance of
/// unit length (single precision files), and rejected otherwise.
const NORMAL_RENORMALIZE_TOLERANCE: f64 = 1e-3;

pub(crate) fn finish_cloud(
    points: Vec<nalgebra::Vector3<f64>>,
    normals: Option<Vec<nalgebra::Vector3<f64>>>,
    frame_id: String,
) -> Result<PointCloud, CloudError> {
    let normals = match normals {
        Some(ns) => {
            let mut out = Vec::with_capacity(ns.len());
            for (index, n) in ns.into_iter().enumerate() {
                let length = n.norm();
                if (length - 1.0).abs() <= super::NORMAL_TOLERANCE {
                    out.push(n);
                } else if (length - 1.0).abs() <= NORMAL_RENORMALIZE_TOLERANCE {
                    out.push(n / length);
                } else {
                    return Err(CloudError::BadNormal { index, length });
                }
            }
            Some(out)
        }
        None => None,
    };
    Ok(PointCloud::with_normals(points, normals)?.with_frame(frame_id))
}

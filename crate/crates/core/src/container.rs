//! Versioned binary container for descriptors.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      4 bytes  "AFFD"
//! version    u16
//! type tag   u8       1 = single affordance, 2 = agglomerated
//! reserved   u8
//! length     u64      payload bytes
//! checksum   u32      CRC-32 of the payload
//! payload    metadata string, then the body
//! ```
//!
//! Strings are a u32 byte count followed by UTF-8. The metadata string holds
//! the resolved configuration that produced the file.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use thiserror::Error;

use crate::agglomerate::{
    AffordanceInfo, AgglomeratedDescriptor, AgglomerationMode, Cell, CellEntry, StoredKeypoint,
};
use crate::tensor::{AffordanceDescriptor, AffordanceKeypoint};

pub const MAGIC: &[u8; 4] = b"AFFD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a descriptor file (bad magic)")]
    BadMagic,
    #[error("unsupported container version {found} (this build reads {supported})")]
    Version { found: u16, supported: u16 },
    #[error("unknown type tag {0}")]
    UnknownType(u8),
    #[error("expected a {expected} descriptor, found {found}")]
    WrongType {
        expected: &'static str,
        found: &'static str,
    },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorFile {
    Single(AffordanceDescriptor),
    Agglomerated(AgglomeratedDescriptor),
}

impl DescriptorFile {
    fn tag(&self) -> u8 {
        match self {
            DescriptorFile::Single(_) => 1,
            DescriptorFile::Agglomerated(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            DescriptorFile::Single(_) => "single",
            DescriptorFile::Agglomerated(_) => "agglomerated",
        }
    }

    pub fn into_single(self) -> Result<AffordanceDescriptor, ContainerError> {
        match self {
            DescriptorFile::Single(d) => Ok(d),
            other => Err(ContainerError::WrongType {
                expected: "single",
                found: other.kind(),
            }),
        }
    }

    pub fn into_agglomerated(self) -> Result<AgglomeratedDescriptor, ContainerError> {
        match self {
            DescriptorFile::Agglomerated(d) => Ok(d),
            other => Err(ContainerError::WrongType {
                expected: "agglomerated",
                found: other.kind(),
            }),
        }
    }
}

pub fn encode(file: &DescriptorFile, metadata: &str) -> Vec<u8> {
    let mut body = Vec::new();
    put_str(&mut body, metadata);
    match file {
        DescriptorFile::Single(d) => put_single(&mut body, d),
        DescriptorFile::Agglomerated(d) => put_agglomerated(&mut body, d),
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.write_u16::<LE>(VERSION).unwrap();
    out.write_u8(file.tag()).unwrap();
    out.write_u8(0).unwrap();
    out.write_u64::<LE>(body.len() as u64).unwrap();
    out.write_u32::<LE>(crc32fast::hash(&body)).unwrap();
    out.extend_from_slice(&body);
    out
}

/// Returns the descriptor and its metadata string.
pub fn decode(bytes: &[u8]) -> Result<(DescriptorFile, String), ContainerError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::Corrupt(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut h = Cursor::new(&bytes[4..HEADER_LEN]);
    let version = h.read_u16::<LE>()?;
    if version != VERSION {
        return Err(ContainerError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let tag = h.read_u8()?;
    if !matches!(tag, 1 | 2) {
        return Err(ContainerError::UnknownType(tag));
    }
    let _reserved = h.read_u8()?;
    let len = h.read_u64::<LE>()?;
    let crc = h.read_u32::<LE>()?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(ContainerError::Corrupt(format!(
            "header declares {len} payload bytes, found {}",
            payload.len()
        )));
    }
    if crc32fast::hash(payload) != crc {
        return Err(ContainerError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Cursor::new(payload);
    let parsed = (|| -> io::Result<(DescriptorFile, String)> {
        let metadata = get_str(&mut r)?;
        let file = match tag {
            1 => DescriptorFile::Single(get_single(&mut r)?),
            _ => DescriptorFile::Agglomerated(get_agglomerated(&mut r)?),
        };
        Ok((file, metadata))
    })();
    let out = parsed
        .map_err(|e| ContainerError::Corrupt(format!("at payload byte {}: {e}", r.position())))?;
    if (r.position() as usize) != payload.len() {
        return Err(ContainerError::Corrupt(format!(
            "{} trailing bytes",
            payload.len() - r.position() as usize
        )));
    }
    Ok(out)
}

pub fn save_descriptor(path: &Path, file: &DescriptorFile, metadata: &str) -> Result<(), ContainerError> {
    fs::write(path, encode(file, metadata))?;
    Ok(())
}

pub fn load_descriptor(path: &Path) -> Result<(DescriptorFile, String), ContainerError> {
    decode(&fs::read(path)?)
}

/// Human-readable dump, one keypoint or cell entry per line.
pub fn dump_text(file: &DescriptorFile) -> String {
    let mut s = String::new();
    match file {
        DescriptorFile::Single(d) => {
            let _ = writeln!(
                s,
                "single affordance={} label={} per_orientation={} keypoints={}",
                d.affordance_id,
                d.label,
                d.per_orientation,
                d.keypoints.len()
            );
            let c = d.centroid_offset;
            let _ = writeln!(s, "centroid_offset {} {} {}", c.x, c.y, c.z);
            for k in &d.keypoints {
                let (x, p) = (k.position, k.provenance);
                let _ = writeln!(
                    s,
                    "kp o={} x={} {} {} p={} {} {} w={}",
                    k.orientation_id, x.x, x.y, x.z, p.x, p.y, p.z, k.weight
                );
            }
        }
        DescriptorFile::Agglomerated(d) => {
            s.push_str(&manifest(d));
            for (j, c) in d.cells.iter().enumerate() {
                let m = c.centroid;
                let _ = writeln!(s, "cell {j} c={} {} {}", m.x, m.y, m.z);
                for e in &c.entries {
                    for k in &e.kept {
                        let (x, p) = (k.position, k.provenance);
                        let _ = writeln!(
                            s,
                            "  k={} o={} members={} x={} {} {} p={} {} {} w={}",
                            e.affordance_id, e.orientation_id, e.member_count, x.x, x.y, x.z, p.x, p.y, p.z, k.weight
                        );
                    }
                }
            }
        }
    }
    s
}

/// Lists the constituent affordances of an agglomerated descriptor.
pub fn manifest(d: &AgglomeratedDescriptor) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "agglomerated cell_size_m={} mode={} cells={} keypoints={}",
        d.cell_size,
        d.mode,
        d.cells.len(),
        d.keypoint_count()
    );
    for a in &d.affordances {
        let cells = d.cells.iter().filter(|c| c.has_affordance(a.id)).count();
        let _ = writeln!(s, "affordance {} {} cells={}", a.id, a.label, cells);
    }
    s
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn put_vec(out: &mut Vec<u8>, v: &Vector3<f64>) {
    for a in 0..3 {
        out.write_f64::<LE>(v[a]).unwrap();
    }
}

fn put_points(out: &mut Vec<u8>, pts: &[Vector3<f64>]) {
    out.write_u32::<LE>(pts.len() as u32).unwrap();
    for p in pts {
        put_vec(out, p);
    }
}

fn put_single(out: &mut Vec<u8>, d: &AffordanceDescriptor) {
    out.write_u32::<LE>(d.affordance_id).unwrap();
    out.write_u32::<LE>(d.per_orientation as u32).unwrap();
    put_str(out, &d.label);
    put_vec(out, &d.centroid_offset);
    put_points(out, &d.object);
    out.write_u32::<LE>(d.keypoints.len() as u32).unwrap();
    for k in &d.keypoints {
        put_vec(out, &k.position);
        put_vec(out, &k.provenance);
        out.write_f64::<LE>(k.weight).unwrap();
        out.write_u8(k.orientation_id).unwrap();
    }
}

fn put_agglomerated(out: &mut Vec<u8>, d: &AgglomeratedDescriptor) {
    out.write_f64::<LE>(d.cell_size).unwrap();
    out.write_u8(match d.mode {
        AgglomerationMode::Closest => 0,
        AgglomerationMode::All => 1,
    })
    .unwrap();
    out.write_u32::<LE>(d.affordances.len() as u32).unwrap();
    for a in &d.affordances {
        out.write_u32::<LE>(a.id).unwrap();
        put_str(out, &a.label);
        put_vec(out, &a.centroid_offset);
        out.write_u32::<LE>(a.per_orientation).unwrap();
        put_points(out, &a.object);
    }
    out.write_u32::<LE>(d.source_ids.len() as u32).unwrap();
    for id in &d.source_ids {
        out.write_u32::<LE>(*id).unwrap();
    }
    out.write_u32::<LE>(d.cells.len() as u32).unwrap();
    for c in &d.cells {
        put_vec(out, &c.centroid);
        out.write_u32::<LE>(c.entries.len() as u32).unwrap();
        for e in &c.entries {
            out.write_u32::<LE>(e.affordance_id).unwrap();
            out.write_u8(e.orientation_id).unwrap();
            out.write_u32::<LE>(e.member_count).unwrap();
            out.write_u32::<LE>(e.kept.len() as u32).unwrap();
            for k in &e.kept {
                put_vec(out, &k.position);
                put_vec(out, &k.provenance);
                out.write_f64::<LE>(k.weight).unwrap();
            }
        }
    }
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn get_str(r: &mut Cursor<&[u8]>) -> io::Result<String> {
    let n = get_count(r, 1)?;
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| invalid("string is not UTF-8"))
}

/// Reads a count and checks that `count * min_item_bytes` could still fit,
/// so corrupt counts fail before allocating.
fn get_count(r: &mut Cursor<&[u8]>, min_item_bytes: usize) -> io::Result<usize> {
    let n = r.read_u32::<LE>()? as usize;
    let left = r.get_ref().len() - r.position() as usize;
    if n.saturating_mul(min_item_bytes) > left {
        return Err(invalid(format!("count {n} exceeds remaining {left} bytes")));
    }
    Ok(n)
}

fn get_vec(r: &mut Cursor<&[u8]>) -> io::Result<Vector3<f64>> {
    Ok(Vector3::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?))
}

fn get_points(r: &mut Cursor<&[u8]>) -> io::Result<Vec<Vector3<f64>>> {
    let n = get_count(r, 24)?;
    (0..n).map(|_| get_vec(r)).collect()
}

fn get_orientation(r: &mut Cursor<&[u8]>) -> io::Result<u8> {
    let o = r.read_u8()?;
    if o >= crate::tensor::ORIENTATIONS {
        return Err(invalid(format!("orientation {o} out of range")));
    }
    Ok(o)
}

fn get_single(r: &mut Cursor<&[u8]>) -> io::Result<AffordanceDescriptor> {
    let affordance_id = r.read_u32::<LE>()?;
    let per_orientation = r.read_u32::<LE>()? as usize;
    let label = get_str(r)?;
    let centroid_offset = get_vec(r)?;
    let object = get_points(r)?;
    let n = get_count(r, 57)?;
    let mut keypoints = Vec::with_capacity(n);
    for _ in 0..n {
        let position = get_vec(r)?;
        let provenance = get_vec(r)?;
        let weight = r.read_f64::<LE>()?;
        let orientation_id = get_orientation(r)?;
        keypoints.push(AffordanceKeypoint {
            position,
            provenance,
            weight,
            affordance_id,
            orientation_id,
        });
    }
    Ok(AffordanceDescriptor {
        affordance_id,
        label,
        per_orientation,
        keypoints,
        centroid_offset,
        object,
    })
}

fn get_agglomerated(r: &mut Cursor<&[u8]>) -> io::Result<AgglomeratedDescriptor> {
    let cell_size = r.read_f64::<LE>()?;
    let mode = match r.read_u8()? {
        0 => AgglomerationMode::Closest,
        1 => AgglomerationMode::All,
        m => return Err(invalid(format!("unknown mode {m}"))),
    };
    let na = get_count(r, 40)?;
    let mut affordances = Vec::with_capacity(na);
    for _ in 0..na {
        let id = r.read_u32::<LE>()?;
        let label = get_str(r)?;
        let centroid_offset = get_vec(r)?;
        let per_orientation = r.read_u32::<LE>()?;
        let object = get_points(r)?;
        affordances.push(AffordanceInfo {
            id,
            label,
            centroid_offset,
            per_orientation,
            object,
        });
    }
    let ns = get_count(r, 4)?;
    let source_ids = (0..ns).map(|_| r.read_u32::<LE>()).collect::<io::Result<_>>()?;
    let nc = get_count(r, 28)?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let centroid = get_vec(r)?;
        let ne = get_count(r, 13)?;
        let mut entries = Vec::with_capacity(ne);
        for _ in 0..ne {
            let affordance_id = r.read_u32::<LE>()?;
            let orientation_id = get_orientation(r)?;
            let member_count = r.read_u32::<LE>()?;
            let nk = get_count(r, 56)?;
            let mut kept = Vec::with_capacity(nk);
            for _ in 0..nk {
                kept.push(StoredKeypoint {
                    position: get_vec(r)?,
                    provenance: get_vec(r)?,
                    weight: r.read_f64::<LE>()?,
                });
            }
            entries.push(CellEntry {
                affordance_id,
                orientation_id,
                kept,
                member_count,
            });
        }
        cells.push(Cell { centroid, entries });
    }
    Ok(AgglomeratedDescriptor {
        cell_size,
        mode,
        cells,
        affordances,
        source_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agglomerate::agglomerate;
    use crate::tensor::augment_descriptor;

    fn single(id: u32) -> AffordanceDescriptor {
        let kps = (0..6)
            .map(|i| AffordanceKeypoint {
                position: Vector3::new(i as f64 * 0.01, 0.02, (i % 2) as f64 * 0.01),
                provenance: Vector3::new(0.0, -0.01, -0.02),
                weight: 0.6,
                affordance_id: id,
                orientation_id: 0,
            })
            .collect();
        let mut d = augment_descriptor(kps, format!("Place-thing{id}")).unwrap();
        d.object = vec![Vector3::new(0.1, 0.2, 0.3)];
        d
    }

    fn agglomerated() -> AgglomeratedDescriptor {
        agglomerate(&[single(1), single(4)], 0.01, AgglomerationMode::Closest).unwrap()
    }

    #[test]
    fn round_trips() {
        for f in [DescriptorFile::Single(single(3)), DescriptorFile::Agglomerated(agglomerated())] {
            let bytes = encode(&f, "seed = 1\n");
            let (back, meta) = decode(&bytes).unwrap();
            assert_eq!(back, f);
            assert_eq!(meta, "seed = 1\n");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.affd");
        let f = DescriptorFile::Agglomerated(agglomerated());
        save_descriptor(&path, &f, "").unwrap();
        assert_eq!(load_descriptor(&path).unwrap().0, f);
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = encode(&DescriptorFile::Single(single(0)), "");
        for cut in [10, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(ContainerError::Corrupt(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = encode(&DescriptorFile::Single(single(0)), "");
        let last = bytes.len() - 5;
        bytes[last] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(ContainerError::Corrupt(_))));
    }

    #[test]
    fn version_bump_is_explicit() {
        let mut bytes = encode(&DescriptorFile::Single(single(0)), "");
        bytes[4] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(ContainerError::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn bad_magic_and_type() {
        assert!(matches!(decode(b"PLY\n...."), Err(ContainerError::BadMagic)));
        let f = DescriptorFile::Single(single(0));
        assert!(matches!(f.into_agglomerated(), Err(ContainerError::WrongType { .. })));
    }

    #[test]
    fn manifest_lists_affordances() {
        let m = manifest(&agglomerated());
        assert!(m.contains("affordance 1 Place-thing1"));
        assert!(m.contains("affordance 4 Place-thing4"));
        let dump = dump_text(&DescriptorFile::Single(single(2)));
        assert_eq!(dump.lines().filter(|l| l.starts_with("kp ")).count(), 48);
    }
}

use std::io::{BufRead, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::finish_cloud;
use crate::cloud::{CloudError, Offset, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> u64 {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read<R: std::io::Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    frame_id: String,
    /// lines consumed, including `end_header`
    lines: usize,
    bytes: u64,
}

fn header_err(line: usize, msg: impl Into<String>) -> CloudError {
    CloudError::MalformedHeader {
        at: Offset::Line(line),
        msg: msg.into(),
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header, CloudError> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut bytes = 0u64;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut frame_id = String::new();
    loop {
        line.clear();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(header_err(lineno + 1, "unexpected end of file before end_header"));
        }
        lineno += 1;
        bytes += n as u64;
        let text = line.trim_end_matches(['\n', '\r']);
        let mut tok = text.split_whitespace();
        let Some(keyword) = tok.next() else {
            continue;
        };
        if lineno == 1 {
            if keyword != "ply" {
                return Err(header_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                encoding = Some(match tok.next() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some("binary_big_endian") => {
                        return Err(CloudError::Unsupported {
                            at: Offset::Line(lineno),
                            msg: "big-endian PLY is not supported".into(),
                        })
                    }
                    other => return Err(header_err(lineno, format!("unknown format {other:?}"))),
                });
            }
            "comment" => {
                if tok.next() == Some("frame_id") {
                    frame_id = tok.collect::<Vec<_>>().join(" ");
                }
            }
            "obj_info" => {}
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| header_err(lineno, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| header_err(lineno, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(lineno, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| header_err(lineno, "property without type"))?;
                let unsupported = |t: &str| CloudError::Unsupported {
                    at: Offset::Line(lineno),
                    msg: format!("property type `{t}`"),
                };
                let prop = if ty == "list" {
                    let ct = tok.next().ok_or_else(|| header_err(lineno, "list without count type"))?;
                    let it = tok.next().ok_or_else(|| header_err(lineno, "list without item type"))?;
                    let name = tok.next().ok_or_else(|| header_err(lineno, "list without name"))?;
                    Property::List(
                        Scalar::parse(ct).ok_or_else(|| unsupported(ct))?,
                        Scalar::parse(it).ok_or_else(|| unsupported(it))?,
                        name.to_string(),
                    )
                } else {
                    let name = tok.next().ok_or_else(|| header_err(lineno, "property without name"))?;
                    Property::Scalar(Scalar::parse(ty).ok_or_else(|| unsupported(ty))?, name.to_string())
                };
                el.properties.push(prop);
            }
            "end_header" => break,
            other => return Err(header_err(lineno, format!("unknown keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_err(lineno, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        frame_id,
        lines: lineno,
        bytes,
    })
}

/// Column layout of the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    normal: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Option<VertexLayout> {
    let find = |n: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar(_, name) if name == n))
    };
    let xyz = [find("x")?, find("y")?, find("z")?];
    let normal = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    Some(VertexLayout { xyz, normal })
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<(PointCloud, PlyEncoding), CloudError> {
    let header = read_header(&mut r)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err(header.lines, "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_pos])
        .ok_or_else(|| header_err(header.lines, "vertex element lacks x, y, z properties"))?;

    let mut points = Vec::new();
    let mut normals = layout.normal.map(|_| Vec::new());
    let mut push = |values: &[f64]| {
        points.push(Vector3::new(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]));
        if let (Some(ns), Some(nc)) = (normals.as_mut(), layout.normal) {
            ns.push(Vector3::new(values[nc[0]], values[nc[1]], values[nc[2]]));
        }
    };

    match header.encoding {
        PlyEncoding::Ascii => {
            let mut lineno = header.lines;
            let mut line = String::new();
            for (ei, el) in header.elements.iter().enumerate().take(vertex_pos + 1) {
                for item in 0..el.count {
                    line.clear();
                    let truncated = |lineno| CloudError::Truncated {
                        at: Offset::Line(lineno),
                        expected: header.elements[vertex_pos].count,
                        found: if ei == vertex_pos { item } else { 0 },
                    };
                    loop {
                        line.clear();
                        if r.read_line(&mut line)? == 0 {
                            return Err(truncated(lineno + 1));
                        }
                        lineno += 1;
                        if !line.trim().is_empty() {
                            break;
                        }
                    }
                    let values = parse_ascii_item(&line, el, lineno)?;
                    if ei == vertex_pos {
                        push(&values);
                    }
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut offset = header.bytes;
            for (ei, el) in header.elements.iter().enumerate().take(vertex_pos + 1) {
                let mut values = Vec::with_capacity(el.properties.len());
                for item in 0..el.count {
                    values.clear();
                    for prop in &el.properties {
                        let res = match prop {
                            Property::Scalar(s, _) => s.read(&mut r).map(|v| {
                                offset += s.size();
                                v
                            }),
                            Property::List(ct, it, _) => (|| {
                                let n = ct.read(&mut r)?;
                                offset += ct.size();
                                for _ in 0..(n as u64) {
                                    it.read(&mut r)?;
                                    offset += it.size();
                                }
                                Ok(f64::NAN)
                            })(),
                        };
                        match res {
                            Ok(v) => values.push(v),
                            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                                return Err(CloudError::Truncated {
                                    at: Offset::Byte(offset),
                                    expected: header.elements[vertex_pos].count,
                                    found: if ei == vertex_pos { item } else { 0 },
                                })
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    if ei == vertex_pos {
                        push(&values);
                    }
                }
            }
        }
    }
    let cloud = finish_cloud(points, normals, header.frame_id)?;
    Ok((cloud, header.encoding))
}

fn parse_ascii_item(line: &str, el: &Element, lineno: usize) -> Result<Vec<f64>, CloudError> {
    let bad = |msg: String| CloudError::MalformedPayload {
        at: Offset::Line(lineno),
        msg,
    };
    let mut tok = line.split_whitespace();
    let mut next = |what: &str| -> Result<f64, CloudError> {
        let t = tok.next().ok_or_else(|| bad(format!("missing value for `{what}`")))?;
        t.parse::<f64>()
            .map_err(|_| bad(format!("cannot parse `{t}` for `{what}`")))
    };
    let mut values = Vec::with_capacity(el.properties.len());
    for prop in &el.properties {
        match prop {
            Property::Scalar(_, name) => values.push(next(name)?),
            Property::List(_, _, name) => {
                let n = next(name)?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(bad(format!("invalid list length {n}")));
                }
                for _ in 0..n as usize {
                    next(name)?;
                }
                values.push(f64::NAN);
            }
        }
    }
    Ok(values)
}

pub fn write_ply<W: Write>(cloud: &PointCloud, w: &mut W, encoding: PlyEncoding) -> Result<(), CloudError> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    if !cloud.frame_id.is_empty() {
        writeln!(w, "comment frame_id {}", cloud.frame_id)?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z"] {
        writeln!(w, "property double {name}")?;
    }
    if cloud.normals().is_some() {
        for name in ["nx", "ny", "nz"] {
            writeln!(w, "property double {name}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        let n = cloud.normals().map(|ns| ns[i]);
        match encoding {
            PlyEncoding::Ascii => {
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(n) = n {
                    write!(w, " {} {} {}", n.x, n.y, n.z)?;
                }
                writeln!(w)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p.iter().chain(n.iter().flat_map(|n| n.iter())) {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn ascii_three_vertices_in_order() {
        let (c, enc) = read_ply(TRIANGLE.as_bytes()).unwrap();
        assert_eq!(enc, PlyEncoding::Ascii);
        assert_eq!(
            c.points(),
            &[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)]
        );
        assert!(c.normals().is_none());
    }

    #[test]
    fn ascii_truncated_payload() {
        let text = "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
        match read_ply(text.as_bytes()) {
            Err(CloudError::Truncated { at, expected, found }) => {
                assert_eq!((expected, found), (5, 3));
                assert_eq!(at, Offset::Line(11));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_truncated_reports_byte_offset() {
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0); 4]).unwrap();
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf, PlyEncoding::BinaryLittleEndian).unwrap();
        buf.truncate(buf.len() - 12);
        match read_ply(&buf[..]) {
            Err(CloudError::Truncated { at: Offset::Byte(_), expected: 4, found: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_with_face_list_before_vertices() {
        let mut buf = Vec::new();
        buf.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement face 1\nproperty list uchar int vertex_indices\nelement vertex 1\nproperty uchar flag\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        );
        buf.push(2);
        buf.extend_from_slice(&7i32.to_le_bytes());
        buf.extend_from_slice(&8i32.to_le_bytes());
        buf.push(1);
        for v in [0.5f32, 1.5, -2.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let (c, _) = read_ply(&buf[..]).unwrap();
        assert_eq!(c.points(), &[Vector3::new(0.5, 1.5, -2.0)]);
    }

    #[test]
    fn header_errors() {
        let big = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(
            read_ply(big.as_bytes()),
            Err(CloudError::Unsupported { at: Offset::Line(2), .. })
        ));
        let no_z = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nend_header\n";
        assert!(matches!(read_ply(no_z.as_bytes()), Err(CloudError::MalformedHeader { .. })));
        let odd_type = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float128 x\nend_header\n";
        assert!(matches!(
            read_ply(odd_type.as_bytes()),
            Err(CloudError::Unsupported { at: Offset::Line(4), .. })
        ));
        let bad_magic = "plx\nformat ascii 1.0\n";
        assert!(matches!(read_ply(bad_magic.as_bytes()), Err(CloudError::MalformedHeader { .. })));
        let eof = "ply\nformat ascii 1.0\nelement vertex 1\n";
        assert!(matches!(read_ply(eof.as_bytes()), Err(CloudError::MalformedHeader { .. })));
    }

    #[test]
    fn bad_ascii_value_reports_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 zero 0\n";
        assert!(matches!(
            read_ply(text.as_bytes()),
            Err(CloudError::MalformedPayload { at: Offset::Line(9), .. })
        ));
    }

    #[test]
    fn empty_cloud_declares_zero_vertices() {
        let mut buf = Vec::new();
        write_ply(&PointCloud::empty(), &mut buf, PlyEncoding::Ascii).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("element vertex 0"));
        assert!(read_ply(&buf[..]).unwrap().0.is_empty());
    }

    #[test]
    fn normals_are_written() {
        let c = PointCloud::with_normals(vec![Vector3::zeros()], Some(vec![Vector3::z()])).unwrap();
        let mut buf = Vec::new();
        write_ply(&c, &mut buf, PlyEncoding::Ascii).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for f in ["nx", "ny", "nz"] {
            assert!(text.contains(&format!("property double {f}")));
        }
    }
}

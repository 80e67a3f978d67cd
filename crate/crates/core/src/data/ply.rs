//! PLY vertex positions: ascii and binary little-endian input, any scalar
//! property types; output as double-precision properties.

use std::fs;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::parse(format!("unsupported PLY property type {name:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().expect("4")) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().expect("4")) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().expect("4")) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8")),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    /// Scalar properties in declaration order; `None` marks a list property.
    props: Vec<(String, Option<Scalar>)>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| Error::parse("PLY header has no end_header"))?;
    let mut body_offset = end + 10;
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::parse("PLY header is not text"))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::parse("missing 'ply' magic line"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::parse(format!("unsupported PLY format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::parse(format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("property before any element"))?
                .props
                .push((name.to_string(), None)),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse("property before any element"))?
                    .props
                    .push((name.to_string(), Some(ty)));
            }
            _ => return Err(Error::parse(format!("unsupported PLY header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse("PLY header has no format line"))?;
    Ok(Header { format, elements, body_offset })
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse("PLY has no vertex element"))?;
    let vertex = &header.elements[vi];
    if let Some((name, _)) = vertex.props.iter().find(|(_, t)| t.is_none()) {
        return Err(Error::parse(format!("unsupported list property {name:?} in vertex element")));
    }
    let column = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| Error::parse(format!("vertex element has no {axis} property")))
    };
    let cols = [column("x")?, column("y")?, column("z")?];
    let body = &bytes[header.body_offset..];

    let points = match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::parse("ascii PLY body is not text"))?;
            let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
            for e in &header.elements[..vi] {
                for _ in 0..e.count {
                    lines.next().ok_or_else(|| Error::parse(format!("truncated {} element", e.name)))?;
                }
            }
            let mut points = Vec::with_capacity(vertex.count);
            for i in 0..vertex.count {
                let line = lines.next().ok_or_else(|| Error::parse(format!("PLY ends at vertex {i}")))?;
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != vertex.props.len() {
                    return Err(Error::parse(format!(
                        "vertex {i}: expected {} values, found {}",
                        vertex.props.len(),
                        vals.len()
                    )));
                }
                let mut p = [0.0; 3];
                for (slot, &c) in p.iter_mut().zip(&cols) {
                    *slot = vals[c].parse().map_err(|_| Error::parse(format!("vertex {i}: bad value {:?}", vals[c])))?;
                }
                points.push(p);
            }
            points
        }
        PlyFormat::BinaryLittleEndian => {
            let mut offset = 0;
            for e in &header.elements[..vi] {
                let mut stride = 0;
                for (name, ty) in &e.props {
                    let ty = ty.ok_or_else(|| {
                        Error::parse(format!("unsupported list property {name:?} in element {} before vertices", e.name))
                    })?;
                    stride += ty.size();
                }
                offset += stride * e.count;
            }
            let sizes: Vec<usize> = vertex.props.iter().map(|(_, t)| t.expect("scalar").size()).collect();
            let starts: Vec<usize> = sizes.iter().scan(0, |acc, s| Some(std::mem::replace(acc, *acc + s))).collect();
            let stride: usize = sizes.iter().sum();
            let needed = offset + stride * vertex.count;
            if body.len() < needed {
                return Err(Error::parse(format!("binary PLY body truncated: {} of {needed} bytes", body.len())));
            }
            (0..vertex.count)
                .map(|i| {
                    let rec = &body[offset + i * stride..offset + (i + 1) * stride];
                    cols.map(|c| vertex.props[c].1.expect("scalar").read_le(&rec[starts[c]..]))
                })
                .collect()
        }
    };
    if points.is_empty() {
        return Err(Error::contract("PLY file has no vertices"));
    }
    PointCloud::new(points).map_err(|_| Error::parse("PLY contains non-finite coordinates"))
}

pub fn format_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {name} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for p in cloud.points() {
        match format {
            PlyFormat::Ascii => out.extend(format!("{} {} {}\n", p[0], p[1], p[2]).bytes()),
            PlyFormat::BinaryLittleEndian => p.iter().for_each(|v| out.extend(v.to_le_bytes())),
        }
    }
    out
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    parse_ply(&fs::read(path)?)
}

pub fn save_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    fs::write(path, format_ply(cloud, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_ascii() {
        let text = "ply\nformat ascii 1.0\ncomment one point\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.5 -1 2\n";
        assert_eq!(parse_ply(text.as_bytes()).unwrap().points(), &[[0.5, -1.0, 2.0]]);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let c = PointCloud::new(vec![[0.1, 1.0 / 3.0, -7e-310], [1e300, -0.0, 42.0]]).unwrap();
        let back = parse_ply(&format_ply(&c, PlyFormat::BinaryLittleEndian)).unwrap();
        for (a, b) in c.flat().iter().zip(back.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(parse_ply(&format_ply(&c, PlyFormat::Ascii)).unwrap(), c);
    }

    #[test]
    fn skips_other_properties_and_faces() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty uchar red\nproperty float z\nproperty float y\nproperty float x\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for (r, z, y, x) in [(7u8, 3.0f32, 2.0f32, 1.0f32), (8, 6.0, 5.0, 4.0)] {
            bytes.push(r);
            for v in [z, y, x] {
                bytes.extend(v.to_le_bytes());
            }
        }
        bytes.extend([3, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        let c = parse_ply(&bytes).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn unsupported_features_are_named() {
        let big = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(parse_ply(big.as_bytes()).unwrap_err().to_string().contains("binary_big_endian"));
        let list = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty list uchar int idx\nend_header\n0 0 0 1 1\n";
        assert!(parse_ply(list.as_bytes()).unwrap_err().to_string().contains("list property"));
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n";
        assert!(parse_ply(no_z.as_bytes()).unwrap_err().to_string().contains("z property"));
    }
}

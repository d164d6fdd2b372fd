//! Minimal PLY reader: vertex positions only.
//!
//! Supports `ascii` and `binary_little_endian` bodies. Every element and
//! property is parsed (so the reader stays in sync with the stream) but only
//! `vertex.x/y/z` are kept.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

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
    fn parse(s: &str) -> Option<Scalar> {
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

pub fn read_ply_vertices(path: &Path) -> Result<Vec<Vec3>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply_vertices(&bytes).map_err(|msg| Error::parse(path, msg))
}

/// Parses the vertex positions out of an in-memory PLY file.
pub fn parse_ply_vertices(bytes: &[u8]) -> std::result::Result<Vec<Vec3>, String> {
    let (format, elements, body) = parse_header(bytes)?;
    match format {
        Format::Ascii => read_ascii(&elements, body),
        Format::BinaryLe => read_binary(&elements, body),
    }
}

fn parse_header(bytes: &[u8]) -> std::result::Result<(Format, Vec<Element>, &[u8]), String> {
    let mut pos = 0;
    let mut next_line = || -> Option<&str> {
        if pos >= bytes.len() {
            return None;
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[pos..end]).ok()?;
        pos = (end + 1).min(bytes.len());
        Some(line.trim_end_matches('\r'))
    };

    if next_line().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line().ok_or("header ended without 'end_header'")?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => return Err(format!("unsupported PLY format '{other}'")),
                    None => return Err("format line without a format".into()),
                });
            }
            Some("element") => {
                let name = tok.next().ok_or("element without a name")?.to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| format!("element '{name}' has no valid count"))?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or("property before any element")?;
                let first = tok.next().ok_or("empty property line")?;
                let prop = if first == "list" {
                    let count = tok.next().and_then(Scalar::parse).ok_or("bad list count type")?;
                    let item = tok.next().and_then(Scalar::parse).ok_or("bad list item type")?;
                    Property::List { count, item }
                } else {
                    let ty = Scalar::parse(first).ok_or_else(|| format!("unknown type '{first}'"))?;
                    let name = tok.next().ok_or("property without a name")?.to_string();
                    Property::Scalar { name, ty }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(format!("unexpected header keyword '{other}'")),
        }
    }
    let format = format.ok_or("missing format line")?;
    Ok((format, elements, &bytes[pos..]))
}

fn xyz_slots(el: &Element) -> std::result::Result<[usize; 3], String> {
    let find = |axis: &str| {
        el.props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
            .ok_or_else(|| format!("vertex element lacks property '{axis}'"))
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

fn read_ascii(elements: &[Element], body: &[u8]) -> std::result::Result<Vec<Vec3>, String> {
    let text = std::str::from_utf8(body).map_err(|_| "ASCII body is not valid UTF-8")?;
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| -> std::result::Result<f64, String> {
        let t = tokens
            .next()
            .ok_or_else(|| format!("unexpected end of data reading {what}"))?;
        t.parse::<f64>().map_err(|_| format!("invalid number '{t}' in {what}"))
    };
    let mut out = None;
    for el in elements {
        let slots = if el.name == "vertex" {
            Some(xyz_slots(el)?)
        } else {
            None
        };
        let mut verts = Vec::with_capacity(if slots.is_some() { el.count } else { 0 });
        for _ in 0..el.count {
            let mut v = [0.0; 3];
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar { .. } => {
                        let x = next(&el.name)?;
                        if let Some(s) = slots {
                            if let Some(axis) = s.iter().position(|&k| k == pi) {
                                v[axis] = x;
                            }
                        }
                    }
                    Property::List { .. } => {
                        let n = next(&el.name)?;
                        for _ in 0..n as usize {
                            next(&el.name)?;
                        }
                    }
                }
            }
            if slots.is_some() {
                verts.push(Vec3::from(v));
            }
        }
        if slots.is_some() {
            out = Some(verts);
        }
    }
    out.ok_or_else(|| "no vertex element".to_string())
}

fn read_binary(elements: &[Element], body: &[u8]) -> std::result::Result<Vec<Vec3>, String> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> std::result::Result<&[u8], String> {
        if pos + n > body.len() {
            return Err(format!("unexpected end of data reading {what}"));
        }
        let s = &body[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut out = None;
    for el in elements {
        let slots = if el.name == "vertex" {
            Some(xyz_slots(el)?)
        } else {
            None
        };
        let mut verts = Vec::with_capacity(if slots.is_some() { el.count } else { 0 });
        for _ in 0..el.count {
            let mut v = [0.0; 3];
            for (pi, p) in el.props.iter().enumerate() {
                match *p {
                    Property::Scalar { ty, .. } => {
                        let x = ty.read_le(take(ty.size(), &el.name)?);
                        if let Some(s) = slots {
                            if let Some(axis) = s.iter().position(|&k| k == pi) {
                                v[axis] = x;
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let n = count.read_le(take(count.size(), &el.name)?);
                        take(n as usize * item.size(), &el.name)?;
                    }
                }
            }
            if slots.is_some() {
                verts.push(Vec3::from(v));
            }
        }
        if slots.is_some() {
            out = Some(verts);
        }
    }
    out.ok_or_else(|| "no vertex element".to_string())
}

/// Writes vertices as an ASCII PLY (used for fixtures and synthetic models).
pub fn write_ply_ascii(points: &[Vec3]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    s
}

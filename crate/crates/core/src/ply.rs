//! Minimal PLY reader (ascii, binary little-endian) and binary writer.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementDecl {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub elements: Vec<ElementDecl>,
    /// Byte offset of the first body byte.
    pub body_offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementData {
    pub name: String,
    pub count: usize,
    pub columns: Vec<(String, Column)>,
}

impl ElementData {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find_map(|(n, c)| match c {
            Column::Scalar(v) if n == name => Some(v.as_slice()),
            _ => None,
        })
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.columns.iter().find_map(|(n, c)| match c {
            Column::List(v) if n == name => Some(v.as_slice()),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    pub format: PlyFormat,
    pub elements: Vec<ElementData>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&ElementData> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// `x`, `y`, `z` of the `vertex` element.
    pub fn vertex_positions(&self) -> Result<Vec<[f64; 3]>> {
        let v = self
            .element("vertex")
            .ok_or_else(|| Error::UnsupportedElement("file has no vertex element".into()))?;
        let axis = |n: &str| {
            v.scalar(n)
                .ok_or_else(|| Error::UnsupportedElement(format!("vertex element lacks scalar property `{n}`")))
        };
        let (x, y, z) = (axis("x")?, axis("y")?, axis("z")?);
        Ok((0..v.count).map(|i| [x[i], y[i], z[i]]).collect())
    }
}

fn header_err(line: usize, message: impl Into<String>) -> Error {
    Error::MalformedHeader {
        line,
        message: message.into(),
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<PlyHeader> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<ElementDecl> = Vec::new();
    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(header_err(line_no + 1, "header is not terminated by end_header"));
        };
        line_no += 1;
        let raw = &bytes[pos..pos + nl];
        pos += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_no, "header is not valid text"))?
            .trim_end_matches('\r')
            .trim();
        let mut tok = line.split_whitespace();
        let Some(keyword) = tok.next() else {
            continue;
        };
        if line_no == 1 {
            if line != "ply" {
                return Err(header_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                let f = tok.next().ok_or_else(|| header_err(line_no, "format line has no format"))?;
                format = Some(match f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::UnsupportedFormat(other.to_string())),
                });
                match tok.next() {
                    Some("1.0") => {}
                    v => return Err(header_err(line_no, format!("unsupported version {v:?}"))),
                }
            }
            "comment" | "obj_info" => {}
            "element" => {
                let (Some(name), Some(count)) = (tok.next(), tok.next()) else {
                    return Err(header_err(line_no, "element needs a name and a count"));
                };
                let count = count
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count `{count}`")))?;
                elements.push(ElementDecl {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let parts: Vec<&str> = tok.collect();
                let ty = |s: &str| ScalarType::parse(s).ok_or_else(|| header_err(line_no, format!("unknown type `{s}`")));
                let prop = match parts.as_slice() {
                    ["list", c, i, name] => Property {
                        name: name.to_string(),
                        kind: PropertyKind::List {
                            count: ty(c)?,
                            item: ty(i)?,
                        },
                    },
                    [t, name] => Property {
                        name: name.to_string(),
                        kind: PropertyKind::Scalar(ty(t)?),
                    },
                    _ => return Err(header_err(line_no, "malformed property line")),
                };
                el.properties.push(prop);
            }
            "end_header" => break,
            other => return Err(header_err(line_no, format!("unknown keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| header_err(line_no, "no format line"))?;
    Ok(PlyHeader {
        format,
        elements,
        body_offset: pos,
    })
}

pub fn parse(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_header(bytes)?;
    let elements = match header.format {
        PlyFormat::BinaryLittleEndian => read_binary(&header, bytes)?,
        PlyFormat::Ascii => read_ascii(&header, bytes)?,
    };
    Ok(PlyData {
        format: header.format,
        elements,
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<PlyData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::file(path))?;
    parse(&bytes)
}

fn empty_columns(decl: &ElementDecl) -> Vec<(String, Column)> {
    decl.properties
        .iter()
        .map(|p| {
            let col = match p.kind {
                PropertyKind::Scalar(_) => Column::Scalar(Vec::with_capacity(decl.count.min(1 << 24))),
                PropertyKind::List { .. } => Column::List(Vec::with_capacity(decl.count.min(1 << 24))),
            };
            (p.name.clone(), col)
        })
        .collect()
}

fn read_binary(header: &PlyHeader, bytes: &[u8]) -> Result<Vec<ElementData>> {
    let mut pos = header.body_offset;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::TruncatedFile {
                offset: bytes.len() as u64,
                context: format!("PLY body ends inside {what}"),
            });
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut out = Vec::with_capacity(header.elements.len());
    for decl in &header.elements {
        let mut columns = empty_columns(decl);
        for row in 0..decl.count {
            for (prop, (_, col)) in decl.properties.iter().zip(columns.iter_mut()) {
                let what = || format!("{} {row} property {}", decl.name, prop.name);
                match (prop.kind, col) {
                    (PropertyKind::Scalar(t), Column::Scalar(v)) => v.push(t.read_le(take(t.size(), &what())?)),
                    (PropertyKind::List { count, item }, Column::List(v)) => {
                        let n = count.read_le(take(count.size(), &what())?);
                        if !(n >= 0.0) {
                            return Err(Error::Parse {
                                line: 0,
                                message: format!("negative list length in {}", what()),
                            });
                        }
                        let n = n as usize;
                        let raw = take(n * item.size(), &what())?;
                        v.push(raw.chunks_exact(item.size()).map(|b| item.read_le(b)).collect());
                    }
                    _ => unreachable!(),
                }
            }
        }
        out.push(ElementData {
            name: decl.name.clone(),
            count: decl.count,
            columns,
        });
    }
    Ok(out)
}

fn read_ascii(header: &PlyHeader, bytes: &[u8]) -> Result<Vec<ElementData>> {
    let body = std::str::from_utf8(&bytes[header.body_offset..]).map_err(|e| Error::Parse {
        line: 0,
        message: format!("ascii PLY body is not valid UTF-8: {e}"),
    })?;
    let header_lines = bytes[..header.body_offset].iter().filter(|&&b| b == b'\n').count();
    let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut out = Vec::with_capacity(header.elements.len());
    for decl in &header.elements {
        let mut columns = empty_columns(decl);
        for row in 0..decl.count {
            let Some((idx, line)) = lines.next() else {
                return Err(Error::TruncatedFile {
                    offset: bytes.len() as u64,
                    context: format!("expected {} {} rows, found {row}", decl.count, decl.name),
                });
            };
            let line_no = header_lines + idx + 1;
            let bad = |m: String| Error::Parse { line: line_no, message: m };
            let mut tok = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let t = tok.next().ok_or_else(|| bad(format!("missing value for {what}")))?;
                t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}` for {what}")))
            };
            for (prop, (_, col)) in decl.properties.iter().zip(columns.iter_mut()) {
                match col {
                    Column::Scalar(v) => v.push(next(&prop.name)?),
                    Column::List(v) => {
                        let n = next(&prop.name)?;
                        if !(n >= 0.0) || n.fract() != 0.0 {
                            return Err(bad(format!("bad list length {n}")));
                        }
                        v.push((0..n as usize).map(|_| next(&prop.name)).collect::<Result<_>>()?);
                    }
                }
            }
            if tok.next().is_some() {
                return Err(bad(format!("extra values on {} row", decl.name)));
            }
        }
        out.push(ElementData {
            name: decl.name.clone(),
            count: decl.count,
            columns,
        });
    }
    Ok(out)
}

/// Binary little-endian PLY with float vertices and, when `faces` is given,
/// a `face` element of `uchar`-counted `int` index lists.
pub fn encode_binary(vertices: &[[f32; 3]], faces: Option<&[[u32; 3]]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + vertices.len() * 12 + faces.map_or(0, |f| f.len() * 13));
    let _ = write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        vertices.len()
    );
    if let Some(f) = faces {
        let _ = write!(out, "element face {}\nproperty list uchar int vertex_indices\n", f.len());
    }
    out.extend_from_slice(b"end_header\n");
    for v in vertices {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in faces.unwrap_or(&[]) {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

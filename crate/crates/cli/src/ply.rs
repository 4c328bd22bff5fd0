//! Colored point clouds as PLY (ASCII or binary little-endian).
//!
//! The vertex element must carry `x`, `y`, `z` as `float` or `double` and
//! `red`, `green`, `blue` as `uchar`. Other vertex properties are skipped.
//! Elements after the vertex element are ignored.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use omniloc::PointCloud;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn size(self) -> usize {
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

struct Header {
    format: Format,
    vertex_count: usize,
    properties: Vec<(String, Scalar)>,
    /// Byte offset of the first body byte.
    body_start: usize,
    /// Number of header lines, so body line numbers can continue from it.
    header_lines: usize,
}

const REQUIRED: [&str; 6] = ["x", "y", "z", "red", "green", "blue"];

fn malformed(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("PLY line {line}: {msg}"))
}

fn parse_header(bytes: &[u8]) -> Result<Header, CliError> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    // Which element the property lines currently belong to.
    let mut in_vertex = false;
    let mut seen_other_element = false;
    loop {
        let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(malformed(line_no + 1, "header ends before 'end_header'"));
        };
        let raw = &bytes[pos..pos + len];
        pos += len + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| malformed(line_no, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(malformed(1, "missing 'ply' magic"));
            }
            continue;
        }
        match words.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match words.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLittleEndian,
                    Some(other) => return Err(malformed(line_no, format!("unsupported format '{other}'"))),
                    None => return Err(malformed(line_no, "format line without a format")),
                });
            }
            Some("element") => {
                let [_, name, count] = words[..] else {
                    return Err(malformed(line_no, "expected 'element <name> <count>'"));
                };
                let count: usize = count
                    .parse()
                    .map_err(|_| malformed(line_no, format!("bad element count '{count}'")))?;
                if name == "vertex" {
                    if seen_other_element {
                        return Err(malformed(line_no, "the vertex element must come first"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    seen_other_element = true;
                    in_vertex = false;
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                if words.get(1) == Some(&"list") {
                    return Err(malformed(line_no, "list properties on vertices are not supported"));
                }
                let [_, ty, name] = words[..] else {
                    return Err(malformed(line_no, "expected 'property <type> <name>'"));
                };
                let scalar = Scalar::parse(ty).ok_or_else(|| malformed(line_no, format!("unknown type '{ty}'")))?;
                properties.push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            Some(other) => return Err(malformed(line_no, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| malformed(line_no, "header has no format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| malformed(line_no, "header declares no vertex element"))?;
    for name in REQUIRED {
        let Some((_, ty)) = properties.iter().find(|(n, _)| n == name) else {
            return Err(malformed(line_no, format!("vertex property '{name}' is missing")));
        };
        let ok = match name {
            "x" | "y" | "z" => matches!(ty, Scalar::F32 | Scalar::F64),
            _ => *ty == Scalar::U8,
        };
        if !ok {
            let want = if name.len() == 1 { "float or double" } else { "uchar" };
            return Err(malformed(line_no, format!("vertex property '{name}' must be {want}")));
        }
    }
    Ok(Header {
        format,
        vertex_count,
        properties,
        body_start: pos,
        header_lines: line_no,
    })
}

/// Parses a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, CliError> {
    let header = parse_header(bytes)?;
    let slot = |name: &str| header.properties.iter().position(|(n, _)| n == name).unwrap();
    let slots: [usize; 6] = REQUIRED.map(slot);
    let mut positions = Vec::with_capacity(header.vertex_count);
    let mut colors = Vec::with_capacity(header.vertex_count);
    let mut values = vec![0.0; header.properties.len()];
    let body = &bytes[header.body_start..];

    match header.format {
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| malformed(header.header_lines + 1, "body is not valid UTF-8"))?;
            let mut lines = text.lines().enumerate().map(|(i, l)| (header.header_lines + 1 + i, l.trim()));
            let mut last_line = header.header_lines;
            for v in 0..header.vertex_count {
                let (line_no, line) = loop {
                    match lines.next() {
                        Some((_, "")) => continue,
                        Some(found) => break found,
                        None => {
                            return Err(malformed(
                                last_line + 1,
                                format!("file ends after {v} of {} vertices", header.vertex_count),
                            ))
                        }
                    }
                };
                last_line = line_no;
                let mut words = line.split_whitespace();
                for (k, value) in values.iter_mut().enumerate() {
                    let word = words
                        .next()
                        .ok_or_else(|| malformed(line_no, format!("vertex has {k} of {} values", header.properties.len())))?;
                    *value = word
                        .parse()
                        .map_err(|_| malformed(line_no, format!("cannot parse '{word}' as a number")))?;
                }
                push_vertex(&values, &slots, &mut positions, &mut colors).map_err(|m| malformed(line_no, m))?;
            }
        }
        Format::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let needed = stride * header.vertex_count;
            if body.len() < needed {
                return Err(malformed(
                    header.header_lines + 1,
                    format!(
                        "binary body holds {} of {} vertices ({} of {needed} bytes)",
                        body.len() / stride.max(1),
                        header.vertex_count,
                        body.len()
                    ),
                ));
            }
            for (v, record) in body[..needed].chunks_exact(stride).enumerate() {
                let mut offset = 0;
                for (value, (_, ty)) in values.iter_mut().zip(&header.properties) {
                    *value = ty.read_le(&record[offset..]);
                    offset += ty.size();
                }
                push_vertex(&values, &slots, &mut positions, &mut colors)
                    .map_err(|m| CliError::Input(format!("PLY vertex {v}: {m}")))?;
            }
        }
    }
    PointCloud::new(positions, colors).map_err(|e| CliError::Input(format!("PLY: {e}")))
}

fn push_vertex(
    values: &[f64],
    slots: &[usize; 6],
    positions: &mut Vec<Vector3<f64>>,
    colors: &mut Vec<Vector3<f64>>,
) -> Result<(), String> {
    let p = Vector3::new(values[slots[0]], values[slots[1]], values[slots[2]]);
    if !p.iter().all(|v| v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    let mut c = Vector3::zeros();
    for k in 0..3 {
        let raw = values[slots[3 + k]];
        if !(0.0..=255.0).contains(&raw) || raw.fract() != 0.0 {
            return Err(format!("color value {raw} is not a uchar"));
        }
        c[k] = raw / 255.0;
    }
    positions.push(p);
    colors.push(c);
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PointCloud, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_ply(&bytes).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Channel value in `[0, 1]` to the nearest byte.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a cloud as binary little-endian PLY with `float` coordinates.
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    let mut out = Vec::with_capacity(header.len() + cloud.len() * 15);
    out.extend_from_slice(header.as_bytes());
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend(c.iter().map(|v| quantize(*v)));
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    file.write_all(&encode_ply(cloud))
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

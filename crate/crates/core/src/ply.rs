//! Reader and writer for the binary little-endian splat PLY written by 3DGS
//! trainers.
//!
//! Vertex properties: `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity
//! scale_0..2 rot_0..3`, all `float`. `f_rest` is channel-major. Files with
//! fewer `f_rest` properties (SH degree < 3) are zero-padded on read.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::splat::{logit, sigmoid, GaussianField, GaussianSplat, ShFeatures, SH_COEFFS};
use crate::transform;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed PLY: {0}")]
    Format(String),
    #[error("PLY is missing vertex property `{0}`")]
    MissingProperty(String),
    #[error("splat {index}: property `{property}` is not finite")]
    NonFinite { index: usize, property: String },
    #[error("refusing to write an empty field")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ScalarType {
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

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
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

struct VertexLayout {
    count: usize,
    stride: usize,
    /// name -> (byte offset, type)
    props: HashMap<String, (usize, ScalarType)>,
    order: Vec<String>,
}

impl VertexLayout {
    fn get(&self, name: &str) -> Result<(usize, ScalarType), PlyError> {
        self.props.get(name).copied().ok_or_else(|| PlyError::MissingProperty(name.to_string()))
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<VertexLayout, PlyError> {
    let mut line = String::new();
    let next = |r: &mut R, line: &mut String| -> Result<(), PlyError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(PlyError::Format("unexpected end of header".into()));
        }
        Ok(())
    };
    next(r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(PlyError::Format("missing `ply` magic".into()));
    }
    let mut layout: Option<VertexLayout> = None;
    let mut in_vertex = false;
    let mut seen_vertex_before_other = true;
    loop {
        next(r, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(PlyError::Format(format!("unsupported format `{fmt}`")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize =
                    count.parse().map_err(|_| PlyError::Format(format!("bad element count `{count}`")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    if layout.is_some() {
                        return Err(PlyError::Format("duplicate vertex element".into()));
                    }
                    layout = Some(VertexLayout { count, stride: 0, props: HashMap::new(), order: Vec::new() });
                } else if layout.is_none() && count > 0 {
                    seen_vertex_before_other = false;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(PlyError::Format("list properties are not supported on vertices".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| PlyError::Format(format!("unknown property type `{ty}`")))?;
                    let l = layout.as_mut().unwrap();
                    l.props.insert(name.to_string(), (l.stride, ty));
                    l.order.push(name.to_string());
                    l.stride += ty.size();
                }
            }
            ["end_header"] => break,
            other => return Err(PlyError::Format(format!("unexpected header line `{}`", other.join(" ")))),
        }
    }
    if !seen_vertex_before_other {
        return Err(PlyError::Format("vertex element must come first".into()));
    }
    layout.ok_or_else(|| PlyError::Format("no vertex element".into()))
}

/// Reads a field from any PLY byte stream.
pub fn read_ply<R: Read>(reader: R) -> Result<GaussianField, PlyError> {
    let mut r = BufReader::new(reader);
    let layout = read_header(&mut r)?;

    let pos = ["x", "y", "z"].map(|n| layout.get(n));
    let dc = ["f_dc_0", "f_dc_1", "f_dc_2"].map(|n| layout.get(n));
    let opacity = layout.get("opacity")?;
    let scale = ["scale_0", "scale_1", "scale_2"].map(|n| layout.get(n));
    let rot = ["rot_0", "rot_1", "rot_2", "rot_3"].map(|n| layout.get(n));
    let pos = pos.into_iter().collect::<Result<Vec<_>, _>>()?;
    let dc = dc.into_iter().collect::<Result<Vec<_>, _>>()?;
    let scale = scale.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rot = rot.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rest_count = layout.order.iter().filter(|n| n.starts_with("f_rest_")).count();
    let per_channel = rest_count / 3;
    if rest_count % 3 != 0 || ![0, 3, 8, 15].contains(&per_channel) {
        return Err(PlyError::Format(format!("{rest_count} f_rest properties do not match any SH degree")));
    }
    let rest = (0..rest_count).map(|i| layout.get(&format!("f_rest_{i}"))).collect::<Result<Vec<_>, _>>()?;

    let mut buf = vec![0u8; layout.stride];
    let mut splats = Vec::with_capacity(layout.count);
    for index in 0..layout.count {
        r.read_exact(&mut buf)
            .map_err(|e| PlyError::Format(format!("vertex data truncated at splat {index}: {e}")))?;
        let get = |(off, ty): (usize, ScalarType), name: &str| -> Result<f64, PlyError> {
            let v = ty.read(&buf[off..off + ty.size()]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(PlyError::NonFinite { index, property: name.to_string() })
            }
        };
        let position = Vector3::new(get(pos[0], "x")?, get(pos[1], "y")?, get(pos[2], "z")?);
        let mut features = ShFeatures::zeros();
        for c in 0..3 {
            features.0[c][0] = get(dc[c], "f_dc")?;
            for j in 0..per_channel {
                features.0[c][1 + j] = get(rest[c * per_channel + j], "f_rest")?;
            }
        }
        let opacity = sigmoid(get(opacity, "opacity")?);
        let scale = Vector3::new(
            get(scale[0], "scale_0")?.exp(),
            get(scale[1], "scale_1")?.exp(),
            get(scale[2], "scale_2")?.exp(),
        );
        let q = Quaternion::new(get(rot[0], "rot_0")?, get(rot[1], "rot_1")?, get(rot[2], "rot_2")?, get(rot[3], "rot_3")?);
        let n = q.norm();
        if n == 0.0 {
            return Err(PlyError::NonFinite { index, property: "rot".into() });
        }
        // Quaternions that are already unit at f32 precision are kept verbatim so
        // that load/save reproduces the input bytes.
        let rotation = if (n - 1.0).abs() <= f32::EPSILON as f64 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        splats.push(GaussianSplat { position, rotation, scale, opacity, features });
    }
    Ok(GaussianField::new(splats))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianField, PlyError> {
    read_ply(File::open(path)?)
}

fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).to_vec();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * (SH_COEFFS - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Writes `field`. With `bake_transform` the field's `local_to_global` is
/// applied first; otherwise the splats are written in their stored space.
pub fn write_ply<W: Write>(field: &GaussianField, writer: W, bake_transform: bool) -> Result<(), PlyError> {
    if field.is_empty() {
        return Err(PlyError::Empty);
    }
    let baked;
    let field = if bake_transform && !field.local_to_global.is_identity() {
        baked = transform::bake(field);
        &baked
    } else {
        field
    };
    let mut w = BufWriter::new(writer);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", field.len())?;
    for name in property_names() {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;

    let mut row: Vec<f32> = Vec::with_capacity(62);
    for s in &field.splats {
        row.clear();
        row.extend(s.position.iter().map(|&v| v as f32));
        row.extend([0.0f32; 3]);
        for c in 0..3 {
            row.push(s.features.0[c][0] as f32);
        }
        for c in 0..3 {
            row.extend(s.features.0[c][1..].iter().map(|&v| v as f32));
        }
        row.push(logit(s.opacity) as f32);
        row.extend(s.scale.iter().map(|&v| v.ln() as f32));
        let q = s.rotation.quaternion();
        row.extend([q.w as f32, q.i as f32, q.j as f32, q.k as f32]);
        for v in &row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_ply(field: &GaussianField, path: impl AsRef<Path>, bake_transform: bool) -> Result<(), PlyError> {
    write_ply(field, File::create(path)?, bake_transform)
}

/// In-memory encoding, as written by [`write_ply`].
pub fn to_ply_bytes(field: &GaussianField, bake_transform: bool) -> Result<Vec<u8>, PlyError> {
    let mut out = Vec::new();
    write_ply(field, &mut out, bake_transform)?;
    Ok(out)
}

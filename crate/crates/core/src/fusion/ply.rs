use std::path::Path;

use super::{CloudPoint, SemanticPointCloud};
use crate::io::{read_bytes, write_bytes};
use crate::semantics::UNLABELED;
use crate::{Error, Result};

/// Binary little-endian PLY with x, y, z, red, green, blue, class_id and
/// uncertainty per vertex.
pub fn ply_bytes(cloud: &SemanticPointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uchar class_id\nproperty float uncertainty\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * 20);
    for p in &cloud.points {
        for c in p.position {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.extend_from_slice(&p.color);
        out.push(p.class_id);
        out.extend_from_slice(&(p.uncertainty as f32).to_le_bytes());
    }
    out
}

pub fn write_ply(path: &Path, cloud: &SemanticPointCloud) -> Result<()> {
    write_bytes(path, &ply_bytes(cloud))
}

pub fn read_ply(path: &Path) -> Result<SemanticPointCloud> {
    parse_ply(path, &read_bytes(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

/// Reads vertex positions and, when present, colors, class ids and
/// uncertainty from ASCII or binary PLY. Other elements must precede
/// nothing but are skipped when they follow the vertices.
pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<SemanticPointCloud> {
    let bad = |d: String| Error::format(path, d);
    let end = find_header_end(bytes).ok_or_else(|| bad("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("non-ascii header".into()))?;
    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("comment"));
    if lines.next() != Some("ply") {
        return Err(bad("not a PLY file".into()));
    }
    let mut encoding = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut seen_other_first = false;
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", enc, _] => {
                encoding = Some(match *enc {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    other => return Err(bad(format!("unknown format {other}"))),
                })
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?);
                } else if count.is_none() {
                    seen_other_first = true;
                }
            }
            ["property", "list", ..] if in_vertex => return Err(bad("list properties on vertices are unsupported".into())),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    if seen_other_first {
        return Err(bad("elements before `vertex` are unsupported".into()));
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line".into()))?;
    let n = count.ok_or_else(|| bad("missing vertex element".into()))?;
    let col = |name: &str| props.iter().position(|(p, _)| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(bad("vertex element lacks x, y, z".into()));
    };
    let (ir, ig, ib) = (col("red"), col("green"), col("blue"));
    let ic = col("class_id").or_else(|| col("label"));
    let iu = col("uncertainty");

    let body = &bytes[end..];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    match encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| bad("non-ascii body".into()))?;
            let mut tokens = text.split_whitespace();
            for r in 0..n {
                let row = (0..props.len())
                    .map(|_| {
                        tokens
                            .next()
                            .ok_or_else(|| bad(format!("vertex {r}: truncated")))?
                            .parse::<f64>()
                            .map_err(|e| bad(format!("vertex {r}: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
        }
        Encoding::Little | Encoding::Big => {
            let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
            if body.len() < stride * n {
                return Err(bad(format!("expected {} vertex bytes, found {}", stride * n, body.len())));
            }
            let little = encoding == Encoding::Little;
            for r in 0..n {
                let mut off = r * stride;
                let mut row = Vec::with_capacity(props.len());
                for (_, s) in &props {
                    row.push(s.decode(&body[off..], little));
                    off += s.size();
                }
                rows.push(row);
            }
        }
    }
    let byte = |v: f64| v.clamp(0.0, 255.0) as u8;
    let points = rows
        .iter()
        .map(|r| CloudPoint {
            position: [r[ix], r[iy], r[iz]],
            color: match (ir, ig, ib) {
                (Some(a), Some(b), Some(c)) => [byte(r[a]), byte(r[b]), byte(r[c])],
                _ => [0; 3],
            },
            class_id: ic.map_or(UNLABELED, |i| byte(r[i])),
            uncertainty: iu.map_or(0.0, |i| r[i]),
        })
        .collect();
    Ok(SemanticPointCloud { points })
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let at = bytes.windows(needle.len()).position(|w| w == needle)?;
    let mut end = at + needle.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    Some(end)
}

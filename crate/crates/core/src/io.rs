//! On-disk formats. Binary layouts are little-endian with 4-byte ASCII
//! magics; text formats are whitespace-separated decimal floats printed with
//! enough precision to round-trip exactly.
//!
//! | magic | content |
//! |-------|---------|
//! | `EPPC` | point cloud: u32 count, then count xyz f32 triplets |
//! | `EPDM` | depth map: u32 width, u32 height, then w*h f32 row-major |
//! | `EPIX` | retrieval index: u32 version, u32 dim, u32 count, then (u64 id, dim f32) records |
//! | `EPDS` | descriptor cache: u32 dim, u64 count, then count*dim f32 |
//! | `EPMW` | MLP weights: u32 version, u32 layer count, per layer u32 rows, u32 cols, u32 activation tag, rows*cols f32 weights row-major, rows f32 biases |
//!
//! The point-cloud loader also accepts plain text, one `x y z` triple per
//! whitespace-separated run. Pose files hold one 3x4 `[R|t]` matrix per line,
//! row-major; intrinsics files hold 9 floats row-major.

use crate::feature::{Activation, Descriptors, Layer, MlpWeights};
use crate::geometry::{CameraModel, PointCloud, Pose};
use crate::matcher::Correspondence;
use crate::raster::DepthMap;
use crate::submap::SubmapIndex;
use nalgebra::{Matrix3, Point3, Vector3};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const INDEX_VERSION: u32 = 1;
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("{format} version {found} is not supported (expected {expected})")]
    UnsupportedVersion { format: &'static str, expected: u32, found: u32 },
    #[error("file ends before the declared payload")]
    Truncated,
    #[error("unexpected bytes after the declared payload")]
    TrailingData,
    #[error("layer {layer} expects input {expected}, previous layer outputs {got}")]
    DimensionChainBroken { layer: usize, expected: usize, got: usize },
    #[error("malformed content: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn map_eof(e: io::Error) -> FormatError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FormatError::Truncated
    } else {
        FormatError::Io(e)
    }
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, FormatError> {
    Ok(u32::from_le_bytes(read_bytes(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, FormatError> {
    Ok(u64::from_le_bytes(read_bytes(r)?))
}

fn expect_magic(r: &mut impl Read, expected: [u8; 4]) -> Result<(), FormatError> {
    let found: [u8; 4] = read_bytes(r)?;
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    Ok(())
}

/// Reads exactly `count` f32 values, in bounded chunks so a corrupt header
/// cannot trigger a huge allocation before the truncation is noticed.
fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>, FormatError> {
    const CHUNK: usize = 1 << 16;
    let mut out = Vec::new();
    let mut remaining = count;
    let mut buf = vec![0u8; CHUNK.min(count.max(1)) * 4];
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let bytes = &mut buf[..n * 4];
        r.read_exact(bytes).map_err(map_eof)?;
        out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        remaining -= n;
    }
    Ok(out)
}

fn write_f32s(w: &mut impl Write, values: impl Iterator<Item = f32>) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(4096);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 4096 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn ensure_eof(r: &mut impl Read) -> Result<(), FormatError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(FormatError::TrailingData),
        Err(e) => Err(FormatError::Io(e)),
    }
}

fn u32_len(len: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(len).map_err(|_| FormatError::Malformed(format!("{what} count {len} exceeds u32")))
}

// ---- point clouds (EPPC + text) ----

pub fn write_point_cloud(w: &mut impl Write, cloud: &PointCloud) -> Result<(), FormatError> {
    w.write_all(b"EPPC")?;
    w.write_all(&u32_len(cloud.len(), "point")?.to_le_bytes())?;
    write_f32s(w, cloud.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]))
}

pub fn read_point_cloud(r: &mut impl Read) -> Result<PointCloud, FormatError> {
    expect_magic(r, *b"EPPC")?;
    let count = read_u32(r)? as usize;
    let values = read_f32s(r, count * 3)?;
    ensure_eof(r)?;
    let points = values
        .chunks_exact(3)
        .map(|c| Point3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    PointCloud::new(points).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn parse_point_cloud_text(text: &str) -> Result<PointCloud, FormatError> {
    let mut values = Vec::new();
    for tok in text.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| FormatError::Malformed(format!("not a number: {tok:?}")))?;
        values.push(v);
    }
    if values.len() % 3 != 0 {
        return Err(FormatError::Malformed(format!(
            "expected x y z triples, got {} values",
            values.len()
        )));
    }
    let points = values.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
    PointCloud::new(points).map_err(|e| FormatError::Malformed(e.to_string()))
}

/// Loads either the binary `EPPC` layout or whitespace `x y z` text,
/// dispatching on the magic bytes.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"EPPC") {
        return read_point_cloud(&mut bytes.as_slice());
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) => parse_point_cloud_text(text),
        Err(_) => {
            let mut found = [0u8; 4];
            for (dst, src) in found.iter_mut().zip(bytes.iter()) {
                *dst = *src;
            }
            Err(FormatError::BadMagic { expected: *b"EPPC", found })
        }
    }
}

pub fn save_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_point_cloud(&mut buf, cloud)?;
    fs::write(path, buf)?;
    Ok(())
}

// ---- depth maps (EPDM) ----

pub fn write_depth_map(w: &mut impl Write, map: &DepthMap) -> Result<(), FormatError> {
    w.write_all(b"EPDM")?;
    w.write_all(&u32_len(map.width(), "width")?.to_le_bytes())?;
    w.write_all(&u32_len(map.height(), "height")?.to_le_bytes())?;
    write_f32s(w, map.values().iter().map(|v| *v as f32))
}

pub fn read_depth_map(r: &mut impl Read) -> Result<DepthMap, FormatError> {
    expect_magic(r, *b"EPDM")?;
    let width = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let values = read_f32s(r, width * height)?;
    ensure_eof(r)?;
    DepthMap::from_values(width, height, values.iter().map(|v| *v as f64).collect())
        .map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn save_depth_map(path: impl AsRef<Path>, map: &DepthMap) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_depth_map(&mut buf, map)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_depth_map(path: impl AsRef<Path>) -> Result<DepthMap, FormatError> {
    read_depth_map(&mut fs::File::open(path).map(io::BufReader::new)?)
}

// ---- retrieval index (EPIX) ----

/// Serializes entries only; [`crate::submap::IndexMetadata`] is in-memory
/// provenance and is reset to defaults on load.
pub fn write_index(w: &mut impl Write, index: &SubmapIndex) -> Result<(), FormatError> {
    w.write_all(b"EPIX")?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    w.write_all(&u32_len(index.dim(), "dimension")?.to_le_bytes())?;
    w.write_all(&u32_len(index.len(), "entry")?.to_le_bytes())?;
    for entry in &index.entries {
        w.write_all(&entry.id.to_le_bytes())?;
        write_f32s(w, entry.descriptor.iter().copied())?;
    }
    Ok(())
}

pub fn read_index(r: &mut impl Read) -> Result<SubmapIndex, FormatError> {
    expect_magic(r, *b"EPIX")?;
    let version = read_u32(r)?;
    if version != INDEX_VERSION {
        return Err(FormatError::UnsupportedVersion {
            format: "index",
            expected: INDEX_VERSION,
            found: version,
        });
    }
    let dim = read_u32(r)? as usize;
    let count = read_u32(r)? as usize;
    let mut index = SubmapIndex::new(dim);
    for _ in 0..count {
        let id = read_u64(r)?;
        let descriptor = read_f32s(r, dim)?;
        index.push(id, descriptor).map_err(|e| FormatError::Malformed(e.to_string()))?;
    }
    ensure_eof(r)?;
    Ok(index)
}

pub fn save_index(path: impl AsRef<Path>, index: &SubmapIndex) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_index(&mut buf, index)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<SubmapIndex, FormatError> {
    read_index(&mut fs::File::open(path).map(io::BufReader::new)?)
}

// ---- descriptor caches (EPDS) ----

pub fn write_descriptors(w: &mut impl Write, descs: &Descriptors) -> Result<(), FormatError> {
    w.write_all(b"EPDS")?;
    w.write_all(&u32_len(descs.dim(), "dimension")?.to_le_bytes())?;
    w.write_all(&(descs.len() as u64).to_le_bytes())?;
    write_f32s(w, descs.flat().iter().copied())
}

pub fn read_descriptors(r: &mut impl Read) -> Result<Descriptors, FormatError> {
    expect_magic(r, *b"EPDS")?;
    let dim = read_u32(r)? as usize;
    let count = read_u64(r)?;
    let count: usize =
        count.try_into().map_err(|_| FormatError::Malformed(format!("count {count} too large")))?;
    let data = read_f32s(r, dim.checked_mul(count).ok_or(FormatError::Truncated)?)?;
    ensure_eof(r)?;
    Descriptors::from_flat(dim.max(1), data).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn save_descriptors(path: impl AsRef<Path>, descs: &Descriptors) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_descriptors(&mut buf, descs)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Descriptors, FormatError> {
    read_descriptors(&mut fs::File::open(path).map(io::BufReader::new)?)
}

// ---- MLP weights (EPMW) ----

pub fn write_mlp_weights(w: &mut impl Write, mlp: &MlpWeights) -> Result<(), FormatError> {
    w.write_all(b"EPMW")?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&u32_len(mlp.layers().len(), "layer")?.to_le_bytes())?;
    for layer in mlp.layers() {
        w.write_all(&u32_len(layer.rows, "rows")?.to_le_bytes())?;
        w.write_all(&u32_len(layer.cols, "cols")?.to_le_bytes())?;
        w.write_all(&layer.activation.tag().to_le_bytes())?;
        write_f32s(w, layer.weights.iter().copied())?;
        write_f32s(w, layer.bias.iter().copied())?;
    }
    Ok(())
}

pub fn read_mlp_weights(r: &mut impl Read) -> Result<MlpWeights, FormatError> {
    expect_magic(r, *b"EPMW")?;
    let version = read_u32(r)?;
    if version != WEIGHTS_VERSION {
        return Err(FormatError::UnsupportedVersion {
            format: "weights",
            expected: WEIGHTS_VERSION,
            found: version,
        });
    }
    let layer_count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let activation = Activation::from_tag(read_u32(r)?)
            .map_err(|e| FormatError::Malformed(e.to_string()))?;
        let weights = read_f32s(r, rows.checked_mul(cols).ok_or(FormatError::Truncated)?)?;
        let bias = read_f32s(r, rows)?;
        layers.push(
            Layer::new(rows, cols, weights, bias, activation)
                .map_err(|e| FormatError::Malformed(e.to_string()))?,
        );
    }
    ensure_eof(r)?;
    MlpWeights::new(layers).map_err(|e| match e {
        crate::feature::FeatureError::DimensionChainBroken { layer, expected, got } => {
            FormatError::DimensionChainBroken { layer, expected, got }
        }
        other => FormatError::Malformed(other.to_string()),
    })
}

pub fn save_mlp_weights(path: impl AsRef<Path>, mlp: &MlpWeights) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_mlp_weights(&mut buf, mlp)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_mlp_weights(path: impl AsRef<Path>) -> Result<MlpWeights, FormatError> {
    read_mlp_weights(&mut fs::File::open(path).map(io::BufReader::new)?)
}

// ---- text poses and intrinsics ----

/// One pose per line: the 3x4 `[R|t]` matrix row-major, so
/// `r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3`.
pub fn format_pose_line(pose: &Pose) -> String {
    let r = pose.rotation();
    let t = pose.translation();
    format!(
        "{} {} {} {} {} {} {} {} {} {} {} {}",
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t.x,
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t.y,
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.z
    )
}

pub fn parse_pose_line(line: &str) -> Result<Pose, FormatError> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| FormatError::Malformed(format!("not a number: {tok:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != 12 {
        return Err(FormatError::Malformed(format!(
            "pose line needs 12 values, got {}",
            values.len()
        )));
    }
    let rotation = Matrix3::new(
        values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
        values[10],
    );
    let translation = Vector3::new(values[3], values[7], values[11]);
    Pose::new(rotation, translation).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn save_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<(), FormatError> {
    let mut text = String::new();
    for pose in poses {
        text.push_str(&format_pose_line(pose));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>, FormatError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_pose_line)
        .collect()
}

/// One correspondence per line:
/// `point_index x y z u v weight_u weight_v score`, decimal text so values
/// survive a round-trip bit for bit.
pub fn format_correspondence_line(c: &Correspondence) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        c.point_index, c.world.x, c.world.y, c.world.z, c.pixel.x, c.pixel.y, c.weight.x,
        c.weight.y, c.score
    )
}

pub fn parse_correspondence_line(line: &str) -> Result<Correspondence, FormatError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 9 {
        return Err(FormatError::Malformed(format!(
            "correspondence line needs 9 values, got {}",
            tokens.len()
        )));
    }
    let point_index: usize = tokens[0]
        .parse()
        .map_err(|_| FormatError::Malformed(format!("not an index: {:?}", tokens[0])))?;
    let mut values = [0.0f64; 8];
    for (v, tok) in values.iter_mut().zip(&tokens[1..]) {
        *v = tok
            .parse()
            .map_err(|_| FormatError::Malformed(format!("not a number: {tok:?}")))?;
    }
    Ok(Correspondence {
        point_index,
        world: Point3::new(values[0], values[1], values[2]),
        pixel: nalgebra::Vector2::new(values[3], values[4]),
        weight: nalgebra::Vector2::new(values[5], values[6]),
        score: values[7],
    })
}

pub fn save_correspondences(
    path: impl AsRef<Path>,
    corrs: &[Correspondence],
) -> Result<(), FormatError> {
    let mut text = String::new();
    for c in corrs {
        text.push_str(&format_correspondence_line(c));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence>, FormatError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_correspondence_line)
        .collect()
}

/// 9 whitespace-separated floats, row-major.
pub fn save_intrinsics_matrix(
    path: impl AsRef<Path>,
    k: &Matrix3<f64>,
) -> Result<(), FormatError> {
    let text = format!(
        "{} {} {}\n{} {} {}\n{} {} {}\n",
        k[(0, 0)],
        k[(0, 1)],
        k[(0, 2)],
        k[(1, 0)],
        k[(1, 1)],
        k[(1, 2)],
        k[(2, 0)],
        k[(2, 1)],
        k[(2, 2)]
    );
    fs::write(path, text)?;
    Ok(())
}

pub fn load_intrinsics_matrix(path: impl AsRef<Path>) -> Result<Matrix3<f64>, FormatError> {
    let text = fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| FormatError::Malformed(format!("not a number: {tok:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != 9 {
        return Err(FormatError::Malformed(format!(
            "intrinsics need 9 values, got {}",
            values.len()
        )));
    }
    Ok(Matrix3::from_row_slice(&values))
}

/// Builds a camera from an intrinsics file plus explicit image bounds.
pub fn load_camera(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
) -> Result<CameraModel, FormatError> {
    let k = load_intrinsics_matrix(path)?;
    CameraModel::new(k, width, height).map_err(|e| FormatError::Malformed(e.to_string()))
}

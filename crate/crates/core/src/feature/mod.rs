//! Patch grid bookkeeping, positional encoding, descriptor storage, and the
//! learned-weight plumbing (MLP forward pass, pairwise scorers).
//!
//! Images are divided into square patches of side `g`; patch classes are
//! numbered row-major from 1, with class 0 reserved for "not in the image".
//! Continuous coordinates inside a patch are remapped affinely to `[-1, 1]`
//! per axis before positional encoding.

pub mod mlp;
pub mod oracle;

pub use mlp::{Activation, Layer, MlpWeights, NegL1Scorer, PairwiseScorer, PatchClassifier};

use nalgebra::Vector2;
use thiserror::Error;

/// Frequency levels used by [`positional_encoding`] unless a caller overrides.
pub const DEFAULT_PE_LEVELS: usize = 6;

/// Local point/patch/pixel descriptor width.
pub const LOCAL_DESCRIPTOR_DIM: usize = 128;

/// Global (whole image / whole submap) descriptor width.
pub const GLOBAL_DESCRIPTOR_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("pixel ({0}, {1}) lies outside the image frame")]
    OutOfFrame(f64, f64),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("patch size {g} must divide image size {width}x{height}")]
    GridMismatch { width: u32, height: u32, g: u32 },
    #[error("weights contain a non-finite value")]
    NonFiniteWeights,
    #[error("MLP must have at least one layer")]
    EmptyMlp,
    #[error("layer {layer} expects input {expected}, previous layer outputs {got}")]
    DimensionChainBroken { layer: usize, expected: usize, got: usize },
    #[error("unknown activation tag {0}")]
    UnknownActivation(u32),
}

/// Division of a `width x height` image into square patches of side `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGrid {
    width: u32,
    height: u32,
    g: u32,
}

impl PatchGrid {
    pub fn new(width: u32, height: u32, g: u32) -> Result<Self, FeatureError> {
        if g == 0 || width == 0 || height == 0 || width % g != 0 || height % g != 0 {
            return Err(FeatureError::GridMismatch { width, height, g });
        }
        Ok(Self { width, height, g })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn g(&self) -> u32 {
        self.g
    }

    pub fn patches_x(&self) -> u32 {
        self.width / self.g
    }

    pub fn patches_y(&self) -> u32 {
        self.height / self.g
    }

    pub fn num_patches(&self) -> u32 {
        self.patches_x() * self.patches_y()
    }

    /// Patch classes plus the reserved class 0.
    pub fn num_classes(&self) -> u32 {
        self.num_patches() + 1
    }

    /// Pixels inside one patch.
    pub fn pixels_per_patch(&self) -> u32 {
        self.g * self.g
    }

    fn in_frame(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.x < self.width as f64
            && pixel.y >= 0.0
            && pixel.y < self.height as f64
    }

    /// Class of the patch containing a continuous pixel coordinate: row-major
    /// starting at 1, or 0 when the pixel is outside the frame.
    pub fn patch_of(&self, pixel: &Vector2<f64>) -> u32 {
        if !self.in_frame(pixel) {
            return 0;
        }
        let px = (pixel.x / self.g as f64).floor() as u32;
        let py = (pixel.y / self.g as f64).floor() as u32;
        1 + py * self.patches_x() + px
    }

    /// Top-left pixel corner of a patch class (class must be in `1..=num_patches`).
    pub fn patch_origin(&self, class: u32) -> (u32, u32) {
        assert!(class >= 1 && class <= self.num_patches(), "class {class} out of range");
        let idx = class - 1;
        let px = idx % self.patches_x();
        let py = idx / self.patches_x();
        (px * self.g, py * self.g)
    }

    /// Center of the `j`-th pixel of a patch, row-major within the patch.
    pub fn pixel_center(&self, class: u32, j: u32) -> Vector2<f64> {
        assert!(j < self.pixels_per_patch(), "pixel index {j} out of range");
        let (ox, oy) = self.patch_origin(class);
        let du = j % self.g;
        let dv = j / self.g;
        Vector2::new((ox + du) as f64 + 0.5, (oy + dv) as f64 + 0.5)
    }

    /// Patch-local coordinates mapped affinely to `[-1, 1]` per axis: the
    /// patch's left/top edge maps to -1, the right/bottom edge to +1.
    pub fn normalized_local(&self, pixel: &Vector2<f64>) -> Result<Vector2<f64>, FeatureError> {
        if !self.in_frame(pixel) {
            return Err(FeatureError::OutOfFrame(pixel.x, pixel.y));
        }
        let g = self.g as f64;
        let lx = pixel.x - (pixel.x / g).floor() * g;
        let ly = pixel.y - (pixel.y / g).floor() * g;
        Ok(Vector2::new(2.0 * lx / g - 1.0, 2.0 * ly / g - 1.0))
    }
}

/// Sinusoidal positional encoding: for `f` in `0..levels`, emits
/// `sin(2^f pi p_i)` for every dimension of `p`, then `cos(2^f pi p_i)`.
/// Output length is `2 * levels * p.len()`.
pub fn positional_encoding(p: &[f64], levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * levels * p.len());
    for f in 0..levels {
        let scale = (1u64 << f) as f64 * std::f64::consts::PI;
        for &x in p {
            out.push((scale * x).sin());
        }
        for &x in p {
            out.push((scale * x).cos());
        }
    }
    out
}

/// Dense row-major matrix of f32 descriptors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    dim: usize,
    data: Vec<f32>,
}

impl Descriptors {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * rows) }
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(FeatureError::DimensionMismatch {
                what: "flat descriptor buffer",
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), FeatureError> {
        if row.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                what: "descriptor row",
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Scales `v` to unit L2 norm (f64 accumulation). Zero vectors stay zero.
pub fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// L1 distance between equal-length f32 slices. Four partial sums keep the
/// loop vectorizable; the result is deterministic for a fixed slice length.
pub fn l1_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        for l in 0..4 {
            lanes[l] += (a[i + l] - b[i + l]).abs();
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 4..a.len() {
        tail += (a[i] - b[i]).abs();
    }
    lanes[0] as f64 + lanes[1] as f64 + lanes[2] as f64 + lanes[3] as f64 + tail as f64
}

/// Squared Euclidean distance between f32 slices, partial-sum layout as
/// [`l1_distance`].
pub fn l2_distance_sq(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        for l in 0..4 {
            let d = a[i + l] - b[i + l];
            lanes[l] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 4..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    lanes[0] as f64 + lanes[1] as f64 + lanes[2] as f64 + lanes[3] as f64 + tail as f64
}

/// Image-side feature source consumed by the matcher: a global descriptor,
/// one descriptor per patch, and one feature per pixel center.
pub trait ImageFeatures {
    fn grid(&self) -> &PatchGrid;
    fn global_descriptor(&self) -> &[f32];
    /// Descriptor of patch `class` (in `1..=num_patches`).
    fn patch_descriptor(&self, class: u32) -> &[f32];
    /// Feature of pixel `j` (row-major within patch `class`).
    fn pixel_feature(&self, class: u32, j: u32) -> &[f32];
}

/// Image features derived from per-patch descriptors through the pixel MLP:
/// every pixel feature is `mlp(concat(patch_descriptor, positional_encoding
/// of the pixel's normalized patch-local coordinates))`. All pixels are
/// materialized eagerly.
pub struct MlpImageFeatures {
    grid: PatchGrid,
    global: Vec<f32>,
    patches: Descriptors,
    pixels: Descriptors,
}

impl MlpImageFeatures {
    pub fn compute(
        grid: PatchGrid,
        global: Vec<f32>,
        patches: Descriptors,
        weights: &MlpWeights,
        pe_levels: usize,
    ) -> Result<Self, FeatureError> {
        if patches.len() != grid.num_patches() as usize {
            return Err(FeatureError::DimensionMismatch {
                what: "patch descriptor count",
                expected: grid.num_patches() as usize,
                got: patches.len(),
            });
        }
        let mut pixels = Descriptors::with_capacity(
            weights.output_dim(),
            (grid.width() * grid.height()) as usize,
        );
        for class in 1..=grid.num_patches() {
            let patch = patches.row(class as usize - 1);
            for j in 0..grid.pixels_per_patch() {
                let center = grid.pixel_center(class, j);
                let feat = pixel_feature(patch, &center, &grid, weights, pe_levels)?;
                pixels.push(&feat).expect("uniform output dim");
            }
        }
        Ok(Self { grid, global, patches, pixels })
    }
}

impl ImageFeatures for MlpImageFeatures {
    fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    fn global_descriptor(&self) -> &[f32] {
        &self.global
    }

    fn patch_descriptor(&self, class: u32) -> &[f32] {
        self.patches.row(class as usize - 1)
    }

    fn pixel_feature(&self, class: u32, j: u32) -> &[f32] {
        self.pixels.row(((class - 1) * self.grid.pixels_per_patch() + j) as usize)
    }
}

/// Feature of one continuous pixel: the pixel MLP applied to the patch
/// descriptor concatenated with the positional encoding of the pixel's
/// normalized patch-local coordinates.
pub fn pixel_feature(
    patch_descriptor: &[f32],
    pixel: &Vector2<f64>,
    grid: &PatchGrid,
    weights: &MlpWeights,
    pe_levels: usize,
) -> Result<Vec<f32>, FeatureError> {
    let r = grid.normalized_local(pixel)?;
    let pe = positional_encoding(&[r.x, r.y], pe_levels);
    let expected = patch_descriptor.len() + pe.len();
    if weights.input_dim() != expected {
        return Err(FeatureError::DimensionMismatch {
            what: "pixel MLP input",
            expected,
            got: weights.input_dim(),
        });
    }
    let mut input = Vec::with_capacity(expected);
    input.extend(patch_descriptor.iter().map(|v| *v as f64));
    input.extend_from_slice(&pe);
    Ok(weights.forward_f64(&input))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid512() -> PatchGrid {
        PatchGrid::new(512, 512, 16).unwrap()
    }

    #[test]
    fn patch_classes_are_row_major_from_one() {
        let grid = grid512();
        assert_eq!(grid.num_patches(), 1024);
        assert_eq!(grid.num_classes(), 1025);
        assert_eq!(grid.patch_of(&Vector2::new(0.5, 0.5)), 1);
        assert_eq!(grid.patch_of(&Vector2::new(511.0, 511.0)), 1024);
        assert_eq!(grid.patch_of(&Vector2::new(16.0, 0.0)), 2);
        assert_eq!(grid.patch_of(&Vector2::new(0.0, 16.0)), 33);
    }

    #[test]
    fn out_of_frame_pixels_get_class_zero() {
        let grid = grid512();
        assert_eq!(grid.patch_of(&Vector2::new(-1.0, 5.0)), 0);
        assert_eq!(grid.patch_of(&Vector2::new(512.0, 5.0)), 0);
        assert_eq!(grid.patch_of(&Vector2::new(5.0, 512.0)), 0);
    }

    #[test]
    fn grid_requires_exact_division() {
        assert!(PatchGrid::new(512, 512, 15).is_err());
        assert!(PatchGrid::new(0, 512, 16).is_err());
        assert!(PatchGrid::new(512, 512, 0).is_err());
    }

    #[test]
    fn normalized_local_maps_edges_and_center() {
        let grid = grid512();
        let r = grid.normalized_local(&Vector2::new(0.0, 0.0)).unwrap();
        assert_eq!(r, Vector2::new(-1.0, -1.0));
        let r = grid.normalized_local(&Vector2::new(8.0, 8.0)).unwrap();
        assert_eq!(r, Vector2::new(0.0, 0.0));
        let r = grid.normalized_local(&Vector2::new(16.0, 24.0)).unwrap();
        assert_eq!(r, Vector2::new(-1.0, 0.0));
        assert!(matches!(
            grid.normalized_local(&Vector2::new(-0.1, 0.0)),
            Err(FeatureError::OutOfFrame(..))
        ));
    }

    #[test]
    fn normalized_local_round_trips() {
        let grid = grid512();
        for k in 0..300 {
            let u = 511.9 * (k as f64 * 0.618034).fract();
            let v = 511.9 * (k as f64 * 0.414214).fract();
            let pixel = Vector2::new(u, v);
            let class = grid.patch_of(&pixel);
            let r = grid.normalized_local(&pixel).unwrap();
            let (ox, oy) = grid.patch_origin(class);
            let g = grid.g() as f64;
            let back = Vector2::new(
                ox as f64 + (r.x + 1.0) * 0.5 * g,
                oy as f64 + (r.y + 1.0) * 0.5 * g,
            );
            assert!((back - pixel).norm() < 1e-12, "pixel {pixel:?} -> {back:?}");
        }
    }

    #[test]
    fn pixel_center_walks_patch_row_major() {
        let grid = PatchGrid::new(32, 32, 16).unwrap();
        assert_eq!(grid.pixel_center(1, 0), Vector2::new(0.5, 0.5));
        assert_eq!(grid.pixel_center(1, 15), Vector2::new(15.5, 0.5));
        assert_eq!(grid.pixel_center(1, 16), Vector2::new(0.5, 1.5));
        assert_eq!(grid.pixel_center(4, 255), Vector2::new(31.5, 31.5));
    }

    #[test]
    fn positional_encoding_known_values() {
        let pe = positional_encoding(&[1.0, 0.0], 6);
        assert_eq!(pe.len(), 24);
        // f = 0 block: sin(pi * p), then cos(pi * p).
        assert!(pe[0].abs() < 1e-15, "sin(pi) ~ 0, got {}", pe[0]);
        assert_eq!(pe[1], 0.0);
        assert_eq!(pe[2], -1.0);
        assert_eq!(pe[3], 1.0);
    }

    #[test]
    fn positional_encoding_doubles_frequency_per_level() {
        let p = [0.25];
        let pe = positional_encoding(&p, 3);
        // Blocks: [sin(pi/4), cos(pi/4), sin(pi/2), cos(pi/2), sin(pi), cos(pi)]
        assert!((pe[0] - (0.5f64).sqrt()).abs() < 1e-15);
        assert!((pe[1] - (0.5f64).sqrt()).abs() < 1e-15);
        assert!((pe[2] - 1.0).abs() < 1e-15);
        assert!(pe[3].abs() < 1e-15);
        assert!(pe[4].abs() < 1e-15);
        assert!((pe[5] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn positional_encoding_separates_all_pixel_centers_of_a_patch() {
        // All 256 centers of one 16x16 patch must encode distinctly.
        let grid = PatchGrid::new(16, 16, 16).unwrap();
        let mut encodings = Vec::new();
        for j in 0..256 {
            let c = grid.pixel_center(1, j);
            let r = grid.normalized_local(&c).unwrap();
            encodings.push(positional_encoding(&[r.x, r.y], DEFAULT_PE_LEVELS));
        }
        let mut min_gap = f64::INFINITY;
        for i in 0..encodings.len() {
            for k in (i + 1)..encodings.len() {
                let d: f64 = encodings[i]
                    .iter()
                    .zip(&encodings[k])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_gap = min_gap.min(d);
            }
        }
        assert!(min_gap > 1e-9, "min pairwise gap {min_gap}");
    }

    #[test]
    fn positional_encoding_injective_on_dense_grid() {
        // 100x100 r-values; the lowest-frequency block alone must separate
        // them, which lower-bounds the full encoding distance.
        let n = 100;
        let mut blocks: Vec<[f64; 4]> = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let rx = -1.0 + 2.0 * (ix as f64 + 0.5) / n as f64;
                let ry = -1.0 + 2.0 * (iy as f64 + 0.5) / n as f64;
                let pe = positional_encoding(&[rx, ry], 1);
                blocks.push([pe[0], pe[1], pe[2], pe[3]]);
            }
        }
        let mut min_gap = f64::INFINITY;
        for i in 0..blocks.len() {
            for k in (i + 1)..blocks.len() {
                let a = &blocks[i];
                let b = &blocks[k];
                let d = (a[0] - b[0]).powi(2)
                    + (a[1] - b[1]).powi(2)
                    + (a[2] - b[2]).powi(2)
                    + (a[3] - b[3]).powi(2);
                if d < min_gap {
                    min_gap = d;
                }
            }
        }
        assert!(min_gap.sqrt() > 1e-9, "first-block min gap {}", min_gap.sqrt());
    }

    #[test]
    fn descriptor_block_accessors() {
        let mut d = Descriptors::new(3);
        d.push(&[1.0, 2.0, 3.0]).unwrap();
        d.push(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), &[4.0, 5.0, 6.0]);
        assert!(matches!(d.push(&[1.0]), Err(FeatureError::DimensionMismatch { .. })));
        assert!(Descriptors::from_flat(3, vec![0.0; 7]).is_err());
    }

    #[test]
    fn l1_and_l2_distances_match_naive() {
        let a: Vec<f32> = (0..131).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..131).map(|i| (i as f32 * 0.71).cos()).collect();
        let naive_l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs() as f64).sum();
        let naive_l2: f64 = a.iter().zip(&b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        assert!((l1_distance(&a, &b) - naive_l1).abs() < 1e-4);
        assert!((l2_distance_sq(&a, &b) - naive_l2).abs() < 1e-4);
    }

    #[test]
    fn normalize_produces_unit_vectors() {
        let mut v = vec![3.0f32, 4.0];
        normalize(&mut v);
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
        let mut z = vec![0.0f32; 4];
        normalize(&mut z);
        assert!(z.iter().all(|x| *x == 0.0));
    }
}

//! 3D visual-input geometry: patch token arithmetic, AnyResolution crop
//! planning, and token-grid plumbing shared by the projector forwards.
//!
//! A CT volume of `VolumeDims` voxels tokenized with `PatchDims` patches
//! yields a `TokenGrid` whose rows follow the lattice in row-major
//! depth-then-height-then-width order (`index = z*(h*w) + y*w + x`).
//! High-resolution volumes are tiled into equal crops by [`anyres_plan`];
//! the planned crops plus one resized global view bound the token budget
//! offered to the language model.
//!
//! Non-divisible geometry is always an error, never silently padded or
//! resampled: silent resampling hides geometry bugs.

mod projectors;

pub use projectors::{
    mlp_project, spp_project, tokenpacker3d_project, MlpProjector, TokenPacker3d,
};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Volume axis, ordered as stored: depth, then height, then width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Depth,
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Depth => "depth",
            Axis::Height => "height",
            Axis::Width => "width",
        })
    }
}

#[derive(Debug, Error)]
pub enum Vol3dError {
    #[error("{what} dimensions must all be positive")]
    ZeroDim { what: &'static str },
    #[error("extent {extent} along {axis} is not divisible by {divisor}")]
    NonDivisible { axis: Axis, extent: usize, divisor: usize },
    #[error("invalid crop plan: {0}")]
    InvalidCropPlan(String),
    #[error("token grid needs at least one token")]
    EmptyTokenGrid,
    #[error("token grid entries must be finite")]
    NonFiniteTokens,
    #[error("token data has {got} rows but the lattice needs {expected}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("embedding widths differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("operation requires a 3D token lattice, not a flat sequence")]
    NotALattice,
    #[error("weight matrix {name} has shape {got:?}, expected {expected:?}")]
    WeightShape { name: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("cannot parse '{0}' as three comma-separated positive integers")]
    ParseDims(String),
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), Vol3dError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Vol3dError::ParseDims(s.to_string()));
    }
    let mut values = [0usize; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| Vol3dError::ParseDims(s.to_string()))?;
    }
    Ok((values[0], values[1], values[2]))
}

fn exact_div(extent: usize, divisor: usize, axis: Axis) -> Result<usize, Vol3dError> {
    if divisor == 0 || !extent.is_multiple_of(divisor) {
        return Err(Vol3dError::NonDivisible { axis, extent, divisor });
    }
    Ok(extent / divisor)
}

/// Voxel extents of a volume (or of a crop of one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VolumeDims {
    depth: usize,
    height: usize,
    width: usize,
}

impl VolumeDims {
    pub fn new(depth: usize, height: usize, width: usize) -> Result<Self, Vol3dError> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Vol3dError::ZeroDim { what: "volume" });
        }
        Ok(VolumeDims { depth, height, width })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Total voxel count.
    pub fn volume(&self) -> usize {
        self.depth * self.height * self.width
    }
}

impl FromStr for VolumeDims {
    type Err = Vol3dError;

    fn from_str(s: &str) -> Result<Self, Vol3dError> {
        let (d, h, w) = parse_triple(s)?;
        VolumeDims::new(d, h, w)
    }
}

/// Voxel extents of one ViT patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchDims {
    depth: usize,
    height: usize,
    width: usize,
}

impl PatchDims {
    pub fn new(depth: usize, height: usize, width: usize) -> Result<Self, Vol3dError> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Vol3dError::ZeroDim { what: "patch" });
        }
        Ok(PatchDims { depth, height, width })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

impl FromStr for PatchDims {
    type Err = Vol3dError;

    fn from_str(s: &str) -> Result<Self, Vol3dError> {
        let (d, h, w) = parse_triple(s)?;
        PatchDims::new(d, h, w)
    }
}

/// Shape of a 3D token lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridShape {
    depth: usize,
    height: usize,
    width: usize,
}

impl GridShape {
    pub fn new(depth: usize, height: usize, width: usize) -> Result<Self, Vol3dError> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Vol3dError::ZeroDim { what: "grid" });
        }
        Ok(GridShape { depth, height, width })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.depth * self.height * self.width
    }

    /// Row index of lattice cell (z, y, x).
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        debug_assert!(z < self.depth && y < self.height && x < self.width);
        z * (self.height * self.width) + y * self.width + x
    }
}

impl FromStr for GridShape {
    type Err = Vol3dError;

    fn from_str(s: &str) -> Result<Self, Vol3dError> {
        let (d, h, w) = parse_triple(s)?;
        GridShape::new(d, h, w)
    }
}

/// Pooling or downsampling kernel over a token lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Kernel3 {
    depth: usize,
    height: usize,
    width: usize,
}

impl Kernel3 {
    pub fn new(depth: usize, height: usize, width: usize) -> Result<Self, Vol3dError> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Vol3dError::ZeroDim { what: "kernel" });
        }
        Ok(Kernel3 { depth, height, width })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_size(&self) -> usize {
        self.depth * self.height * self.width
    }
}

impl FromStr for Kernel3 {
    type Err = Vol3dError;

    fn from_str(s: &str) -> Result<Self, Vol3dError> {
        let (d, h, w) = parse_triple(s)?;
        Kernel3::new(d, h, w)
    }
}

/// How a token grid's rows are organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenLayout {
    /// Rows index a 3D lattice in depth-major row order.
    Lattice(GridShape),
    /// Rows form a flat sequence (after stream concatenation).
    Sequence(usize),
}

impl TokenLayout {
    pub fn count(&self) -> usize {
        match self {
            TokenLayout::Lattice(shape) => shape.count(),
            TokenLayout::Sequence(n) => *n,
        }
    }
}

/// Token embeddings plus their layout. Rows of `data` follow the layout;
/// for a lattice, row `z*(h*w) + y*w + x` holds cell (z, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    layout: TokenLayout,
    data: Array2<f64>,
}

fn validate_data(data: &Array2<f64>) -> Result<(), Vol3dError> {
    if data.nrows() == 0 {
        return Err(Vol3dError::EmptyTokenGrid);
    }
    if data.ncols() == 0 {
        return Err(Vol3dError::ZeroDim { what: "embedding" });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Vol3dError::NonFiniteTokens);
    }
    Ok(())
}

impl TokenGrid {
    /// Wraps lattice-ordered token data; row count must equal the lattice size.
    pub fn from_lattice(shape: GridShape, data: Array2<f64>) -> Result<Self, Vol3dError> {
        if data.nrows() != shape.count() {
            return Err(Vol3dError::RowCountMismatch {
                expected: shape.count(),
                got: data.nrows(),
            });
        }
        validate_data(&data)?;
        Ok(TokenGrid { layout: TokenLayout::Lattice(shape), data })
    }

    /// Wraps a flat token sequence.
    pub fn from_sequence(data: Array2<f64>) -> Result<Self, Vol3dError> {
        validate_data(&data)?;
        Ok(TokenGrid { layout: TokenLayout::Sequence(data.nrows()), data })
    }

    /// Synthetic lattice grid with entries uniform in (-1, 1), deterministic
    /// in the seed. Intended for geometry demos and reproducibility checks.
    pub fn seeded(shape: GridShape, dim: usize, seed: u64) -> Result<Self, Vol3dError> {
        if dim == 0 {
            return Err(Vol3dError::ZeroDim { what: "embedding" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-1.0f64, 1.0);
        let values: Vec<f64> =
            (0..shape.count() * dim).map(|_| dist.sample(&mut rng)).collect();
        let data = Array2::from_shape_vec((shape.count(), dim), values)
            .expect("shape matches generated length");
        TokenGrid::from_lattice(shape, data)
    }

    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    /// Lattice shape, or an error after the layout became a flat sequence.
    pub fn lattice_shape(&self) -> Result<GridShape, Vol3dError> {
        match self.layout {
            TokenLayout::Lattice(shape) => Ok(shape),
            TokenLayout::Sequence(_) => Err(Vol3dError::NotALattice),
        }
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    /// Embedding width.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub(crate) fn replace_data(
        layout: TokenLayout,
        data: Array2<f64>,
    ) -> Result<Self, Vol3dError> {
        debug_assert_eq!(layout.count(), data.nrows());
        validate_data(&data)?;
        Ok(TokenGrid { layout, data })
    }
}

/// One axis-aligned crop in voxel space; both triples are ordered
/// (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CropBox {
    pub offset: [usize; 3],
    pub extent: [usize; 3],
}

impl CropBox {
    fn end(&self, axis: usize) -> usize {
        self.offset[axis] + self.extent[axis]
    }

    fn volume(&self) -> usize {
        self.extent.iter().product()
    }

    fn overlaps(&self, other: &CropBox) -> bool {
        (0..3).all(|a| self.offset[a] < other.end(a) && other.offset[a] < self.end(a))
    }

    /// Whether voxel (z, y, x) lies inside this box.
    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z, y, x];
        (0..3).all(|a| p[a] >= self.offset[a] && p[a] < self.end(a))
    }
}

/// Ordered equal-extent crops that exactly tile a volume anchored at the
/// origin, plus the resize target for the whole-volume global view. The
/// global view is metadata only; no voxel data is resampled here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CropPlan {
    crops: Vec<CropBox>,
    global_view: VolumeDims,
}

impl CropPlan {
    pub fn new(crops: Vec<CropBox>, global_view: VolumeDims) -> Result<Self, Vol3dError> {
        if crops.is_empty() {
            return Err(Vol3dError::InvalidCropPlan("no crops".into()));
        }
        let extent = crops[0].extent;
        if extent.contains(&0) {
            return Err(Vol3dError::InvalidCropPlan("crop extent has a zero axis".into()));
        }
        if crops.iter().any(|c| c.extent != extent) {
            return Err(Vol3dError::InvalidCropPlan("crop extents differ".into()));
        }
        for (i, a) in crops.iter().enumerate() {
            for (j, b) in crops.iter().enumerate().skip(i + 1) {
                if a.overlaps(b) {
                    return Err(Vol3dError::InvalidCropPlan(format!(
                        "crops {i} and {j} overlap"
                    )));
                }
            }
        }
        let bbox_min: Vec<usize> =
            (0..3).map(|a| crops.iter().map(|c| c.offset[a]).min().unwrap()).collect();
        if bbox_min != [0, 0, 0] {
            return Err(Vol3dError::InvalidCropPlan(
                "crops must start at the volume origin".into(),
            ));
        }
        let bbox_volume: usize =
            (0..3).map(|a| crops.iter().map(|c| c.end(a)).max().unwrap()).product();
        let covered: usize = crops.iter().map(CropBox::volume).sum();
        if covered != bbox_volume {
            return Err(Vol3dError::InvalidCropPlan(format!(
                "crops cover {covered} voxels of a {bbox_volume}-voxel volume"
            )));
        }
        Ok(CropPlan { crops, global_view })
    }

    pub fn crops(&self) -> &[CropBox] {
        &self.crops
    }

    pub fn crop_count(&self) -> usize {
        self.crops.len()
    }

    /// Shared extent of every crop.
    pub fn crop_extent(&self) -> VolumeDims {
        let e = self.crops[0].extent;
        VolumeDims::new(e[0], e[1], e[2]).expect("validated at construction")
    }

    pub fn global_view(&self) -> VolumeDims {
        self.global_view
    }
}

/// Number of ViT tokens a volume yields under a patch size:
/// the per-axis quotients multiplied together. Every axis must divide.
pub fn token_count(vol: VolumeDims, patch: PatchDims) -> Result<usize, Vol3dError> {
    let d = exact_div(vol.depth, patch.depth, Axis::Depth)?;
    let h = exact_div(vol.height, patch.height, Axis::Height)?;
    let w = exact_div(vol.width, patch.width, Axis::Width)?;
    Ok(d * h * w)
}

/// Token lattice shape of a volume under a patch size.
pub fn token_grid_shape(vol: VolumeDims, patch: PatchDims) -> Result<GridShape, Vol3dError> {
    let d = exact_div(vol.depth, patch.depth, Axis::Depth)?;
    let h = exact_div(vol.height, patch.height, Axis::Height)?;
    let w = exact_div(vol.width, patch.width, Axis::Width)?;
    GridShape::new(d, h, w)
}

/// Tiles a volume into equal `crop`-sized boxes on a regular grid, ordered
/// depth-major, then height, then width. The crop size must divide the
/// volume on every axis. `global` records the resize target for the extra
/// whole-volume view.
pub fn anyres_plan(
    vol: VolumeDims,
    crop: VolumeDims,
    global: VolumeDims,
) -> Result<CropPlan, Vol3dError> {
    let nd = exact_div(vol.depth, crop.depth, Axis::Depth)?;
    let nh = exact_div(vol.height, crop.height, Axis::Height)?;
    let nw = exact_div(vol.width, crop.width, Axis::Width)?;
    let mut crops = Vec::with_capacity(nd * nh * nw);
    for z in 0..nd {
        for y in 0..nh {
            for x in 0..nw {
                crops.push(CropBox {
                    offset: [z * crop.depth, y * crop.height, x * crop.width],
                    extent: [crop.depth, crop.height, crop.width],
                });
            }
        }
    }
    CropPlan::new(crops, global)
}

/// Sequence length offered to the language model: every crop plus the one
/// global view, each contributing `per_view_tokens` after projection.
pub fn anyres_token_budget(plan: &CropPlan, per_view_tokens: usize) -> usize {
    (plan.crop_count() + 1) * per_view_tokens
}

/// Mean-pools non-overlapping `pool` blocks over the token lattice. The
/// kernel must divide the grid on every axis; the output lattice shrinks
/// by the kernel on each axis.
pub fn mean_pool(tokens: &TokenGrid, pool: Kernel3) -> Result<TokenGrid, Vol3dError> {
    let shape = tokens.lattice_shape()?;
    let od = exact_div(shape.depth(), pool.depth(), Axis::Depth)?;
    let oh = exact_div(shape.height(), pool.height(), Axis::Height)?;
    let ow = exact_div(shape.width(), pool.width(), Axis::Width)?;
    let out_shape = GridShape::new(od, oh, ow)?;
    let dim = tokens.dim();
    let block = pool.block_size() as f64;
    let data = tokens.data();
    let mut out = Array2::<f64>::zeros((out_shape.count(), dim));
    for oz in 0..od {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = ndarray::Array1::<f64>::zeros(dim);
                for dz in 0..pool.depth() {
                    for dy in 0..pool.height() {
                        for dx in 0..pool.width() {
                            let idx = shape.index(
                                oz * pool.depth() + dz,
                                oy * pool.height() + dy,
                                ox * pool.width() + dx,
                            );
                            acc += &data.row(idx);
                        }
                    }
                }
                acc /= block;
                out.row_mut(out_shape.index(oz, oy, ox)).assign(&acc);
            }
        }
    }
    TokenGrid::from_lattice(out_shape, out)
}

/// Concatenates two token streams: rows of `a` precede rows of `b` and the
/// result is a flat sequence. Embedding widths must match.
pub fn concat_streams(a: &TokenGrid, b: &TokenGrid) -> Result<TokenGrid, Vol3dError> {
    if a.dim() != b.dim() {
        return Err(Vol3dError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let data = ndarray::concatenate(ndarray::Axis(0), &[a.data().view(), b.data().view()])
        .expect("equal widths verified");
    TokenGrid::from_sequence(data)
}

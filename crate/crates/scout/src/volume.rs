//! Volumetric containers and the on-disk `.scv` format.
//!
//! Payloads are raw little-endian f32 in C order (z slowest, then rows,
//! then columns); shape and metadata live in a JSON sidecar next to the
//! payload. Containers are immutable in spirit: operations return new
//! volumes rather than mutating in place.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoutError};
use crate::geometry::ScanGeometry;

/// Volume shape, ordered slowest to fastest axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.d == 0 || self.h == 0 || self.w == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        z < self.d && y < self.h && x < self.w
    }
}

/// A stack of post-log line-integral samples plus acquisition metadata.
///
/// Axes are (slice, view, detector) for sinogram stacks.
#[derive(Debug, Clone)]
pub struct ProjectionVolume {
    pub dims: Dims,
    pub data: Vec<f32>,
    pub geometry: Option<ScanGeometry>,
    /// (slice pitch mm, view step rad, detector pitch mm)
    pub spacing: [f64; 3],
}

/// A stack of attenuation images, axes (slice, row, column).
#[derive(Debug, Clone)]
pub struct ImageVolume {
    pub dims: Dims,
    pub data: Vec<f32>,
    /// (slice pitch mm, pixel pitch mm, pixel pitch mm)
    pub spacing: [f64; 3],
}

fn check_shape(dims: Dims, len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(ScoutError::Validation(format!(
            "volume dims must all be positive, got {}x{}x{}",
            dims.d, dims.h, dims.w
        )));
    }
    if dims.len() != len {
        return Err(ScoutError::Validation(format!(
            "data length {} does not match dims {}x{}x{}",
            len, dims.d, dims.h, dims.w
        )));
    }
    Ok(())
}

fn check_finite(data: &[f32]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(ScoutError::Validation(format!(
            "non-finite sample at flat index {pos}"
        )));
    }
    Ok(())
}

impl ProjectionVolume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_shape(dims, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            dims,
            data,
            geometry: None,
            spacing: [1.0, 1.0, 1.0],
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
            geometry: None,
            spacing: [1.0, 1.0, 1.0],
        }
    }

    pub fn with_geometry(mut self, g: ScanGeometry) -> Result<Self> {
        if g.view_count != self.dims.h || g.detector_count != self.dims.w {
            return Err(ScoutError::Parameter(format!(
                "geometry ({} views x {} detectors) does not match volume ({} x {})",
                g.view_count, g.detector_count, self.dims.h, self.dims.w
            )));
        }
        self.geometry = Some(g);
        Ok(self)
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.dims.index(z, y, x)]
    }

    /// Sample with clamped-edge replication for signed coordinates.
    #[inline]
    pub fn at_clamped(&self, z: isize, y: isize, x: isize) -> f32 {
        let z = z.clamp(0, self.dims.d as isize - 1) as usize;
        let y = y.clamp(0, self.dims.h as isize - 1) as usize;
        let x = x.clamp(0, self.dims.w as isize - 1) as usize;
        self.data[self.dims.index(z, y, x)]
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.dims, self.data.len())?;
        check_finite(&self.data)?;
        if let Some(g) = &self.geometry {
            if g.view_count != self.dims.h || g.detector_count != self.dims.w {
                return Err(ScoutError::Validation(
                    "attached geometry no longer matches dims".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

impl ImageVolume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_shape(dims, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            dims,
            data,
            spacing: [1.0, 1.0, 1.0],
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
            spacing: [1.0, 1.0, 1.0],
        }
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.dims.index(z, y, x)]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims.h * self.dims.w;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.dims, self.data.len())?;
        check_finite(&self.data)
    }
}

/// A cubic sample neighborhood centered on one voxel.
#[derive(Debug, Clone)]
pub struct PatchBlock {
    pub center: (usize, usize, usize),
    pub edge: usize,
    /// `edge^3` samples in row-major (z, y, x) order.
    pub values: Vec<f32>,
}

/// Copy the `n^3` cube around `center`, replicating edge samples where the
/// cube leaves the volume.
pub fn extract_block(
    v: &ProjectionVolume,
    center: (usize, usize, usize),
    n: usize,
) -> Result<PatchBlock> {
    if n == 0 || n % 2 == 0 {
        return Err(ScoutError::Parameter(format!(
            "block edge must be odd and positive, got {n}"
        )));
    }
    let (cz, cy, cx) = center;
    if !v.dims.contains(cz, cy, cx) {
        return Err(ScoutError::Parameter(format!(
            "block center ({cz},{cy},{cx}) outside volume"
        )));
    }
    let r = (n / 2) as isize;
    let mut values = Vec::with_capacity(n * n * n);
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                values.push(v.at_clamped(cz as isize + dz, cy as isize + dy, cx as isize + dx));
            }
        }
    }
    Ok(PatchBlock {
        center,
        edge: n,
        values,
    })
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

/// JSON sidecar describing a `.scv` payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub kind: String,
    pub dims: [usize; 3],
    pub dtype: String,
    pub order: String,
    pub spacing: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ScanGeometry>,
}

/// Either volume kind, as read back from disk.
#[derive(Debug, Clone)]
pub enum Volume {
    Projection(ProjectionVolume),
    Image(ImageVolume),
}

impl Volume {
    pub fn dims(&self) -> Dims {
        match self {
            Volume::Projection(v) => v.dims,
            Volume::Image(v) => v.dims,
        }
    }

    pub fn data(&self) -> &[f32] {
        match self {
            Volume::Projection(v) => &v.data,
            Volume::Image(v) => &v.data,
        }
    }

    pub fn into_projection(self) -> Result<ProjectionVolume> {
        match self {
            Volume::Projection(v) => Ok(v),
            Volume::Image(_) => Err(ScoutError::Format(
                "expected a projection volume, found an image volume".into(),
            )),
        }
    }

    pub fn into_image(self) -> Result<ImageVolume> {
        match self {
            Volume::Image(v) => Ok(v),
            Volume::Projection(_) => Err(ScoutError::Format(
                "expected an image volume, found a projection volume".into(),
            )),
        }
    }
}

fn header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

fn write_volume_files(path: &Path, header: &VolumeHeader, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut payload = fs::File::create(path)?;
    payload.write_all(&bytes)?;
    payload.flush()?;
    fs::write(header_path(path), serde_json::to_vec_pretty(header)?)?;
    Ok(())
}

/// Write a projection volume as `.scv` payload plus JSON sidecar.
pub fn save_projection(v: &ProjectionVolume, path: impl AsRef<Path>) -> Result<()> {
    v.validate()?;
    let header = VolumeHeader {
        kind: "projection".into(),
        dims: [v.dims.d, v.dims.h, v.dims.w],
        dtype: "f32le".into(),
        order: "zyx".into(),
        spacing: v.spacing,
        geometry: v.geometry.clone(),
    };
    write_volume_files(path.as_ref(), &header, &v.data)
}

/// Write an image volume as `.scv` payload plus JSON sidecar.
pub fn save_image(v: &ImageVolume, path: impl AsRef<Path>) -> Result<()> {
    v.validate()?;
    let header = VolumeHeader {
        kind: "image".into(),
        dims: [v.dims.d, v.dims.h, v.dims.w],
        dtype: "f32le".into(),
        order: "zyx".into(),
        spacing: v.spacing,
        geometry: None,
    };
    write_volume_files(path.as_ref(), &header, &v.data)
}

/// Write either volume kind.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    match v {
        Volume::Projection(p) => save_projection(p, path),
        Volume::Image(i) => save_image(i, path),
    }
}

/// Load a `.scv` volume, dispatching on the sidecar's `kind`.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let hp = header_path(path);
    let header_bytes = fs::read(&hp).map_err(|e| {
        ScoutError::Format(format!("missing or unreadable header {}: {e}", hp.display()))
    })?;
    let header: VolumeHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ScoutError::Format(format!("bad header {}: {e}", hp.display())))?;
    if header.dtype != "f32le" {
        return Err(ScoutError::Format(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.order != "zyx" {
        return Err(ScoutError::Format(format!(
            "unsupported order {:?}",
            header.order
        )));
    }
    let dims = Dims::new(header.dims[0], header.dims[1], header.dims[2]);
    let bytes = fs::read(path)?;
    if bytes.len() != dims.len() * 4 {
        return Err(ScoutError::Corruption(format!(
            "payload {} holds {} bytes, header declares {} ({}x{}x{} f32)",
            path.display(),
            bytes.len(),
            dims.len() * 4,
            dims.d,
            dims.h,
            dims.w
        )));
    }
    let mut data = Vec::with_capacity(dims.len());
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    match header.kind.as_str() {
        "projection" => {
            let mut v = ProjectionVolume::new(dims, data)?;
            v.spacing = header.spacing;
            if let Some(g) = header.geometry {
                v = v.with_geometry(g)?;
            }
            Ok(Volume::Projection(v))
        }
        "image" => {
            let mut v = ImageVolume::new(dims, data)?;
            v.spacing = header.spacing;
            Ok(Volume::Image(v))
        }
        other => Err(ScoutError::Format(format!("unknown volume kind {other:?}"))),
    }
}

/// Load and require a projection volume.
pub fn load_projection(path: impl AsRef<Path>) -> Result<ProjectionVolume> {
    load_volume(path)?.into_projection()
}

/// Load and require an image volume.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageVolume> {
    load_volume(path)?.into_image()
}

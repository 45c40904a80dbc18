//! Scan geometry, forward projection, filtered backprojection, and
//! conjugate-ray index maps.
//!
//! Both beam modes sample view angles uniformly over `[0, 2pi)` and place
//! detector cells symmetrically about the central ray. The forward
//! projector is ray-driven: midpoint quadrature along the ray with step
//! `pixel_pitch / 2` and bilinear interpolation, accumulated in f64.
//!
//! Conventions (right-handed, mm):
//! - pixel `(row, col)` sits at `x = (col - (W-1)/2) px`, `y = (row - (H-1)/2) px`
//! - parallel ray `(theta, s)` is the line `x cos(theta) + y sin(theta) = s`
//! - fan source sits at `R_so (cos(beta), sin(beta))`; a ray at fan angle
//!   `gamma` travels along `-(cos(beta+gamma), sin(beta+gamma))`
//!
//! With these conventions the same physical line is measured twice per
//! rotation: `(theta, s) <-> (theta + pi, -s)` in parallel mode and
//! `(beta, gamma) <-> (beta + pi + 2 gamma, -gamma)` in fan mode, which is
//! what [`conjugate_index`] tabulates.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Result, ScoutError};
use crate::volume::{Dims, ImageVolume, ProjectionVolume};

/// Acquisition trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    Parallel,
    /// Fan beam with a flat, equispaced detector.
    FanFlat,
}

/// Full description of a 2D acquisition applied slice by slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub mode: BeamMode,
    #[serde(rename = "views")]
    pub view_count: usize,
    #[serde(rename = "dets")]
    pub detector_count: usize,
    #[serde(rename = "det_pitch_mm")]
    pub detector_pitch: f64,
    /// Source to rotation center distance; unused in parallel mode.
    #[serde(rename = "r_so_mm")]
    pub source_to_center: f64,
    /// Rotation center to detector distance; unused in parallel mode.
    #[serde(rename = "r_cd_mm")]
    pub center_to_detector: f64,
    /// Reconstruction target (rows, cols).
    #[serde(rename = "img_size")]
    pub image_size: (usize, usize),
    #[serde(rename = "px_pitch_mm")]
    pub pixel_pitch: f64,
}

impl ScanGeometry {
    pub fn parallel(
        view_count: usize,
        detector_count: usize,
        detector_pitch: f64,
        image_size: (usize, usize),
        pixel_pitch: f64,
    ) -> Self {
        Self {
            mode: BeamMode::Parallel,
            view_count,
            detector_count,
            detector_pitch,
            source_to_center: 0.0,
            center_to_detector: 0.0,
            image_size,
            pixel_pitch,
        }
    }

    pub fn fan_flat(
        view_count: usize,
        detector_count: usize,
        detector_pitch: f64,
        source_to_center: f64,
        center_to_detector: f64,
        image_size: (usize, usize),
        pixel_pitch: f64,
    ) -> Self {
        Self {
            mode: BeamMode::FanFlat,
            view_count,
            detector_count,
            detector_pitch,
            source_to_center,
            center_to_detector,
            image_size,
            pixel_pitch,
        }
    }

    /// View angle of view `j`, exactly `2 pi j / view_count`.
    #[inline]
    pub fn view_angle(&self, j: usize) -> f64 {
        TAU * j as f64 / self.view_count as f64
    }

    #[inline]
    pub fn view_spacing(&self) -> f64 {
        TAU / self.view_count as f64
    }

    /// Signed detector coordinate of cell `i`, symmetric about the center ray.
    #[inline]
    pub fn detector_pos(&self, i: usize) -> f64 {
        (i as f64 - (self.detector_count as f64 - 1.0) / 2.0) * self.detector_pitch
    }

    /// Source-to-detector distance (fan mode).
    #[inline]
    pub fn source_to_detector(&self) -> f64 {
        self.source_to_center + self.center_to_detector
    }

    /// Fan angle of detector cell `i`.
    #[inline]
    pub fn fan_angle(&self, i: usize) -> f64 {
        (self.detector_pos(i) / self.source_to_detector()).atan()
    }

    /// Radius of the centered disk the image support must fit in.
    pub fn support_radius(&self) -> f64 {
        let (h, w) = self.image_size;
        0.5 * h.min(w) as f64 * self.pixel_pitch
    }

    /// Radius of the circumcircle of the image, used to bound ray marching.
    fn bounding_radius(&self) -> f64 {
        let (h, w) = self.image_size;
        let hx = 0.5 * w as f64 * self.pixel_pitch;
        let hy = 0.5 * h as f64 * self.pixel_pitch;
        (hx * hx + hy * hy).sqrt() + self.pixel_pitch
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_count < 2 || self.detector_count < 2 {
            return Err(ScoutError::Parameter(
                "geometry needs at least 2 views and 2 detectors".into(),
            ));
        }
        if !(self.detector_pitch > 0.0) || !(self.pixel_pitch > 0.0) {
            return Err(ScoutError::Parameter("pitches must be positive".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(ScoutError::Parameter("image size must be positive".into()));
        }
        if self.mode == BeamMode::FanFlat {
            if !(self.source_to_center > 0.0) || !(self.center_to_detector >= 0.0) {
                return Err(ScoutError::Parameter(
                    "fan mode needs source_to_center > 0 and center_to_detector >= 0".into(),
                ));
            }
            let half_width = 0.5 * (self.detector_count as f64 - 1.0) * self.detector_pitch;
            let gamma_max = (half_width / self.source_to_detector()).atan();
            let covered = self.source_to_center * gamma_max.sin();
            if covered < self.support_radius() {
                return Err(ScoutError::Parameter(format!(
                    "fan covers a {covered:.1} mm radius but the image support needs {:.1} mm",
                    self.support_radius()
                )));
            }
        }
        Ok(())
    }

    fn check_image(&self, img: &ImageVolume) -> Result<()> {
        self.validate()?;
        if (img.dims.h, img.dims.w) != self.image_size {
            return Err(ScoutError::Parameter(format!(
                "image {}x{} does not match geometry image_size {}x{}",
                img.dims.h, img.dims.w, self.image_size.0, self.image_size.1
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, p: &ProjectionVolume) -> Result<()> {
        self.validate()?;
        if p.dims.h != self.view_count || p.dims.w != self.detector_count {
            return Err(ScoutError::Parameter(format!(
                "sinogram {}x{} does not match geometry {} views x {} detectors",
                p.dims.h, p.dims.w, self.view_count, self.detector_count
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Ray-driven forward projection (f64 core)
// ---------------------------------------------------------------------------

#[inline]
fn bilinear(slice: &[f64], h: usize, w: usize, gx: f64, gy: f64) -> f64 {
    // Zero outside the pixel grid.
    if gx <= -1.0 || gy <= -1.0 || gx >= w as f64 || gy >= h as f64 {
        return 0.0;
    }
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let x0 = x0 as isize;
    let y0 = y0 as isize;
    let fetch = |yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            slice[yy as usize * w + xx as usize]
        }
    };
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1);
    let v10 = fetch(y0 + 1, x0);
    let v11 = fetch(y0 + 1, x0 + 1);
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Integrate `slice` along the line `origin + t * dir`, `t` in `[t0, t1]`,
/// with midpoint quadrature at step <= `step_hint`.
#[inline]
fn march_ray(
    slice: &[f64],
    h: usize,
    w: usize,
    pixel_pitch: f64,
    origin: (f64, f64),
    dir: (f64, f64),
    t0: f64,
    t1: f64,
    step_hint: f64,
) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let span = t1 - t0;
    let steps = (span / step_hint).ceil() as usize;
    let dt = span / steps as f64;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let inv_px = 1.0 / pixel_pitch;
    // Grid-space position and increment.
    let mut gx = (origin.0 + (t0 + 0.5 * dt) * dir.0) * inv_px + cx;
    let mut gy = (origin.1 + (t0 + 0.5 * dt) * dir.1) * inv_px + cy;
    let dgx = dt * dir.0 * inv_px;
    let dgy = dt * dir.1 * inv_px;
    let mut acc = 0.0;
    for _ in 0..steps {
        acc += bilinear(slice, h, w, gx, gy);
        gx += dgx;
        gy += dgy;
    }
    acc * dt
}

/// Project one f64 slice for every (view, detector) pair of `g`.
pub(crate) fn project_slice_f64(slice: &[f64], g: &ScanGeometry) -> Vec<f64> {
    let (h, w) = g.image_size;
    let rb = g.bounding_radius();
    let step = 0.5 * g.pixel_pitch;
    let mut sino = vec![0.0f64; g.view_count * g.detector_count];
    match g.mode {
        BeamMode::Parallel => {
            for j in 0..g.view_count {
                let theta = g.view_angle(j);
                let (sin_t, cos_t) = theta.sin_cos();
                let dir = (-sin_t, cos_t);
                let row = &mut sino[j * g.detector_count..(j + 1) * g.detector_count];
                for (i, out) in row.iter_mut().enumerate() {
                    let s = g.detector_pos(i);
                    let half = rb * rb - s * s;
                    if half <= 0.0 {
                        continue;
                    }
                    let half = half.sqrt();
                    let origin = (s * cos_t, s * sin_t);
                    *out = march_ray(
                        slice,
                        h,
                        w,
                        g.pixel_pitch,
                        origin,
                        dir,
                        -half,
                        half,
                        step,
                    );
                }
            }
        }
        BeamMode::FanFlat => {
            let r_so = g.source_to_center;
            for j in 0..g.view_count {
                let beta = g.view_angle(j);
                let (sin_b, cos_b) = beta.sin_cos();
                let src = (r_so * cos_b, r_so * sin_b);
                let row = &mut sino[j * g.detector_count..(j + 1) * g.detector_count];
                for (i, out) in row.iter_mut().enumerate() {
                    let gamma = g.fan_angle(i);
                    let ang = beta + gamma;
                    let dir = (-ang.cos(), -ang.sin());
                    // Intersect with the bounding circle: |src + t dir| = rb.
                    let b_half = src.0 * dir.0 + src.1 * dir.1;
                    let c = r_so * r_so - rb * rb;
                    let disc = b_half * b_half - c;
                    if disc <= 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    *out = march_ray(
                        slice,
                        h,
                        w,
                        g.pixel_pitch,
                        src,
                        dir,
                        -b_half - sq,
                        -b_half + sq,
                        step,
                    );
                }
            }
        }
    }
    sino
}

/// Exact adjoint of [`project_slice_f64`]: scatter sinogram values back
/// along the same rays with the same quadrature weights.
pub(crate) fn backscatter_slice_f64(sino: &[f64], g: &ScanGeometry) -> Vec<f64> {
    let (h, w) = g.image_size;
    let rb = g.bounding_radius();
    let step = 0.5 * g.pixel_pitch;
    let mut img = vec![0.0f64; h * w];
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let inv_px = 1.0 / g.pixel_pitch;

    let mut scatter = |origin: (f64, f64), dir: (f64, f64), t0: f64, t1: f64, value: f64| {
        if t1 <= t0 || value == 0.0 {
            return;
        }
        let span = t1 - t0;
        let steps = (span / step).ceil() as usize;
        let dt = span / steps as f64;
        let weighted = value * dt;
        let mut gx = (origin.0 + (t0 + 0.5 * dt) * dir.0) * inv_px + cx;
        let mut gy = (origin.1 + (t0 + 0.5 * dt) * dir.1) * inv_px + cy;
        let dgx = dt * dir.0 * inv_px;
        let dgy = dt * dir.1 * inv_px;
        for _ in 0..steps {
            if gx > -1.0 && gy > -1.0 && gx < w as f64 && gy < h as f64 {
                let x0f = gx.floor();
                let y0f = gy.floor();
                let fx = gx - x0f;
                let fy = gy - y0f;
                let x0 = x0f as isize;
                let y0 = y0f as isize;
                let mut put = |yy: isize, xx: isize, wt: f64| {
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        img[yy as usize * w + xx as usize] += weighted * wt;
                    }
                };
                put(y0, x0, (1.0 - fy) * (1.0 - fx));
                put(y0, x0 + 1, (1.0 - fy) * fx);
                put(y0 + 1, x0, fy * (1.0 - fx));
                put(y0 + 1, x0 + 1, fy * fx);
            }
            gx += dgx;
            gy += dgy;
        }
    };

    match g.mode {
        BeamMode::Parallel => {
            for j in 0..g.view_count {
                let theta = g.view_angle(j);
                let (sin_t, cos_t) = theta.sin_cos();
                for i in 0..g.detector_count {
                    let s = g.detector_pos(i);
                    let half = rb * rb - s * s;
                    if half <= 0.0 {
                        continue;
                    }
                    let half = half.sqrt();
                    scatter(
                        (s * cos_t, s * sin_t),
                        (-sin_t, cos_t),
                        -half,
                        half,
                        sino[j * g.detector_count + i],
                    );
                }
            }
        }
        BeamMode::FanFlat => {
            let r_so = g.source_to_center;
            for j in 0..g.view_count {
                let beta = g.view_angle(j);
                let (sin_b, cos_b) = beta.sin_cos();
                let src = (r_so * cos_b, r_so * sin_b);
                for i in 0..g.detector_count {
                    let gamma = g.fan_angle(i);
                    let ang = beta + gamma;
                    let dir = (-ang.cos(), -ang.sin());
                    let b_half = src.0 * dir.0 + src.1 * dir.1;
                    let disc = b_half * b_half - (r_so * r_so - rb * rb);
                    if disc <= 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    scatter(
                        src,
                        dir,
                        -b_half - sq,
                        -b_half + sq,
                        sino[j * g.detector_count + i],
                    );
                }
            }
        }
    }
    img
}

/// Radon transform of every slice of `img` under geometry `g`.
///
/// Output dims are `(D, view_count, detector_count)`; samples carry
/// `mm * attenuation` units.
pub fn forward_project(img: &ImageVolume, g: &ScanGeometry) -> Result<ProjectionVolume> {
    g.check_image(img)?;
    let dims = Dims::new(img.dims.d, g.view_count, g.detector_count);
    let plane = g.view_count * g.detector_count;
    let mut data = vec![0.0f32; dims.len()];
    data.par_chunks_mut(plane)
        .zip((0..img.dims.d).into_par_iter())
        .for_each(|(out, z)| {
            let slice: Vec<f64> = img.slice(z).iter().map(|&v| v as f64).collect();
            let sino = project_slice_f64(&slice, g);
            for (o, s) in out.iter_mut().zip(&sino) {
                *o = *s as f32;
            }
        });
    let mut p = ProjectionVolume::new(dims, data)?;
    p.spacing = [img.spacing[0], g.view_spacing(), g.detector_pitch];
    p.geometry = Some(g.clone());
    Ok(p)
}

// ---------------------------------------------------------------------------
// Filtered backprojection
// ---------------------------------------------------------------------------

/// Ramp filter flavor used by [`fbp_reconstruct_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbpFilter {
    RamLak,
    Hann,
}

/// Frequency response of the band-limited ramp on a length-`m` grid with
/// sample spacing `ds`, built from the space-domain Ram-Lak kernel.
fn ramp_response(m: usize, ds: f64, filter: FbpFilter) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); m];
    kernel[0].re = 1.0 / (4.0 * ds * ds);
    let mut n = 1usize;
    while n <= m / 2 {
        if n % 2 == 1 {
            let v = -1.0 / (PI * PI * n as f64 * n as f64 * ds * ds);
            kernel[n].re = v;
            kernel[m - n].re = v;
        }
        n += 1;
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut kernel);
    let mut resp: Vec<f64> = kernel.iter().map(|c| c.re).collect();
    if filter == FbpFilter::Hann {
        for (k, r) in resp.iter_mut().enumerate() {
            let f = if k <= m / 2 { k as f64 } else { (m - k) as f64 } / (m as f64 / 2.0);
            *r *= 0.5 * (1.0 + (PI * f).cos());
        }
    }
    resp
}

fn next_pow2(mut n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    n = p;
    n
}

/// Ramp-filter each row of a (views x dets) f64 sinogram slice in place,
/// returning filtered rows. `ds` is the detector sample spacing.
fn filter_rows(rows: &mut [f64], views: usize, dets: usize, ds: f64, filter: FbpFilter) {
    let m = next_pow2(2 * dets);
    let resp = ramp_response(m, ds, filter);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    for j in 0..views {
        let row = &mut rows[j * dets..(j + 1) * dets];
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (c, &v) in buf.iter_mut().zip(row.iter()) {
            c.re = v;
        }
        fwd.process(&mut buf);
        for (c, &r) in buf.iter_mut().zip(&resp) {
            *c *= r;
        }
        inv.process(&mut buf);
        let scale = ds / m as f64;
        for (o, c) in row.iter_mut().zip(&buf) {
            *o = c.re * scale;
        }
    }
}

#[inline]
fn interp_row(row: &[f64], idx: f64) -> f64 {
    if idx <= -1.0 || idx >= row.len() as f64 {
        return 0.0;
    }
    let i0 = idx.floor();
    let f = idx - i0;
    let i0 = i0 as isize;
    let a = if i0 < 0 { 0.0 } else { row[i0 as usize] };
    let b = if i0 + 1 >= row.len() as isize {
        0.0
    } else {
        row[(i0 + 1) as usize]
    };
    a * (1.0 - f) + b * f
}

fn fbp_slice(sino: &[f32], g: &ScanGeometry, filter: FbpFilter) -> Vec<f64> {
    let views = g.view_count;
    let dets = g.detector_count;
    let (h, w) = g.image_size;
    let px = g.pixel_pitch;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut img = vec![0.0f64; h * w];

    match g.mode {
        BeamMode::Parallel => {
            let ds = g.detector_pitch;
            let mut rows: Vec<f64> = sino.iter().map(|&v| v as f64).collect();
            filter_rows(&mut rows, views, dets, ds, filter);
            let det_center = (dets as f64 - 1.0) / 2.0;
            let weight = PI / views as f64;
            for j in 0..views {
                let theta = g.view_angle(j);
                let (sin_t, cos_t) = theta.sin_cos();
                let row = &rows[j * dets..(j + 1) * dets];
                for r in 0..h {
                    let y = (r as f64 - cy) * px;
                    let mut s = (0.0 - cx) * px * cos_t + y * sin_t;
                    let ds_col = cos_t * px;
                    let out_row = &mut img[r * w..(r + 1) * w];
                    for o in out_row.iter_mut() {
                        *o += weight * interp_row(row, s / ds + det_center);
                        s += ds_col;
                    }
                }
            }
        }
        BeamMode::FanFlat => {
            let r_so = g.source_to_center;
            let r_sd = g.source_to_detector();
            // Virtual detector rescaled to the isocenter line.
            let ds = g.detector_pitch * r_so / r_sd;
            let det_center = (dets as f64 - 1.0) / 2.0;
            let mut rows = vec![0.0f64; views * dets];
            for j in 0..views {
                for i in 0..dets {
                    let s = (i as f64 - det_center) * ds;
                    let cosw = r_so / (r_so * r_so + s * s).sqrt();
                    rows[j * dets + i] = sino[j * dets + i] as f64 * cosw;
                }
            }
            filter_rows(&mut rows, views, dets, ds, filter);
            let weight = g.view_spacing() / 2.0;
            for j in 0..views {
                let beta = g.view_angle(j);
                let (sin_b, cos_b) = beta.sin_cos();
                let row = &rows[j * dets..(j + 1) * dets];
                for r in 0..h {
                    let y = (r as f64 - cy) * px;
                    let x0 = (0.0 - cx) * px;
                    // L = distance from source along the central ray,
                    // lat = signed lateral offset; both linear in x.
                    let mut l = r_so - x0 * cos_b - y * sin_b;
                    let mut lat = y * cos_b - x0 * sin_b;
                    let dl = -cos_b * px;
                    let dlat = -sin_b * px;
                    let out_row = &mut img[r * w..(r + 1) * w];
                    for o in out_row.iter_mut() {
                        let s_p = -r_so * lat / l;
                        let u = r_so / l;
                        *o += weight * u * u * interp_row(row, s_p / ds + det_center);
                        l += dl;
                        lat += dlat;
                    }
                }
            }
        }
    }
    img
}

/// Per-slice filtered backprojection.
///
/// Parallel mode: Ram-Lak (optionally Hann-apodized) filtering plus
/// unweighted backprojection. Fan mode: cosine pre-weighting on the virtual
/// isocenter detector, ramp filtering, distance-weighted backprojection.
pub fn fbp_reconstruct_with(
    p: &ProjectionVolume,
    g: &ScanGeometry,
    filter: FbpFilter,
) -> Result<ImageVolume> {
    g.check_sinogram(p)?;
    let (h, w) = g.image_size;
    let dims = Dims::new(p.dims.d, h, w);
    let plane_in = p.dims.h * p.dims.w;
    let plane_out = h * w;
    let mut data = vec![0.0f32; dims.len()];
    data.par_chunks_mut(plane_out)
        .zip(p.data.par_chunks(plane_in))
        .for_each(|(out, sino)| {
            let img = fbp_slice(sino, g, filter);
            for (o, v) in out.iter_mut().zip(&img) {
                *o = *v as f32;
            }
        });
    let mut img = ImageVolume::new(dims, data)?;
    img.spacing = [p.spacing[0], g.pixel_pitch, g.pixel_pitch];
    Ok(img)
}

/// [`fbp_reconstruct_with`] using the default Ram-Lak filter.
pub fn fbp_reconstruct(p: &ProjectionVolume, g: &ScanGeometry) -> Result<ImageVolume> {
    fbp_reconstruct_with(p, g, FbpFilter::RamLak)
}

// ---------------------------------------------------------------------------
// Conjugate-ray index
// ---------------------------------------------------------------------------

/// Conjugate partner of one (view, detector) sample.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateEntry {
    pub view: u32,
    pub det: u32,
    /// Angular distance from the exact conjugate view to the snapped one.
    pub snap_error: f32,
}

/// Lookup table mapping every (view, detector) pair to the sample that
/// measures the same physical line on the opposite side of the scan.
#[derive(Debug, Clone)]
pub struct ConjugateIndex {
    pub mode: BeamMode,
    pub view_count: usize,
    pub detector_count: usize,
    pub view_spacing: f64,
    entries: Vec<ConjugateEntry>,
}

impl ConjugateIndex {
    #[inline]
    pub fn get(&self, view: usize, det: usize) -> ConjugateEntry {
        self.entries[view * self.detector_count + det]
    }

    /// Whether the snapped conjugate is within `tolerance` radians of the
    /// exact one.
    #[inline]
    pub fn usable(&self, view: usize, det: usize, tolerance: f64) -> bool {
        (self.get(view, det).snap_error as f64) <= tolerance
    }
}

/// Build the conjugate index for `g`.
///
/// Parallel: `(theta, s) -> (theta + pi, -s)`. Fan: the ray at fan angle
/// `gamma` reappears at view `beta + pi + 2 gamma` on the mirrored detector
/// cell; the view is snapped to the nearest sampled angle and the residual
/// is recorded per entry.
pub fn conjugate_index(g: &ScanGeometry) -> Result<ConjugateIndex> {
    g.validate()?;
    let v = g.view_count;
    let n = g.detector_count;
    let spacing = g.view_spacing();
    let mut entries = Vec::with_capacity(v * n);
    for j in 0..v {
        for i in 0..n {
            let target = match g.mode {
                BeamMode::Parallel => g.view_angle(j) + PI,
                BeamMode::FanFlat => g.view_angle(j) + PI + 2.0 * g.fan_angle(i),
            };
            let steps = target / spacing;
            let snapped = steps.round();
            let err = ((steps - snapped) * spacing).abs();
            let jp = (snapped as i64).rem_euclid(v as i64) as u32;
            entries.push(ConjugateEntry {
                view: jp,
                det: (n - 1 - i) as u32,
                snap_error: err as f32,
            });
        }
    }
    Ok(ConjugateIndex {
        mode: g.mode,
        view_count: v,
        detector_count: n,
        view_spacing: spacing,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Operator checks
// ---------------------------------------------------------------------------

/// Max absolute residual of `R{f1+f2} - R{f1} - R{f2}` over all samples,
/// evaluated through the f64 projection core.
pub fn projector_linearity_check(
    f1: &ImageVolume,
    f2: &ImageVolume,
    g: &ScanGeometry,
) -> Result<f64> {
    if f1.dims != f2.dims {
        return Err(ScoutError::Parameter("image dims differ".into()));
    }
    g.check_image(f1)?;
    let residual = (0..f1.dims.d)
        .into_par_iter()
        .map(|z| {
            let a: Vec<f64> = f1.slice(z).iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = f2.slice(z).iter().map(|&v| v as f64).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let pa = project_slice_f64(&a, g);
            let pb = project_slice_f64(&b, g);
            let ps = project_slice_f64(&sum, g);
            ps.iter()
                .zip(pa.iter().zip(&pb))
                .map(|(s, (x, y))| (s - x - y).abs())
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(residual)
}

/// Result of [`slice_similarity_bound`].
#[derive(Debug, Clone)]
pub struct SimilarityBound {
    /// Max over adjacent slice pairs of `|dp|_2 / |df|_2` (0 where `df = 0`).
    pub k_hat: f64,
    /// Power-iteration estimate of the projector operator norm.
    pub k_op: f64,
    /// Per-pair ratios, length `D - 1`.
    pub ratios: Vec<f64>,
}

/// Power-iteration estimate of the slice projector's operator norm,
/// using the exact adjoint. Starts from a constant image, which overlaps
/// the leading singular vector heavily.
pub fn projector_norm_estimate(g: &ScanGeometry, iterations: usize) -> Result<f64> {
    g.validate()?;
    let (h, w) = g.image_size;
    let mut x = vec![1.0f64; h * w];
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        for v in x.iter_mut() {
            *v /= norm;
        }
        let y = project_slice_f64(&x, g);
        sigma = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = backscatter_slice_f64(&y, g);
    }
    Ok(sigma)
}

/// Ratio of projection-domain to image-domain differences between adjacent
/// slices, bounding how much the projector can amplify slice dissimilarity.
pub fn slice_similarity_bound(v: &ImageVolume, g: &ScanGeometry) -> Result<SimilarityBound> {
    if v.dims.d < 2 {
        return Err(ScoutError::Parameter(
            "slice similarity needs at least two slices".into(),
        ));
    }
    g.check_image(v)?;
    let ratios: Vec<f64> = (0..v.dims.d - 1)
        .into_par_iter()
        .map(|z| {
            let a = v.slice(z);
            let b = v.slice(z + 1);
            let df: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| y as f64 - x as f64)
                .collect();
            let nf = df.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nf == 0.0 {
                return 0.0;
            }
            let dp = project_slice_f64(&df, g);
            let np = dp.iter().map(|v| v * v).sum::<f64>().sqrt();
            np / nf
        })
        .collect();
    let k_hat = ratios.iter().copied().fold(0.0f64, f64::max);
    let k_op = projector_norm_estimate(g, 50)?;
    Ok(SimilarityBound {
        k_hat,
        k_op,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    /// Render a centered disk with 4x4 supersampled edges.
    fn disk_image(size: usize, px: f64, radius: f64, value: f32) -> ImageVolume {
        let mut data = vec![0.0f32; size * size];
        let c = (size as f64 - 1.0) / 2.0;
        for r in 0..size {
            for col in 0..size {
                let mut hit = 0u32;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let y = (r as f64 - c + (sy as f64 + 0.5) / 4.0 - 0.5) * px;
                        let x = (col as f64 - c + (sx as f64 + 0.5) / 4.0 - 0.5) * px;
                        if x * x + y * y <= radius * radius {
                            hit += 1;
                        }
                    }
                }
                data[r * size + col] = value * hit as f32 / 16.0;
            }
        }
        ImageVolume::new(Dims::new(1, size, size), data).unwrap()
    }

    fn random_image(size: usize, seed: u64) -> ImageVolume {
        let mut rng = RandomSource::new(seed, 0);
        let data: Vec<f32> = (0..size * size).map(|_| rng.next_f64() as f32).collect();
        ImageVolume::new(Dims::new(1, size, size), data).unwrap()
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let g = ScanGeometry::parallel(16, 32, 1.0, (24, 24), 1.0);
        let img = ImageVolume::zeros(Dims::new(2, 24, 24));
        let p = forward_project(&img, &g).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_profile_matches_chord_length() {
        let size = 128;
        let px = 1.0;
        let radius = 40.0;
        let g = ScanGeometry::parallel(8, 121, 1.0, (size, size), px);
        let img = disk_image(size, px, radius, 1.0);
        let p = forward_project(&img, &g).unwrap();
        for j in 0..g.view_count {
            for i in 0..g.detector_count {
                let s = g.detector_pos(i);
                if s.abs() >= 0.9 * radius {
                    continue;
                }
                let expect = 2.0 * (radius * radius - s * s).sqrt();
                let got = p.at(0, j, i) as f64;
                assert!(
                    (got - expect).abs() <= 0.01 * expect,
                    "view {j} det {i}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn off_center_disk_traces_a_sinusoid() {
        let size = 96;
        let px = 1.0;
        let (x0, y0, radius) = (18.0, -11.0, 7.5);
        let mut data = vec![0.0f32; size * size];
        let c = (size as f64 - 1.0) / 2.0;
        for r in 0..size {
            for col in 0..size {
                let y = (r as f64 - c) * px;
                let x = (col as f64 - c) * px;
                if (x - x0).powi(2) + (y - y0).powi(2) <= radius * radius {
                    data[r * size + col] = 1.0;
                }
            }
        }
        let img = ImageVolume::new(Dims::new(1, size, size), data).unwrap();
        let g = ScanGeometry::parallel(48, 97, 1.0, (size, size), px);
        let p = forward_project(&img, &g).unwrap();
        for j in 0..g.view_count {
            let theta = g.view_angle(j);
            let expect_s = x0 * theta.cos() + y0 * theta.sin();
            let row: Vec<f64> = (0..g.detector_count)
                .map(|i| p.at(0, j, i) as f64)
                .collect();
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let got_s = g.detector_pos(peak);
            assert!(
                (got_s - expect_s).abs() <= g.detector_pitch,
                "view {j}: peak at {got_s}, expected {expect_s}"
            );
        }
    }

    #[test]
    fn linearity_residual_is_tiny() {
        let g = ScanGeometry::parallel(24, 96, 1.0, (64, 64), 1.0);
        let f1 = random_image(64, 3);
        let f2 = random_image(64, 4);
        let sum_img = {
            let data: Vec<f32> = f1
                .data
                .iter()
                .zip(&f2.data)
                .map(|(a, b)| a + b)
                .collect();
            ImageVolume::new(f1.dims, data).unwrap()
        };
        let res = projector_linearity_check(&f1, &f2, &g).unwrap();
        let mag = forward_project(&sum_img, &g).unwrap().max_abs() as f64;
        assert!(res <= 1e-9 * mag, "residual {res}, magnitude {mag}");
    }

    #[test]
    fn linearity_zero_and_doubling() {
        let g = ScanGeometry::parallel(12, 48, 1.0, (32, 32), 1.0);
        let f1 = random_image(32, 9);
        let zero = ImageVolume::zeros(f1.dims);
        let res = projector_linearity_check(&f1, &zero, &g).unwrap();
        assert_eq!(res, 0.0);
        // Homogeneity: R{2 f} = 2 R{f} via f2 = f1.
        let res2 = projector_linearity_check(&f1, &f1, &g).unwrap();
        let mag = forward_project(&f1, &g).unwrap().max_abs() as f64;
        assert!(res2 <= 1e-9 * (2.0 * mag));
    }

    #[test]
    fn parallel_conjugate_index_is_exact_flip() {
        let g = ScanGeometry::parallel(720, 720, 1.0, (256, 256), 1.0);
        let ci = conjugate_index(&g).unwrap();
        let e = ci.get(0, 0);
        assert_eq!(e.view, 360);
        assert_eq!(e.det, 719);
        assert_eq!(e.snap_error, 0.0);
        for j in (0..720).step_by(37) {
            for i in (0..720).step_by(41) {
                let e = ci.get(j, i);
                let back = ci.get(e.view as usize, e.det as usize);
                assert_eq!(back.view as usize, j);
                assert_eq!(back.det as usize, i);
            }
        }
    }

    #[test]
    fn fan_conjugate_index_is_involution_and_within_snap() {
        let g = ScanGeometry::fan_flat(720, 360, 2.0, 1361.2, 615.18, (128, 128), 1.0);
        let ci = conjugate_index(&g).unwrap();
        let half = g.view_spacing() / 2.0;
        for j in (0..720).step_by(53) {
            for i in 0..360 {
                let e = ci.get(j, i);
                assert!((e.snap_error as f64) <= half + 1e-12);
                let back = ci.get(e.view as usize, e.det as usize);
                assert_eq!(back.view as usize, j, "view {j} det {i}");
                assert_eq!(back.det as usize, i);
            }
        }
    }

    #[test]
    fn parallel_conjugate_samples_agree_on_noiseless_disk() {
        let size = 64;
        let g = ScanGeometry::parallel(90, 65, 1.0, (size, size), 1.0);
        let mut img = disk_image(size, 1.0, 20.0, 1.0);
        // Break symmetry so the test is not trivially satisfied by s -> -s.
        let c = (size as f64 - 1.0) / 2.0;
        for r in 0..size {
            for col in 0..size {
                let y = (r as f64 - c) * 1.0;
                let x = (col as f64 - c) * 1.0;
                if (x - 8.0).powi(2) + (y - 5.0).powi(2) <= 36.0 {
                    img.data[r * size + col] += 0.5;
                }
            }
        }
        let p = forward_project(&img, &g).unwrap();
        let ci = conjugate_index(&g).unwrap();
        let max_p = p.max_abs() as f64;
        let mut worst = 0.0f64;
        for j in 0..g.view_count {
            for i in 0..g.detector_count {
                let e = ci.get(j, i);
                let d = (p.at(0, j, i) - p.at(0, e.view as usize, e.det as usize)).abs() as f64;
                worst = worst.max(d);
            }
        }
        assert!(worst <= 1e-3 * max_p, "worst {worst}, max {max_p}");
    }

    #[test]
    fn fbp_round_trip_recovers_disk_value() {
        let size = 96;
        let px = 1.0;
        let img = disk_image(size, px, 30.0, 0.02);
        for g in [
            ScanGeometry::parallel(180, 129, 1.0, (size, size), px),
            ScanGeometry::fan_flat(360, 181, 1.2, 500.0, 250.0, (size, size), px),
        ] {
            let p = forward_project(&img, &g).unwrap();
            let rec = fbp_reconstruct(&p, &g).unwrap();
            let center = rec.at(0, size / 2, size / 2) as f64;
            assert!(
                (center - 0.02).abs() <= 0.02 * 0.05,
                "{:?}: center {center}",
                g.mode
            );
            // Value well outside the disk stays near zero.
            let edge = rec.at(0, size / 2, 4) as f64;
            assert!(edge.abs() < 0.02 * 0.05, "{:?}: edge {edge}", g.mode);
        }
    }

    #[test]
    fn fbp_zero_sinogram_gives_zero_image() {
        let g = ScanGeometry::parallel(32, 48, 1.0, (32, 32), 1.0);
        let p = ProjectionVolume::zeros(Dims::new(2, 32, 48));
        let rec = fbp_reconstruct(&p, &g).unwrap();
        assert!(rec.data.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn fbp_is_homogeneous() {
        let size = 48;
        let g = ScanGeometry::parallel(60, 65, 1.0, (size, size), 1.0);
        let img = disk_image(size, 1.0, 15.0, 1.0);
        let p = forward_project(&img, &g).unwrap();
        let doubled = {
            let mut q = p.clone();
            for v in q.data.iter_mut() {
                *v *= 2.0;
            }
            q
        };
        let r1 = fbp_reconstruct(&p, &g).unwrap();
        let r2 = fbp_reconstruct(&doubled, &g).unwrap();
        let max = r1.data.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        for (a, b) in r1.data.iter().zip(&r2.data) {
            assert!(((2.0 * a - b).abs() as f64) <= 1e-6 * max.max(1e-30));
        }
    }

    #[test]
    fn adjoint_matches_forward_inner_product() {
        let g = ScanGeometry::parallel(12, 24, 1.5, (16, 16), 1.0);
        let mut rng = RandomSource::new(21, 0);
        let x: Vec<f64> = (0..256).map(|_| rng.next_f64()).collect();
        let y: Vec<f64> = (0..12 * 24).map(|_| rng.next_f64()).collect();
        let ax = project_slice_f64(&x, &g);
        let aty = backscatter_slice_f64(&y, &g);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn duplicated_slices_give_zero_ratio() {
        let size = 32;
        let g = ScanGeometry::parallel(24, 48, 1.0, (size, size), 1.0);
        let one = random_image(size, 5);
        let mut data = one.data.clone();
        data.extend_from_slice(&one.data);
        let v = ImageVolume::new(Dims::new(2, size, size), data).unwrap();
        let b = slice_similarity_bound(&v, &g).unwrap();
        assert_eq!(b.ratios[0], 0.0);
        assert_eq!(b.k_hat, 0.0);
    }

    #[test]
    fn single_voxel_difference_matches_footprint_norm() {
        let size = 32;
        let g = ScanGeometry::parallel(24, 48, 1.0, (size, size), 1.0);
        let base = random_image(size, 6);
        let mut second = base.data.clone();
        second[17 * size + 9] += 1.0;
        let mut data = base.data.clone();
        data.extend_from_slice(&second);
        let v = ImageVolume::new(Dims::new(2, size, size), data).unwrap();
        let b = slice_similarity_bound(&v, &g).unwrap();
        // Oracle: project the single-voxel image directly.
        let mut delta = vec![0.0f64; size * size];
        delta[17 * size + 9] = 1.0;
        let foot = project_slice_f64(&delta, &g);
        let nf: f64 = 1.0;
        let np = foot.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            (b.ratios[0] - np / nf).abs() <= 1e-9 * np.max(1.0),
            "{} vs {}",
            b.ratios[0],
            np
        );
    }

    #[test]
    fn random_slices_stay_below_norm_bound() {
        let size = 32;
        let g = ScanGeometry::parallel(24, 48, 1.0, (size, size), 1.0);
        let a = random_image(size, 7);
        let b = random_image(size, 8);
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        let v = ImageVolume::new(Dims::new(2, size, size), data).unwrap();
        let bound = slice_similarity_bound(&v, &g).unwrap();
        assert!(
            bound.k_hat <= bound.k_op * (1.0 + 1e-6),
            "k_hat {} k_op {}",
            bound.k_hat,
            bound.k_op
        );
    }

    #[test]
    fn similarity_bound_rejects_single_slice() {
        let g = ScanGeometry::parallel(8, 16, 1.0, (8, 8), 1.0);
        let v = ImageVolume::zeros(Dims::new(1, 8, 8));
        assert!(matches!(
            slice_similarity_bound(&v, &g),
            Err(ScoutError::Parameter(_))
        ));
    }

    #[test]
    fn geometry_mismatch_is_a_parameter_error() {
        let g = ScanGeometry::parallel(8, 16, 1.0, (8, 8), 1.0);
        let img = ImageVolume::zeros(Dims::new(1, 12, 12));
        assert!(matches!(
            forward_project(&img, &g),
            Err(ScoutError::Parameter(_))
        ));
        let p = ProjectionVolume::zeros(Dims::new(1, 9, 16));
        assert!(matches!(
            fbp_reconstruct(&p, &g),
            Err(ScoutError::Parameter(_))
        ));
    }

    #[test]
    fn fan_geometry_must_cover_support() {
        // 20 tiny detectors cannot cover a 128 mm image support.
        let g = ScanGeometry::fan_flat(90, 20, 0.5, 500.0, 250.0, (128, 128), 1.0);
        assert!(matches!(g.validate(), Err(ScoutError::Parameter(_))));
    }

    #[test]
    fn geometry_header_round_trips_through_json() {
        let g = ScanGeometry::fan_flat(1440, 720, 1.0, 1361.2, 615.18, (512, 512), 0.75);
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"views\":1440"));
        assert!(s.contains("\"r_so_mm\":1361.2"));
        let back: ScanGeometry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}

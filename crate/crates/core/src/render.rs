//! Forward splatting: EWA projection of each Gaussian to a 2D splat and
//! front-to-back alpha compositing in depth order.
//!
//! The tiled renderer and the brute-force reference share projection and
//! the per-pixel compositing rule; they differ only in traversal (tiles vs.
//! every splat for every pixel) and in the early-out thresholds.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::{camera_jacobian, CameraExtrinsics, CameraIntrinsics, NEAR_PLANE};
use crate::error::{invalid, Result};
use crate::gaussian::{covariance_from, sigmoid, GaussianScene};
use crate::image::Image;
use crate::sh;

/// Added to the diagonal of every 2D covariance before inversion (px^2).
pub const LOW_PASS: f64 = 0.3;
pub const DEFAULT_MIN_ALPHA: f64 = 1.0 / 255.0;
pub const DEFAULT_MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub background: Vector3<f64>,
    /// Mahalanobis radius beyond which a splat does not touch a pixel.
    pub cutoff_sigma: f64,
    pub tile_size: usize,
    pub retain_contributors: bool,
    /// Contributions with `alpha * G` below this are skipped.
    pub min_alpha: f64,
    /// Traversal stops once transmittance falls below this.
    pub min_transmittance: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: Vector3::repeat(1.0),
            cutoff_sigma: 3.0,
            tile_size: 16,
            retain_contributors: false,
            min_alpha: DEFAULT_MIN_ALPHA,
            min_transmittance: DEFAULT_MIN_TRANSMITTANCE,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_sigma > 0.0) {
            return Err(invalid("cutoff_sigma must be positive"));
        }
        if self.tile_size == 0 {
            return Err(invalid("tile_size must be at least 1"));
        }
        if !(self.min_alpha >= 0.0 && self.min_transmittance >= 0.0) {
            return Err(invalid("compositing thresholds must be non-negative"));
        }
        Ok(())
    }

    /// Same configuration with both early-out thresholds disabled.
    pub fn exact(&self) -> Self {
        Self { min_alpha: 0.0, min_transmittance: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub center: Vector2<f64>,
    /// Screen covariance including the low-pass floor.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub source_index: usize,
}

/// One compositing term at a pixel, front to back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor {
    pub source_index: u32,
    /// Gaussian falloff `G` at the pixel.
    pub g: f64,
    /// Transmittance before this term.
    pub transmittance: f64,
}

/// Per-pixel contributor lists, flattened in row-major pixel order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContributorRecords {
    offsets: Vec<usize>,
    entries: Vec<Contributor>,
}

impl ContributorRecords {
    pub fn pixel(&self, p: usize) -> &[Contributor] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub alpha: Vec<f64>,
    pub contributors: Option<ContributorRecords>,
}

/// Intermediate quantities of one projection, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    pub cam_point: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov3d: Matrix3<f64>,
    pub unit_quat: Vector4<f64>,
    pub quat_norm: f64,
    pub scale: Vector3<f64>,
    pub sh_basis: [f64; 16],
    pub raw_color: Vector3<f64>,
    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` of the footprint.
    pub bbox: (usize, usize, usize, usize),
}

pub(crate) fn project_full(
    index: usize,
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    cutoff_sigma: f64,
) -> Option<Projection> {
    let mean = scene.positions[index];
    let t = extrinsics.to_camera(&mean);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let f = intrinsics.focal();
    let center = Vector2::new(f * t.x / t.z, f * t.y / t.z) + intrinsics.principal_point();

    let q = scene.rotations[index];
    let quat_norm = q.norm();
    let unit_quat = q / quat_norm;
    let scale = scene.scale(index);
    let cov3d = covariance_from(&unit_quat, &scale).ok()?;

    let jacobian = camera_jacobian(&t, f);
    let tm = jacobian * extrinsics.rotation;
    let mut cov2d = tm * cov3d * tm.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let conic = cov2d.try_inverse()?;

    let bbox = footprint(&center, &cov2d, cutoff_sigma, intrinsics)?;

    let view_dir = (mean - extrinsics.center()).normalize();
    let sh_basis = sh::basis(&view_dir, scene.sh_degree);
    let raw_color = sh::raw_color(scene.sh(index), &sh_basis, scene.sh_degree);
    let splat = Splat2D {
        center,
        cov2d,
        conic,
        depth: t.z,
        color: raw_color.map(|v| v.clamp(0.0, 1.0)),
        opacity: sigmoid(scene.opacity_logits[index]),
        source_index: index,
    };
    Some(Projection {
        splat,
        cam_point: t,
        jacobian,
        cov3d,
        unit_quat,
        quat_norm,
        scale,
        sh_basis,
        raw_color,
        bbox,
    })
}

/// Pixel range whose centers can lie inside the cutoff ellipse, or `None`
/// when that range misses the image.
fn footprint(
    center: &Vector2<f64>,
    cov2d: &Matrix2<f64>,
    cutoff_sigma: f64,
    intrinsics: &CameraIntrinsics,
) -> Option<(usize, usize, usize, usize)> {
    let rx = cutoff_sigma * cov2d[(0, 0)].sqrt();
    let ry = cutoff_sigma * cov2d[(1, 1)].sqrt();
    let x0 = (center.x - rx - 0.5).ceil().max(0.0);
    let x1 = (center.x + rx - 0.5).floor().min(intrinsics.width as f64 - 1.0);
    let y0 = (center.y - ry - 0.5).ceil().max(0.0);
    let y1 = (center.y + ry - 0.5).floor().min(intrinsics.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Projects Gaussian `index` to a screen-space splat, or `None` if it is
/// culled (behind the near plane or footprint outside the image).
pub fn project_gaussian(
    index: usize,
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Option<Splat2D> {
    project_full(index, scene, extrinsics, intrinsics, config.cutoff_sigma).map(|p| p.splat)
}

pub(crate) fn project_all(
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Vec<Option<Projection>> {
    (0..scene.len())
        .map(|i| project_full(i, scene, extrinsics, intrinsics, config.cutoff_sigma))
        .collect()
}

/// Indices of visible projections, ascending depth with index tie-break.
pub(crate) fn depth_order(projections: &[Option<Projection>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..projections.len()).filter(|&i| projections[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let da = projections[a].as_ref().map(|p| p.splat.depth).unwrap_or(0.0);
        let db = projections[b].as_ref().map(|p| p.splat.depth).unwrap_or(0.0);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Thresholds {
    pub cutoff2: f64,
    pub min_alpha: f64,
    pub min_transmittance: f64,
}

impl Thresholds {
    pub fn of(config: &RenderConfig) -> Self {
        Self {
            cutoff2: config.cutoff_sigma * config.cutoff_sigma,
            min_alpha: config.min_alpha,
            min_transmittance: config.min_transmittance,
        }
    }
}

/// Falloff of a splat at `pixel`, or `None` outside the cutoff ellipse.
#[inline]
pub(crate) fn falloff(splat: &Splat2D, pixel: &Vector2<f64>, cutoff2: f64) -> Option<f64> {
    let dx = pixel.x - splat.center.x;
    let dy = pixel.y - splat.center.y;
    let q = &splat.conic;
    let m = q[(0, 0)] * dx * dx + 2.0 * q[(0, 1)] * dx * dy + q[(1, 1)] * dy * dy;
    (m <= cutoff2).then(|| (-0.5 * m).exp())
}

/// Composites depth-ordered splats at one pixel. Returns `(rgb, alpha)` and
/// appends the accepted terms to `records` when given.
#[inline]
pub(crate) fn composite<'a>(
    splats: impl Iterator<Item = &'a Splat2D>,
    pixel: &Vector2<f64>,
    background: &Vector3<f64>,
    th: Thresholds,
    mut records: Option<&mut Vec<Contributor>>,
) -> (Vector3<f64>, f64) {
    let mut color = Vector3::zeros();
    let mut t = 1.0;
    for s in splats {
        let Some(g) = falloff(s, pixel, th.cutoff2) else { continue };
        let a = s.opacity * g;
        if a < th.min_alpha || a == 0.0 {
            continue;
        }
        if let Some(r) = records.as_deref_mut() {
            r.push(Contributor { source_index: s.source_index as u32, g, transmittance: t });
        }
        color += s.color * (a * t);
        t *= 1.0 - a;
        if t < th.min_transmittance {
            break;
        }
    }
    (color + background * t, 1.0 - t)
}

/// Result of compositing a single pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelResult {
    pub rgb: Vector3<f64>,
    pub alpha: f64,
    pub contributors: Vec<Contributor>,
}

/// Composites `splats` (ascending depth) at `pixel` over the background,
/// using the thresholds of `config`.
pub fn composite_pixel(splats: &[Splat2D], pixel: Vector2<f64>, config: &RenderConfig) -> PixelResult {
    let mut contributors = Vec::new();
    let (rgb, alpha) = composite(
        splats.iter(),
        &pixel,
        &config.background,
        Thresholds::of(config),
        Some(&mut contributors),
    );
    PixelResult { rgb, alpha, contributors }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Tile {
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}

/// Splits the image into tiles and lists, per tile, the depth-ordered
/// splats whose footprint overlaps it.
pub(crate) fn bin_tiles(
    projections: &[Option<Projection>],
    order: &[usize],
    intrinsics: &CameraIntrinsics,
    tile_size: usize,
) -> (Vec<Tile>, Vec<Vec<usize>>) {
    let tiles_x = intrinsics.width.div_ceil(tile_size);
    let tiles_y = intrinsics.height.div_ceil(tile_size);
    let mut tiles = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            tiles.push(Tile {
                x0: tx * tile_size,
                y0: ty * tile_size,
                x1: ((tx + 1) * tile_size).min(intrinsics.width),
                y1: ((ty + 1) * tile_size).min(intrinsics.height),
            });
        }
    }
    let mut lists = vec![Vec::new(); tiles.len()];
    for &i in order {
        let (x0, y0, x1, y1) = projections[i].as_ref().expect("ordered splats are visible").bbox;
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                lists[ty * tiles_x + tx].push(i);
            }
        }
    }
    (tiles, lists)
}

pub(crate) fn pixel_center(x: usize, y: usize) -> Vector2<f64> {
    Vector2::new(x as f64 + 0.5, y as f64 + 0.5)
}

fn check_inputs(scene: &GaussianScene, intrinsics: &CameraIntrinsics, config: &RenderConfig) -> Result<()> {
    intrinsics.validate()?;
    config.validate()?;
    let n = scene.len();
    if scene.rotations.len() != n
        || scene.log_scales.len() != n
        || scene.opacity_logits.len() != n
        || scene.sh_coeffs.len() != n * scene.coeffs_per_gaussian()
        || scene.sh_degree > sh::MAX_SH_DEGREE
    {
        return Err(invalid("scene parameter arrays have inconsistent lengths"));
    }
    Ok(())
}

struct TileResult {
    rgb: Vec<f64>,
    alpha: Vec<f64>,
    counts: Vec<usize>,
    records: Vec<Contributor>,
}

/// Tiled renderer. Output is independent of tile size and of the storage
/// order of the Gaussians.
pub fn render(
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    check_inputs(scene, intrinsics, config)?;
    let projections = project_all(scene, extrinsics, intrinsics, config);
    let order = depth_order(&projections);
    let (tiles, lists) = bin_tiles(&projections, &order, intrinsics, config.tile_size);
    let th = Thresholds::of(config);
    let keep = config.retain_contributors;

    let results: Vec<TileResult> = tiles
        .par_iter()
        .zip(lists.par_iter())
        .map(|(tile, list)| {
            let splats: Vec<&Splat2D> = list
                .iter()
                .map(|&i| &projections[i].as_ref().expect("binned splats are visible").splat)
                .collect();
            let n = (tile.x1 - tile.x0) * (tile.y1 - tile.y0);
            let mut out = TileResult {
                rgb: Vec::with_capacity(n * 3),
                alpha: Vec::with_capacity(n),
                counts: Vec::with_capacity(if keep { n } else { 0 }),
                records: Vec::new(),
            };
            for (x, y) in tile.pixels() {
                let before = out.records.len();
                let (c, a) = composite(
                    splats.iter().copied(),
                    &pixel_center(x, y),
                    &config.background,
                    th,
                    keep.then_some(&mut out.records),
                );
                out.rgb.extend_from_slice(c.as_slice());
                out.alpha.push(a);
                if keep {
                    out.counts.push(out.records.len() - before);
                }
            }
            out
        })
        .collect();

    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut rgb = vec![0.0; w * h * 3];
    let mut alpha = vec![0.0; w * h];
    let mut counts = if keep { vec![0usize; w * h] } else { Vec::new() };
    for (tile, res) in tiles.iter().zip(&results) {
        for (k, (x, y)) in tile.pixels().enumerate() {
            let p = y * w + x;
            rgb[p * 3..p * 3 + 3].copy_from_slice(&res.rgb[k * 3..k * 3 + 3]);
            alpha[p] = res.alpha[k];
            if keep {
                counts[p] = res.counts[k];
            }
        }
    }
    let contributors = keep.then(|| {
        let mut offsets = Vec::with_capacity(w * h + 1);
        offsets.push(0);
        for &c in &counts {
            offsets.push(offsets.last().copied().unwrap_or(0) + c);
        }
        let mut entries = vec![Contributor { source_index: 0, g: 0.0, transmittance: 0.0 }; offsets[w * h]];
        for (tile, res) in tiles.iter().zip(&results) {
            let mut cursor = 0;
            for (k, (x, y)) in tile.pixels().enumerate() {
                let p = y * w + x;
                let c = res.counts[k];
                entries[offsets[p]..offsets[p] + c].copy_from_slice(&res.records[cursor..cursor + c]);
                cursor += c;
            }
        }
        ContributorRecords { offsets, entries }
    });

    Ok(RenderOutput { rgb: Image::from_vec(w, h, rgb)?, alpha, contributors })
}

/// Brute-force oracle: every visible splat is tested at every pixel, with no
/// tiling and no early-out thresholds.
pub fn render_reference(
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    check_inputs(scene, intrinsics, config)?;
    let projections = project_all(scene, extrinsics, intrinsics, config);
    let order = depth_order(&projections);
    let splats: Vec<&Splat2D> = order
        .iter()
        .map(|&i| &projections[i].as_ref().expect("ordered splats are visible").splat)
        .collect();
    let th = Thresholds { cutoff2: config.cutoff_sigma * config.cutoff_sigma, min_alpha: 0.0, min_transmittance: 0.0 };
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut rgb = Image::new(w, h);
    let mut alpha = vec![0.0; w * h];
    let mut offsets = vec![0];
    let mut entries = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let records = config.retain_contributors.then_some(&mut entries);
            let (c, a) = composite(splats.iter().copied(), &pixel_center(x, y), &config.background, th, records);
            rgb.set(x, y, [c.x, c.y, c.z]);
            alpha[y * w + x] = a;
            offsets.push(entries.len());
        }
    }
    let contributors = config.retain_contributors.then_some(ContributorRecords { offsets, entries });
    Ok(RenderOutput { rgb, alpha, contributors })
}

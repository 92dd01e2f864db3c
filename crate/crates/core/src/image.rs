//! Floating-point RGB rasters.

use crate::error::{invalid, Result};

/// Row-major interleaved RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(invalid(format!(
                "raster of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(invalid(format!(
                "image dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` to each channel value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Image {
        self.map(|v| v * k)
    }

    /// Element-wise `self += k * other`.
    pub fn add_scaled(&mut self, other: &Image, k: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    /// Rec. 601 luma plane.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect()
    }

    /// Bilinear resample to `width`x`height` (pixel-center aligned).
    pub fn resample(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let taps = BilinearTaps::new(self.width, self.height, width, height);
        let mut out = Image::new(width, height);
        for (o, tap) in taps.taps.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(src, w) in tap {
                for c in 0..3 {
                    acc[c] += w * self.data[src * 3 + c];
                }
            }
            out.data[o * 3..o * 3 + 3].copy_from_slice(&acc);
        }
        out
    }

    pub fn squared_distance(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub(crate) const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Precomputed bilinear interpolation weights between two raster sizes.
///
/// Each output pixel lists its (source pixel index, weight) pairs, so the
/// same table serves the forward resample and its transpose.
#[derive(Debug, Clone)]
pub(crate) struct BilinearTaps {
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl BilinearTaps {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Self {
        let axis = |src: usize, dst: usize| -> Vec<[(usize, f64); 2]> {
            (0..dst)
                .map(|o| {
                    let pos = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5)
                        .clamp(0.0, (src - 1) as f64);
                    let i0 = pos.floor() as usize;
                    let i1 = (i0 + 1).min(src - 1);
                    let t = pos - i0 as f64;
                    [(i0, 1.0 - t), (i1, t)]
                })
                .collect()
        };
        let xs = axis(src_w, dst_w);
        let ys = axis(src_h, dst_h);
        let mut taps = Vec::with_capacity(dst_w * dst_h);
        for ty in &ys {
            for tx in &xs {
                let mut tap: Vec<(usize, f64)> = Vec::with_capacity(4);
                for &(sy, wy) in ty {
                    for &(sx, wx) in tx {
                        let w = wx * wy;
                        if w == 0.0 {
                            continue;
                        }
                        let idx = sy * src_w + sx;
                        match tap.iter_mut().find(|(i, _)| *i == idx) {
                            Some(e) => e.1 += w,
                            None => tap.push((idx, w)),
                        }
                    }
                }
                taps.push(tap);
            }
        }
        Self { taps }
    }

    pub fn apply(&self, src: &[f64], dst_len: usize) -> Vec<f64> {
        debug_assert_eq!(dst_len, self.taps.len());
        self.taps
            .iter()
            .map(|tap| tap.iter().map(|&(i, w)| w * src[i]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, d_dst: &[f64], src_len: usize) -> Vec<f64> {
        let mut d_src = vec![0.0; src_len];
        for (tap, &g) in self.taps.iter().zip(d_dst) {
            for &(i, w) in tap {
                d_src[i] += w * g;
            }
        }
        d_src
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_dimensions_and_constant() {
        let img = Image::filled(256, 256, [0.25, 0.5, 0.75]);
        let up = img.resample(512, 512);
        assert_eq!((up.width(), up.height()), (512, 512));
        for p in up.data().chunks_exact(3) {
            assert!((p[0] - 0.25).abs() < 1e-12);
            assert!((p[2] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_same_size_is_identity() {
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| i as f64 / 36.0).collect();
        let img = Image::from_vec(4, 3, data).unwrap();
        assert_eq!(img.resample(4, 3), img);
    }

    #[test]
    fn transpose_is_adjoint() {
        let taps = BilinearTaps::new(5, 4, 9, 7);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..63).map(|i| (i as f64 * 0.11).cos()).collect();
        let ax = taps.apply(&x, 63);
        let aty = taps.apply_transpose(&y, 20);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

//! Edge-feature similarity between a sketch and a rendered view.

use crate::error::{invalid, Result};
use crate::image::{BilinearTaps, Image, LUMA};

use super::{LossReport, LossTerm};

/// A differentiable image embedding.
pub trait FeatureEncoder {
    fn feature_len(&self) -> usize;

    fn encode(&self, image: &Image) -> Result<Vec<f64>>;

    /// Gradient with respect to `image` of `<d_features, encode(image)>`.
    fn backward(&self, image: &Image, d_features: &[f64]) -> Result<Image>;
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Smoothing inside the edge magnitude, `sqrt(gx^2 + gy^2 + d^2) - d`,
/// keeps the magnitude differentiable where the image is flat.
const MAGNITUDE_DELTA: f64 = 1e-3;

/// Luma, Sobel edge magnitude and a 3-level 2x2 average-pooling pyramid at
/// a fixed native resolution. Inputs of other sizes are resampled
/// bilinearly first. Each level is scaled by `1/sqrt(level pixels)` so the
/// levels weigh equally in squared distances.
#[derive(Debug, Clone)]
pub struct EdgePyramidEncoder {
    pub native: usize,
    pub levels: usize,
}

pub fn builtin_encoder() -> EdgePyramidEncoder {
    EdgePyramidEncoder { native: 64, levels: 3 }
}

struct Forward {
    taps: Option<BilinearTaps>,
    luma: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    mag: Vec<f64>,
}

fn clamped(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Sobel responses with replicated borders, normalized by 1/8.
fn sobel(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = clamped(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let xx = clamped(x as isize + kx as isize - 1, w);
                    let v = plane[yy * w + xx];
                    sx += rx[kx] * v;
                    sy += ry[kx] * v;
                }
            }
            gx[y * w + x] = sx / 8.0;
            gy[y * w + x] = sy / 8.0;
        }
    }
    (gx, gy)
}

fn sobel_transpose(dgx: &[f64], dgy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut d = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (ax, ay) = (dgx[y * w + x] / 8.0, dgy[y * w + x] / 8.0);
            for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = clamped(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let xx = clamped(x as isize + kx as isize - 1, w);
                    d[yy * w + xx] += rx[kx] * ax + ry[kx] * ay;
                }
            }
        }
    }
    d
}

fn pool(plane: &[f64], n: usize) -> Vec<f64> {
    let m = n / 2;
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        for x in 0..m {
            let i = 2 * y * n + 2 * x;
            out[y * m + x] = 0.25 * (plane[i] + plane[i + 1] + plane[i + n] + plane[i + n + 1]);
        }
    }
    out
}

fn pool_transpose(d: &[f64], n: usize) -> Vec<f64> {
    let m = n / 2;
    let mut out = vec![0.0; n * n];
    for y in 0..m {
        for x in 0..m {
            let g = 0.25 * d[y * m + x];
            let i = 2 * y * n + 2 * x;
            out[i] += g;
            out[i + 1] += g;
            out[i + n] += g;
            out[i + n + 1] += g;
        }
    }
    out
}

impl EdgePyramidEncoder {
    fn check(&self) -> Result<()> {
        if self.levels == 0 || self.native >> (self.levels - 1) == 0 || self.native % (1 << (self.levels - 1)) != 0 {
            return Err(invalid(format!(
                "native size {} does not support {} pyramid levels",
                self.native, self.levels
            )));
        }
        Ok(())
    }

    fn forward(&self, image: &Image) -> Result<Forward> {
        self.check()?;
        if image.pixel_count() == 0 {
            return Err(invalid("cannot encode an empty image"));
        }
        let n = self.native;
        let src_luma = image.luma();
        let (taps, luma) = if image.width() == n && image.height() == n {
            (None, src_luma)
        } else {
            let taps = BilinearTaps::new(image.width(), image.height(), n, n);
            let luma = taps.apply(&src_luma, n * n);
            (Some(taps), luma)
        };
        let (gx, gy) = sobel(&luma, n, n);
        let mag = gx
            .iter()
            .zip(&gy)
            .map(|(a, b)| (a * a + b * b + MAGNITUDE_DELTA * MAGNITUDE_DELTA).sqrt() - MAGNITUDE_DELTA)
            .collect();
        Ok(Forward { taps, luma, gx, gy, mag })
    }

    fn level_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.levels).map(move |k| self.native >> k)
    }
}

impl FeatureEncoder for EdgePyramidEncoder {
    fn feature_len(&self) -> usize {
        self.level_sizes().map(|s| s * s).sum()
    }

    fn encode(&self, image: &Image) -> Result<Vec<f64>> {
        let fw = self.forward(image)?;
        let mut out = Vec::with_capacity(self.feature_len());
        let mut level = fw.mag;
        for (k, size) in self.level_sizes().enumerate() {
            if k > 0 {
                level = pool(&level, size * 2);
            }
            let norm = 1.0 / size as f64;
            out.extend(level.iter().map(|v| v * norm));
        }
        Ok(out)
    }

    fn backward(&self, image: &Image, d_features: &[f64]) -> Result<Image> {
        if d_features.len() != self.feature_len() {
            return Err(invalid(format!(
                "feature gradient has length {}, encoder produces {}",
                d_features.len(),
                self.feature_len()
            )));
        }
        let fw = self.forward(image)?;
        let sizes: Vec<usize> = self.level_sizes().collect();
        let mut offsets = vec![0];
        for s in &sizes {
            offsets.push(offsets.last().unwrap() + s * s);
        }
        // Walk from the coarsest level back up, folding each level's own
        // gradient into the pooled gradient from below.
        let mut d_level: Vec<f64> = Vec::new();
        for k in (0..sizes.len()).rev() {
            let size = sizes[k];
            let norm = 1.0 / size as f64;
            let own = &d_features[offsets[k]..offsets[k + 1]];
            let mut d: Vec<f64> = own.iter().map(|g| g * norm).collect();
            if k + 1 < sizes.len() {
                for (a, b) in d.iter_mut().zip(pool_transpose(&d_level, size)) {
                    *a += b;
                }
            }
            d_level = d;
        }
        let n = self.native;
        let mut dgx = vec![0.0; n * n];
        let mut dgy = vec![0.0; n * n];
        for i in 0..n * n {
            let r = fw.mag[i] + MAGNITUDE_DELTA;
            dgx[i] = d_level[i] * fw.gx[i] / r;
            dgy[i] = d_level[i] * fw.gy[i] / r;
        }
        let d_luma = sobel_transpose(&dgx, &dgy, n, n);
        debug_assert_eq!(d_luma.len(), fw.luma.len());
        let d_src = match &fw.taps {
            Some(t) => t.apply_transpose(&d_luma, image.pixel_count()),
            None => d_luma,
        };
        let data = d_src.iter().flat_map(|g| LUMA.map(|l| l * g)).collect();
        Image::from_vec(image.width(), image.height(), data)
    }
}

/// `weight * |enc(sketch) - enc(content)|^2` and its gradient in `content`.
pub fn sketch_loss(
    encoder: &dyn FeatureEncoder,
    sketch: &Image,
    content: &Image,
    weight: f64,
) -> Result<LossReport> {
    let fs = encoder.encode(sketch)?;
    let fc = encoder.encode(content)?;
    let diff: Vec<f64> = fc.iter().zip(&fs).map(|(c, s)| c - s).collect();
    let value = weight * diff.iter().map(|d| d * d).sum::<f64>();
    let d_features: Vec<f64> = diff.iter().map(|d| 2.0 * weight * d).collect();
    let d_image = if weight == 0.0 {
        Image::new(content.width(), content.height())
    } else {
        encoder.backward(content, &d_features)?
    };
    Ok(LossReport { value, d_image, term: LossTerm::Sketch })
}

/// Line drawing of an image: dark strokes on white where luma edges are
/// strong, normalized so the strongest edge is black.
pub fn edge_sketch(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    if w * h == 0 {
        return image.clone();
    }
    let (gx, gy) = sobel(&image.luma(), w, h);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let data = mag
        .iter()
        .flat_map(|m| {
            let v = if peak > 0.0 { 1.0 - m / peak } else { 1.0 };
            [v; 3]
        })
        .collect();
    Image::from_vec(w, h, data).expect("sized raster")
}

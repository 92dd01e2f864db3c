//! Image quality metrics on `[0, 1]` RGB images.

use crate::error::{invalid, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean squared error over every channel value.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.squared_distance(b) / a.data().len().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m < 1e-10 { PSNR_CAP } else { -10.0 * m.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5),
/// averaged over every window position fully inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let la = a.luma();
    let lb = b.luma();
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    // Separable filtering: horizontal pass then vertical, of the five moments.
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let moments = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut horiz = vec![0.0; ow * h];
        for y in 0..h {
            for x in 0..ow {
                horiz[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * f(y * w + x + k)).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * horiz[(y + k) * ow + x]).sum();
            }
        }
        out
    };
    let mu_a = moments(&|i| la[i]);
    let mu_b = moments(&|i| lb[i]);
    let aa = moments(&|i| la[i] * la[i]);
    let bb = moments(&|i| lb[i] * lb[i]);
    let ab = moments(&|i| la[i] * lb[i]);

    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (ow * oh) as f64)
}

//! Guidance images: acquisition, per-channel distribution transfer and the
//! providers the training loop refreshes from.
//!
//! Guidance directories hold one 8-bit RGB PNG per schedule pose, named
//! `h_AAA.png` / `v_AAA.png` with `AAA` the zero-padded angle in integer
//! degrees (`h_000.png` ... `v_330.png` for the 30 degree schedule).

use std::path::{Path, PathBuf};

use crate::camera::{orbit_to_extrinsics, CameraIntrinsics, OrbitPose};
use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianScene;
use crate::image::Image;
use crate::io::png::{read_image, write_image};
use crate::render::{render, RenderConfig};

/// Guard on the content standard deviation.
pub const TRANSFER_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Per-channel mean and population standard deviation over all pixels.
pub fn channel_stats(img: &Image) -> ChannelStats {
    let n = img.pixel_count().max(1) as f64;
    let mut mean = [0.0; 3];
    for p in img.data().chunks_exact(3) {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 3];
    for p in img.data().chunks_exact(3) {
        for c in 0..3 {
            var[c] += (p[c] - mean[c]).powi(2);
        }
    }
    ChannelStats { mean, std: var.map(|v| (v / n).sqrt()) }
}

/// Re-statistics `content` to the guide's per-channel mean and std, without
/// the final clamp.
pub fn distribution_transfer_unclamped(content: &Image, guide: &Image) -> Result<Image> {
    content.check_same_shape(guide)?;
    let cs = channel_stats(content);
    let gs = channel_stats(guide);
    let mut out = content.clone();
    for p in out.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            p[c] = gs.std[c] * (p[c] - cs.mean[c]) / cs.std[c].max(TRANSFER_EPS) + gs.mean[c];
        }
    }
    Ok(out)
}

/// Per-channel statistics transfer of `content` onto `guide`, clamped to
/// `[0, 1]`.
pub fn distribution_transfer(content: &Image, guide: &Image) -> Result<Image> {
    Ok(distribution_transfer_unclamped(content, guide)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Gradient of [`distribution_transfer`] with respect to `content`,
/// including the dependence of the content mean and std on every pixel.
/// Clamped output pixels pass no gradient.
pub fn distribution_transfer_backward(content: &Image, guide: &Image, d_output: &Image) -> Result<Image> {
    content.check_same_shape(guide)?;
    content.check_same_shape(d_output)?;
    let cs = channel_stats(content);
    let gs = channel_stats(guide);
    let unclamped = distribution_transfer_unclamped(content, guide)?;
    let n = content.pixel_count() as f64;

    let mut d_content = Image::new(content.width(), content.height());
    for c in 0..3 {
        let sigma = cs.std[c];
        let degenerate = sigma <= TRANSFER_EPS;
        let s = sigma.max(TRANSFER_EPS);
        let k = gs.std[c] / s;
        let mut g_mean = 0.0;
        let mut gz_mean = 0.0;
        let masked: Vec<f64> = unclamped
            .data()
            .chunks_exact(3)
            .zip(d_output.data().chunks_exact(3))
            .map(|(y, g)| if (0.0..=1.0).contains(&y[c]) { g[c] } else { 0.0 })
            .collect();
        for (g, x) in masked.iter().zip(content.data().chunks_exact(3)) {
            g_mean += g;
            gz_mean += g * (x[c] - cs.mean[c]) / s;
        }
        g_mean /= n;
        gz_mean /= n;
        for (j, (g, x)) in masked.iter().zip(content.data().chunks_exact(3)).enumerate() {
            let z = (x[c] - cs.mean[c]) / s;
            let d = if degenerate { k * (g - g_mean) } else { k * (g - g_mean - z * gz_mean) };
            d_content.data_mut()[j * 3 + c] = d;
        }
    }
    Ok(d_content)
}

/// Guidance image per schedule pose, in schedule order.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSet {
    pub entries: Vec<(OrbitPose, Image)>,
    /// Training step at which the set was produced.
    pub generation_step: usize,
}

impl GuidanceSet {
    pub fn new(entries: Vec<(OrbitPose, Image)>, generation_step: usize) -> Result<Self> {
        if let Some((_, first)) = entries.first() {
            if entries.iter().any(|(_, img)| !img.same_shape(first)) {
                return Err(invalid("guidance images must share one resolution"));
            }
        }
        for (i, (p, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(q, _)| q == p) {
                return Err(invalid(format!("duplicate guidance pose {p:?}")));
            }
        }
        Ok(Self { entries, generation_step })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pose: &OrbitPose) -> Option<&Image> {
        self.entries.iter().find(|(p, _)| p == pose).map(|(_, img)| img)
    }

    pub fn poses(&self) -> impl Iterator<Item = &OrbitPose> {
        self.entries.iter().map(|(p, _)| p)
    }

    /// Checks that every schedule pose has exactly one entry.
    pub fn covers(&self, schedule: &[OrbitPose]) -> Result<()> {
        for p in schedule {
            if self.get(p).is_none() {
                return Err(invalid(format!("guidance set lacks pose {}", guidance_filename(p))));
            }
        }
        Ok(())
    }
}

/// Protocol filename for a pose, e.g. `h_030.png`.
pub fn guidance_filename(pose: &OrbitPose) -> String {
    format!("{}_{:03}.png", pose.circle.prefix(), pose.angle.round() as i64)
}

pub fn load_guidance(dir: &Path, intrinsics: &CameraIntrinsics, schedule: &[OrbitPose]) -> Result<GuidanceSet> {
    let mut entries = Vec::with_capacity(schedule.len());
    for pose in schedule {
        let filename = guidance_filename(pose);
        let path = dir.join(&filename);
        if !path.is_file() {
            return Err(Error::MissingEntry { dir: dir.to_path_buf(), filename });
        }
        let img = read_image(&path)?;
        entries.push((*pose, img.resample(intrinsics.width, intrinsics.height)));
    }
    GuidanceSet::new(entries, 0)
}

pub fn save_guidance(set: &GuidanceSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (pose, img) in &set.entries {
        write_image(img, &dir.join(guidance_filename(pose)))?;
    }
    Ok(())
}

/// Renders `truth` at every schedule pose.
pub fn synthetic_guidance(
    truth: &GaussianScene,
    schedule: &[OrbitPose],
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Result<GuidanceSet> {
    let cfg = RenderConfig { retain_contributors: false, ..config.clone() };
    let entries = schedule
        .iter()
        .map(|pose| Ok((*pose, render(truth, &orbit_to_extrinsics(pose), intrinsics, &cfg)?.rgb)))
        .collect::<Result<Vec<_>>>()?;
    GuidanceSet::new(entries, 0)
}

/// Source of guidance sets, re-invoked by the training loop on refresh.
pub trait GuidanceProvider {
    fn guidance(&mut self, step: usize) -> Result<GuidanceSet>;
}

/// Re-reads a guidance directory on every refresh, so an external producer
/// can update it between refreshes.
#[derive(Debug, Clone)]
pub struct DirectoryGuidance {
    pub dir: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub schedule: Vec<OrbitPose>,
}

impl GuidanceProvider for DirectoryGuidance {
    fn guidance(&mut self, step: usize) -> Result<GuidanceSet> {
        let mut set = load_guidance(&self.dir, &self.intrinsics, &self.schedule)?;
        set.generation_step = step;
        Ok(set)
    }
}

/// Renders a known scene; the desk-scale stand-in for a generative producer.
#[derive(Debug, Clone)]
pub struct SyntheticGuidance {
    pub truth: GaussianScene,
    pub schedule: Vec<OrbitPose>,
    pub intrinsics: CameraIntrinsics,
    pub config: RenderConfig,
}

impl GuidanceProvider for SyntheticGuidance {
    fn guidance(&mut self, step: usize) -> Result<GuidanceSet> {
        let mut set = synthetic_guidance(&self.truth, &self.schedule, &self.intrinsics, &self.config)?;
        set.generation_step = step;
        Ok(set)
    }
}

/// A fixed, precomputed set.
#[derive(Debug, Clone)]
pub struct StaticGuidance(pub GuidanceSet);

impl GuidanceProvider for StaticGuidance {
    fn guidance(&mut self, step: usize) -> Result<GuidanceSet> {
        Ok(GuidanceSet { generation_step: step, ..self.0.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::pose_schedule;
    use proptest::prelude::*;

    fn gray(vals: &[f64]) -> Image {
        Image::from_vec(vals.len(), 1, vals.iter().flat_map(|&v| [v, v, v]).collect()).unwrap()
    }

    #[test]
    fn two_pixel_arithmetic() {
        let out = distribution_transfer(&gray(&[0.2, 0.6]), &gray(&[0.1, 0.9])).unwrap();
        assert!((out.get(0, 0)[0] - 0.1).abs() < 1e-12);
        assert!((out.get(1, 0)[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constant_guide_gives_constant_output() {
        let out = distribution_transfer(&gray(&[0.2, 0.6, 0.3]), &gray(&[0.7, 0.7, 0.7])).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn stat_matched_identity() {
        let c = gray(&[0.2, 0.6, 0.4, 0.5]);
        let out = distribution_transfer(&c, &c).unwrap();
        for (a, b) in out.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert!(distribution_transfer(&gray(&[0.1, 0.2]), &gray(&[0.1])).is_err());
        assert!(distribution_transfer_backward(&gray(&[0.1, 0.2]), &gray(&[0.1]), &gray(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero() {
        let c = gray(&[0.2, 0.6, 0.3]);
        let g = gray(&[0.1, 0.5, 0.9]);
        let d = distribution_transfer_backward(&c, &g, &Image::new(3, 1)).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filenames() {
        let s = pose_schedule(30, 3.0).unwrap();
        assert_eq!(guidance_filename(&s[0]), "h_000.png");
        assert_eq!(guidance_filename(&s[15]), "v_090.png");
        assert_eq!(guidance_filename(&s[23]), "v_330.png");
    }

    #[test]
    fn synthetic_empty_scene_is_background() {
        let k = CameraIntrinsics::new(50.0, 8, 8).unwrap();
        let s = pose_schedule(30, 3.0).unwrap();
        let set = synthetic_guidance(&GaussianScene::empty(0), &s, &k, &RenderConfig::default()).unwrap();
        assert_eq!(set.len(), 24);
        assert!(set.entries.iter().all(|(_, img)| img.data().iter().all(|&v| v == 1.0)));
        set.covers(&s).unwrap();
    }

    fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = Image> {
        proptest::collection::vec(0.0..1.0f64, w * h * 3).prop_map(move |d| Image::from_vec(w, h, d).unwrap())
    }

    proptest! {
        #[test]
        fn transfer_is_idempotent(c in image_strategy(5, 4), g in image_strategy(5, 4)) {
            let once = distribution_transfer_unclamped(&c, &g).unwrap();
            let twice = distribution_transfer_unclamped(&once, &g).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn transfer_preserves_ranking(c in image_strategy(6, 3), g in image_strategy(6, 3)) {
            let out = distribution_transfer_unclamped(&c, &g).unwrap();
            let cd = c.data();
            let od = out.data();
            for ch in 0..3 {
                for i in 0..18 {
                    for j in 0..18 {
                        if cd[i * 3 + ch] < cd[j * 3 + ch] {
                            prop_assert!(od[i * 3 + ch] <= od[j * 3 + ch]);
                        }
                    }
                }
            }
        }
    }
}

//! Score-distillation gradients against an abstract noise predictor.
//!
//! The forward diffusion process is variance preserving with a linear beta
//! schedule from `1e-4` to `0.02` over 1000 steps:
//! `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`, with
//! `abar_t = prod_{s <= t} (1 - beta_s)` for `t` in `1..=1000`.
//! External providers must use the same schedule.
//!
//! Out-of-process providers speak a little-endian byte protocol. A request
//! is `u32 width, u32 height, width*height*3 f32 (row-major RGB), u32
//! timestep, u32 tag length, tag bytes (UTF-8)`; the response is `u32 width,
//! u32 height, width*height*3 f32` holding the predicted noise.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::rng;

pub const TIMESTEPS: u32 = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Cumulative products of the linear beta schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear()
    }
}

impl NoiseSchedule {
    pub fn linear() -> Self {
        let mut prod = 1.0;
        let alpha_bar = (0..TIMESTEPS)
            .map(|i| {
                let beta = BETA_START + (BETA_END - BETA_START) * f64::from(i) / f64::from(TIMESTEPS - 1);
                prod *= 1.0 - beta;
                prod
            })
            .collect();
        Self { alpha_bar }
    }

    /// `abar_t` for `t` in `1..=1000`.
    pub fn alpha_bar(&self, t: u32) -> Result<f64> {
        if !(1..=TIMESTEPS).contains(&t) {
            return Err(invalid(format!("timestep {t} outside [1, {TIMESTEPS}]")));
        }
        Ok(self.alpha_bar[t as usize - 1])
    }
}

/// What a provider is conditioned on. `tag` travels over the wire;
/// `noise_seed` is visible only to in-process test doubles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conditioning {
    pub tag: String,
    pub noise_seed: u64,
}

/// Predicts the noise in a noised image.
pub trait NoiseProvider {
    fn predict_noise(&self, noisy: &Image, timestep: u32, cond: &Conditioning) -> Result<Image>;
}

/// Standard-normal noise image drawn from `seed`.
pub fn seeded_noise(width: usize, height: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, "sds-noise");
    let data = (0..width * height * 3).map(|_| StandardNormal.sample(&mut r)).collect();
    Image::from_vec(width, height, data).expect("sized raster")
}

/// `x_t` for a given clean image and noise.
pub fn add_noise(image: &Image, eps: &Image, alpha_bar: f64) -> Image {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = image.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Image::from_vec(image.width(), image.height(), data).expect("same shape")
}

/// Image-space SDS gradient `eps_hat - eps` (unit timestep weighting).
pub fn sds_grad(
    provider: &dyn NoiseProvider,
    image: &Image,
    timestep: u32,
    noise_seed: u64,
    tag: &str,
) -> Result<Image> {
    let schedule = NoiseSchedule::linear();
    let abar = schedule.alpha_bar(timestep)?;
    let eps = seeded_noise(image.width(), image.height(), noise_seed);
    let noisy = add_noise(image, &eps, abar);
    let cond = Conditioning { tag: tag.to_string(), noise_seed };
    let pred = provider.predict_noise(&noisy, timestep, &cond)?;
    if !pred.same_shape(image) {
        return Err(Error::Protocol(format!(
            "provider returned {}x{} for a {}x{} request",
            pred.width(),
            pred.height(),
            image.width(),
            image.height()
        )));
    }
    let mut d = pred;
    d.add_scaled(&eps, -1.0);
    Ok(d)
}

/// Test double for a diffusion prior. It knows the seed, so it recovers
/// `x_0` exactly and returns `eps_implied + k (x_0 - target)`; SDS descent
/// with it is descent on `k/2 |x_0 - target|^2`.
///
/// With `noise_error > 0` its noise estimate additionally carries an
/// independent Gaussian error of that standard deviation, so single
/// samples are no longer exact and only the expectation is.
#[derive(Debug, Clone)]
pub struct MockNoiseProvider {
    targets: HashMap<String, Image>,
    default_target: Option<Image>,
    pub k: f64,
    pub noise_error: f64,
    schedule: NoiseSchedule,
}

/// Mock provider with one target for every tag.
pub fn mock_noise_provider(target: Image, k: f64) -> MockNoiseProvider {
    MockNoiseProvider {
        targets: HashMap::new(),
        default_target: Some(target),
        k,
        noise_error: 0.0,
        schedule: NoiseSchedule::linear(),
    }
}

impl MockNoiseProvider {
    /// Mock provider choosing its target by conditioning tag.
    pub fn per_tag(targets: HashMap<String, Image>, k: f64) -> Self {
        Self { targets, default_target: None, k, noise_error: 0.0, schedule: NoiseSchedule::linear() }
    }

    pub fn with_noise_error(mut self, std: f64) -> Self {
        self.noise_error = std;
        self
    }

    fn target(&self, tag: &str) -> Result<&Image> {
        self.targets
            .get(tag)
            .or(self.default_target.as_ref())
            .ok_or_else(|| Error::Protocol(format!("mock provider has no target for tag '{tag}'")))
    }
}

impl NoiseProvider for MockNoiseProvider {
    fn predict_noise(&self, noisy: &Image, timestep: u32, cond: &Conditioning) -> Result<Image> {
        let target = self.target(&cond.tag)?;
        if !target.same_shape(noisy) {
            return Err(Error::Protocol("mock target resolution differs from the request".into()));
        }
        let abar = self.schedule.alpha_bar(timestep)?;
        let (a, b) = (abar.sqrt(), (1.0 - abar).sqrt());
        let eps = seeded_noise(noisy.width(), noisy.height(), cond.noise_seed);
        let mut err = rng::stream(cond.noise_seed, "mock-denoiser-error");
        let data = noisy
            .data()
            .iter()
            .zip(eps.data())
            .zip(target.data())
            .map(|((&x, &e), &tgt)| {
                let x0 = (x - b * e) / a;
                let implied = (x - a * x0) / b;
                let jitter = if self.noise_error > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut err);
                    self.noise_error * z
                } else {
                    0.0
                };
                implied + self.k * (x0 - tgt) + jitter
            })
            .collect();
        Image::from_vec(noisy.width(), noisy.height(), data)
    }
}

pub fn encode_request(noisy: &Image, timestep: u32, tag: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + noisy.data().len() * 4 + tag.len());
    out.extend_from_slice(&(noisy.width() as u32).to_le_bytes());
    out.extend_from_slice(&(noisy.height() as u32).to_le_bytes());
    for &v in noisy.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&timestep.to_le_bytes());
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length { expected: at + 4, found: bytes.len() })
}

fn read_raster(bytes: &[u8]) -> Result<(Image, usize)> {
    let w = read_u32(bytes, 0)? as usize;
    let h = read_u32(bytes, 4)? as usize;
    let n = w * h * 3;
    let end = 8 + n * 4;
    if bytes.len() < end {
        return Err(Error::Length { expected: end, found: bytes.len() });
    }
    let data = bytes[8..end]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok((Image::from_vec(w, h, data)?, end))
}

pub fn decode_request(bytes: &[u8]) -> Result<(Image, u32, String)> {
    let (img, mut at) = read_raster(bytes)?;
    let t = read_u32(bytes, at)?;
    let len = read_u32(bytes, at + 4)? as usize;
    at += 8;
    let tag = bytes.get(at..at + len).ok_or(Error::Length { expected: at + len, found: bytes.len() })?;
    let tag = String::from_utf8(tag.to_vec()).map_err(|_| Error::Protocol("tag is not UTF-8".into()))?;
    Ok((img, t, tag))
}

pub fn encode_response(pred: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + pred.data().len() * 4);
    out.extend_from_slice(&(pred.width() as u32).to_le_bytes());
    out.extend_from_slice(&(pred.height() as u32).to_le_bytes());
    for &v in pred.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_response(bytes: &[u8]) -> Result<Image> {
    let (img, end) = read_raster(bytes)?;
    if end != bytes.len() {
        return Err(Error::Protocol(format!("{} trailing bytes in response", bytes.len() - end)));
    }
    Ok(img)
}

/// Runs an external program per request: the request goes to its stdin,
/// the response is read from its stdout.
#[derive(Debug, Clone)]
pub struct CommandNoiseProvider {
    pub program: String,
    pub args: Vec<String>,
}

impl NoiseProvider for CommandNoiseProvider {
    fn predict_noise(&self, noisy: &Image, timestep: u32, cond: &Conditioning) -> Result<Image> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let request = encode_request(noisy, timestep, &cond.tag);
        child.stdin.take().expect("piped stdin").write_all(&request)?;
        let mut response = Vec::new();
        child.stdout.take().expect("piped stdout").read_to_end(&mut response)?;
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::Protocol(format!("noise provider '{}' exited with {status}", self.program)));
        }
        decode_response(&response)
    }
}

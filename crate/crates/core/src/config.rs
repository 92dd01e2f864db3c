//! Flat `key = value` run configuration.
//!
//! Every field of [`TrainConfig`], [`RenderConfig`] and
//! [`ParamGroupConfig`] has one key. Blank lines and `#` comments are
//! ignored, absent keys keep their defaults, and unknown or repeated keys
//! are errors. `background` is written as `r, g, b`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::optim::{ParamGroupConfig, TrainConfig};
use crate::render::RenderConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub groups: ParamGroupConfig,
}

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse '{raw}' for key '{key}'")))
}

fn rgb(key: &str, raw: &str, line: usize) -> Result<Vector3<f64>> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Format(format!("line {line}: '{key}' needs three comma-separated values")));
    }
    Ok(Vector3::new(value(key, parts[0], line)?, value(key, parts[1], line)?, value(key, parts[2], line)?))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.render.validate()?;
        self.groups.validate()
    }

    pub fn serialize(&self) -> String {
        let t = &self.train;
        let r = &self.render;
        let g = &self.groups;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").expect("write to string");
        };
        kv("total_steps", t.total_steps.to_string());
        kv("batch_poses", t.batch_poses.to_string());
        kv("guidance_refresh_interval", t.guidance_refresh_interval.to_string());
        kv("schedule_step_degrees", t.schedule_step_degrees.to_string());
        kv("radius", t.radius.to_string());
        kv("fov_y", t.fov_y.to_string());
        kv("resolution", t.resolution.to_string());
        kv("use_color", t.use_color.to_string());
        kv("use_sds", t.use_sds.to_string());
        kv("use_sketch", t.use_sketch.to_string());
        kv("color_weight", t.color_weight.to_string());
        kv("sds_weight", t.sds_weight.to_string());
        kv("sketch_weight", t.sketch_weight.to_string());
        kv("pose_weighting", t.pose_weighting.name().to_string());
        kv("timestep_min", t.timestep_min.to_string());
        kv("timestep_max", t.timestep_max.to_string());
        kv("prune", t.prune.to_string());
        kv("prune_interval", t.prune_interval.to_string());
        kv("prune_opacity", t.prune_opacity.to_string());
        kv("seed", t.seed.to_string());
        kv("background", format!("{}, {}, {}", r.background.x, r.background.y, r.background.z));
        kv("cutoff_sigma", r.cutoff_sigma.to_string());
        kv("tile_size", r.tile_size.to_string());
        kv("retain_contributors", r.retain_contributors.to_string());
        kv("min_alpha", r.min_alpha.to_string());
        kv("min_transmittance", r.min_transmittance.to_string());
        kv("lr_position", g.lr_position.to_string());
        kv("lr_opacity", g.lr_opacity.to_string());
        kv("lr_sh", g.lr_sh.to_string());
        kv("lr_scale", g.lr_scale.to_string());
        kv("lr_rotation", g.lr_rotation.to_string());
        kv("beta1", g.beta1.to_string());
        kv("beta2", g.beta2.to_string());
        kv("eps", g.eps.to_string());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw_line) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {n}: expected 'key = value'")))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Format(format!("line {n}: key '{key}' given twice")));
            }
            let (t, r, g) = (&mut c.train, &mut c.render, &mut c.groups);
            match key {
                "total_steps" => t.total_steps = value(key, raw, n)?,
                "batch_poses" => t.batch_poses = value(key, raw, n)?,
                "guidance_refresh_interval" => t.guidance_refresh_interval = value(key, raw, n)?,
                "schedule_step_degrees" => t.schedule_step_degrees = value(key, raw, n)?,
                "radius" => t.radius = value(key, raw, n)?,
                "fov_y" => t.fov_y = value(key, raw, n)?,
                "resolution" => t.resolution = value(key, raw, n)?,
                "use_color" => t.use_color = value(key, raw, n)?,
                "use_sds" => t.use_sds = value(key, raw, n)?,
                "use_sketch" => t.use_sketch = value(key, raw, n)?,
                "color_weight" => t.color_weight = value(key, raw, n)?,
                "sds_weight" => t.sds_weight = value(key, raw, n)?,
                "sketch_weight" => t.sketch_weight = value(key, raw, n)?,
                "pose_weighting" => t.pose_weighting = value(key, raw, n)?,
                "timestep_min" => t.timestep_min = value(key, raw, n)?,
                "timestep_max" => t.timestep_max = value(key, raw, n)?,
                "prune" => t.prune = value(key, raw, n)?,
                "prune_interval" => t.prune_interval = value(key, raw, n)?,
                "prune_opacity" => t.prune_opacity = value(key, raw, n)?,
                "seed" => t.seed = value(key, raw, n)?,
                "background" => r.background = rgb(key, raw, n)?,
                "cutoff_sigma" => r.cutoff_sigma = value(key, raw, n)?,
                "tile_size" => r.tile_size = value(key, raw, n)?,
                "retain_contributors" => r.retain_contributors = value(key, raw, n)?,
                "min_alpha" => r.min_alpha = value(key, raw, n)?,
                "min_transmittance" => r.min_transmittance = value(key, raw, n)?,
                "lr_position" => g.lr_position = value(key, raw, n)?,
                "lr_opacity" => g.lr_opacity = value(key, raw, n)?,
                "lr_sh" => g.lr_sh = value(key, raw, n)?,
                "lr_scale" => g.lr_scale = value(key, raw, n)?,
                "lr_rotation" => g.lr_rotation = value(key, raw, n)?,
                "beta1" => g.beta1 = value(key, raw, n)?,
                "beta2" => g.beta2 = value(key, raw, n)?,
                "eps" => g.eps = value(key, raw, n)?,
                _ => return Err(Error::Format(format!("line {n}: unknown key '{key}'"))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }
}

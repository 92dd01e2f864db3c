use nalgebra::{Vector3, Vector4};

use crate::error::{invalid, Result};
use crate::gaussian::GaussianScene;
use crate::grad::GradientSet;

/// Learning rates per parameter group and the shared Adam constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroupConfig {
    pub lr_position: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for ParamGroupConfig {
    fn default() -> Self {
        Self {
            lr_position: 1e-4,
            lr_opacity: 5e-2,
            lr_sh: 1.5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamGroupConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_position, self.lr_opacity, self.lr_sh, self.lr_scale, self.lr_rotation];
        if lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(invalid("learning rates must be positive and finite"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("Adam eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moments, shaped like the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(scene: &GaussianScene) -> Self {
        Self { m: GradientSet::zeros_like(scene), v: GradientSet::zeros_like(scene), step: 0 }
    }

    /// Keeps the moments of the Gaussians selected by `keep`, matching
    /// [`GaussianScene::retain_indices`].
    pub fn retain_indices(&self, coeffs: usize, keep: impl Fn(usize) -> bool) -> Self {
        let filter = |g: &GradientSet| {
            let idx: Vec<usize> = (0..g.len()).filter(|&i| keep(i)).collect();
            GradientSet {
                d_position: idx.iter().map(|&i| g.d_position[i]).collect(),
                d_rotation: idx.iter().map(|&i| g.d_rotation[i]).collect(),
                d_log_scale: idx.iter().map(|&i| g.d_log_scale[i]).collect(),
                d_opacity_logit: idx.iter().map(|&i| g.d_opacity_logit[i]).collect(),
                d_sh: idx.iter().flat_map(|&i| g.d_sh[i * coeffs..(i + 1) * coeffs].iter().copied()).collect(),
            }
        };
        Self { m: filter(&self.m), v: filter(&self.v), step: self.step }
    }
}

struct Moments {
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
}

impl Moments {
    fn update(&self, p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.c1;
        let v_hat = *v / self.c2;
        *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
    }

    fn vec3(&self, p: &mut Vector3<f64>, g: &Vector3<f64>, m: &mut Vector3<f64>, v: &mut Vector3<f64>, lr: f64) {
        for k in 0..3 {
            self.update(&mut p[k], g[k], &mut m[k], &mut v[k], lr);
        }
    }

    fn vec4(&self, p: &mut Vector4<f64>, g: &Vector4<f64>, m: &mut Vector4<f64>, v: &mut Vector4<f64>, lr: f64) {
        for k in 0..4 {
            self.update(&mut p[k], g[k], &mut m[k], &mut v[k], lr);
        }
    }
}

/// One bias-corrected Adam step per group; quaternions are renormalized
/// afterwards.
pub fn adam_step(
    scene: &mut GaussianScene,
    grads: &GradientSet,
    state: &mut AdamState,
    groups: &ParamGroupConfig,
) -> Result<()> {
    if !grads.matches(scene) || !state.m.matches(scene) || !state.v.matches(scene) {
        return Err(invalid(format!(
            "gradient or optimizer state shape differs from the scene ({} Gaussians)",
            scene.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let mo = Moments {
        beta1: groups.beta1,
        beta2: groups.beta2,
        eps: groups.eps,
        c1: 1.0 - groups.beta1.powi(t),
        c2: 1.0 - groups.beta2.powi(t),
    };
    let (m, v) = (&mut state.m, &mut state.v);
    for i in 0..scene.len() {
        mo.vec3(&mut scene.positions[i], &grads.d_position[i], &mut m.d_position[i], &mut v.d_position[i], groups.lr_position);
        mo.vec4(&mut scene.rotations[i], &grads.d_rotation[i], &mut m.d_rotation[i], &mut v.d_rotation[i], groups.lr_rotation);
        mo.vec3(&mut scene.log_scales[i], &grads.d_log_scale[i], &mut m.d_log_scale[i], &mut v.d_log_scale[i], groups.lr_scale);
        mo.update(
            &mut scene.opacity_logits[i],
            grads.d_opacity_logit[i],
            &mut m.d_opacity_logit[i],
            &mut v.d_opacity_logit[i],
            groups.lr_opacity,
        );
    }
    for j in 0..scene.sh_coeffs.len() {
        mo.vec3(&mut scene.sh_coeffs[j], &grads.d_sh[j], &mut m.d_sh[j], &mut v.d_sh[j], groups.lr_sh);
    }
    scene.renormalize_rotations();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_scene;

    #[test]
    fn zero_gradient_leaves_scene() {
        let mut scene = random_scene(5, 1);
        scene.renormalize_rotations();
        let before = scene.clone();
        let mut st = AdamState::new(&scene);
        let zero = GradientSet::zeros_like(&scene);
        adam_step(&mut scene, &zero, &mut st, &ParamGroupConfig::default()).unwrap();
        assert_eq!(st.step, 1);
        assert_eq!(scene.positions, before.positions);
        assert_eq!(scene.opacity_logits, before.opacity_logits);
        assert_eq!(scene.sh_coeffs, before.sh_coeffs);
    }

    #[test]
    fn first_step_is_sign_step() {
        let mut scene = random_scene(2, 2);
        let before = scene.clone();
        let mut g = GradientSet::zeros_like(&scene);
        g.d_position[1].y = -3.7;
        g.d_opacity_logit[0] = 0.02;
        let groups = ParamGroupConfig::default();
        let mut st = AdamState::new(&scene);
        adam_step(&mut scene, &g, &mut st, &groups).unwrap();
        assert!((scene.positions[1].y - before.positions[1].y - groups.lr_position).abs() < 1e-12);
        assert!((scene.opacity_logits[0] - before.opacity_logits[0] + groups.lr_opacity).abs() < 1e-7);
    }

    #[test]
    fn quaternions_stay_unit() {
        let mut scene = random_scene(6, 3);
        let mut st = AdamState::new(&scene);
        let mut g = GradientSet::zeros_like(&scene);
        for (k, q) in g.d_rotation.iter_mut().enumerate() {
            *q = Vector4::new(0.3, -1.0, 2.0, k as f64);
        }
        for _ in 0..20 {
            adam_step(&mut scene, &g, &mut st, &ParamGroupConfig { lr_rotation: 0.2, ..Default::default() }).unwrap();
            assert!(scene.rotations.iter().all(|q| (q.norm() - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut scene = random_scene(3, 4);
        let other = random_scene(2, 4);
        let mut st = AdamState::new(&scene);
        assert!(adam_step(&mut scene, &GradientSet::zeros_like(&other), &mut st, &ParamGroupConfig::default()).is_err());
    }
}

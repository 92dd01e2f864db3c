use super::{LossReport, LossTerm};
use crate::error::{invalid, Result};
use crate::image::Image;

/// Step ramp `step / total_steps`.
pub fn linear_weight(step: usize, total_steps: usize) -> f64 {
    step as f64 / total_steps as f64
}

/// Pose- and step-weighted squared error between a guidance image and a
/// render: `pose_w * (step / total) * sum (guide - content)^2 / pixels`.
pub fn color_loss(guide: &Image, content: &Image, pose_w: f64, step: usize, total_steps: usize) -> Result<LossReport> {
    guide.check_same_shape(content)?;
    if total_steps == 0 || step > total_steps {
        return Err(invalid(format!("step {step} outside [0, {total_steps}]")));
    }
    let w = pose_w * linear_weight(step, total_steps);
    let n = content.pixel_count().max(1) as f64;
    let mut d = content.clone();
    let mut sum = 0.0;
    for (dv, g) in d.data_mut().iter_mut().zip(guide.data()) {
        let r = *dv - g;
        sum += r * r;
        *dv = 2.0 * w * r / n;
    }
    Ok(LossReport { value: w * sum / n, d_image: d, term: LossTerm::Color })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_images_cost_nothing() {
        let a = Image::filled(3, 2, [0.2, 0.4, 0.6]);
        let r = color_loss(&a, &a, 1.0, 10, 20).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.d_image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_and_single_pixel() {
        assert_eq!(linear_weight(250, 500), 0.5);
        // One pixel whose red channel differs: guide 1, content 0.
        let g = Image::from_vec(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let c = Image::from_vec(1, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let r = color_loss(&g, &c, 1.0, 500, 500).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.d_image.data()[0], -2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Image::new(2, 2);
        assert!(color_loss(&a, &Image::new(3, 2), 1.0, 1, 2).is_err());
        assert!(color_loss(&a, &a, 1.0, 3, 2).is_err());
        assert!(color_loss(&a, &a, 1.0, 0, 0).is_err());
    }

    fn img(w: usize, h: usize) -> impl Strategy<Value = Image> {
        proptest::collection::vec(0.0..1.0f64, w * h * 3).prop_map(move |d| Image::from_vec(w, h, d).unwrap())
    }

    proptest! {
        #[test]
        fn nonnegative_and_fd_exact(g in img(3, 3), c in img(3, 3), pw in 0.01..1.0f64, step in 1usize..100) {
            let r = color_loss(&g, &c, pw, step, 100).unwrap();
            prop_assert!(r.value >= 0.0);
            let h = 1e-5;
            for k in [0usize, 7, 19, 26] {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp.data_mut()[k] += h;
                cm.data_mut()[k] -= h;
                let fd = (color_loss(&g, &cp, pw, step, 100).unwrap().value
                    - color_loss(&g, &cm, pw, step, 100).unwrap().value) / (2.0 * h);
                let a = r.d_image.data()[k];
                prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(1e-6) + 1e-11);
            }
        }

        #[test]
        fn linear_in_pose_weight(g in img(2, 2), c in img(2, 2), pw in 0.0..1.0f64) {
            let one = color_loss(&g, &c, 1.0, 5, 10).unwrap();
            let r = color_loss(&g, &c, pw, 5, 10).unwrap();
            prop_assert!((r.value - pw * one.value).abs() < 1e-12);
        }
    }
}

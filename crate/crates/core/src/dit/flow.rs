//! Straight-path flow matching: interpolation, loss, noise and the Euler
//! sampler.
//!
//! `x_t = (1 - t) x0 + t eps`, so `t = 1` is pure noise and the target
//! velocity `eps - x0` is constant along the path. Sampling integrates from
//! `t = 1` down to `t = 0` with `x <- x - v dt`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::Dit;
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::rng;

fn same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn make_xt(x0: &Mat, eps: &Mat, t: f64) -> Result<Mat> {
    same_shape(x0, eps, "make_xt")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("time {t} outside [0, 1]")));
    }
    let data = x0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(a, e)| (1.0 - t) * a + t * e)
        .collect();
    Ok(Mat {
        rows: x0.rows,
        cols: x0.cols,
        data,
    })
}

/// Target velocity `eps - x0`.
pub fn target_velocity(x0: &Mat, eps: &Mat) -> Result<Mat> {
    same_shape(x0, eps, "target_velocity")?;
    Ok(eps.sub(x0))
}

/// Mean squared error between a predicted velocity and `eps - x0`.
pub fn flow_loss(v: &Mat, x0: &Mat, eps: &Mat) -> Result<f64> {
    same_shape(v, x0, "flow_loss")?;
    same_shape(x0, eps, "flow_loss")?;
    let n = v.len().max(1) as f64;
    Ok(v.data
        .iter()
        .zip(x0.data.iter().zip(&eps.data))
        .map(|(v, (a, e))| {
            let r = v - (e - a);
            r * r
        })
        .sum::<f64>()
        / n)
}

/// Standard normal matrix from the stream keyed by `(seed, path)`.
pub fn gaussian_noise(rows: usize, cols: usize, seed: u64, path: &[u64]) -> Mat {
    let mut rng = rng::stream(seed, path);
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Mat { rows, cols, data }
}

/// Stream path of the sampler's starting noise.
pub const SAMPLER_STREAM: u64 = 0x5a3;

pub trait VelocityField {
    fn velocity(&self, x: &Mat, t: f64) -> Result<Mat>;
}

/// Constant field `eps - x0`, the exact velocity of the straight path.
pub struct ConstantVelocity {
    pub v: Mat,
}

impl ConstantVelocity {
    pub fn new(x0: &Mat, eps: &Mat) -> Result<Self> {
        Ok(ConstantVelocity {
            v: target_velocity(x0, eps)?,
        })
    }
}

impl VelocityField for ConstantVelocity {
    fn velocity(&self, x: &Mat, _t: f64) -> Result<Mat> {
        same_shape(x, &self.v, "constant velocity")?;
        Ok(self.v.clone())
    }
}

/// A trained model bound to one clip's source and light tokens.
pub struct DitField<'a> {
    pub model: &'a Dit,
    pub source: &'a Mat,
    pub light: Option<&'a Mat>,
}

impl VelocityField for DitField<'_> {
    fn velocity(&self, x: &Mat, t: f64) -> Result<Mat> {
        self.model.velocity(x, self.source, self.light, t)
    }
}

/// Uniform time grid from 1 to 0 with `steps` intervals.
pub fn time_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| 1.0 - i as f64 / steps as f64).collect()
}

/// Euler integration starting from `eps`.
pub fn euler_from(field: &dyn VelocityField, eps: Mat, steps: usize) -> Result<Mat> {
    if steps < 1 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let grid = time_grid(steps);
    let mut x = eps;
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let v = field.velocity(&x, t)?;
        same_shape(&x, &v, "velocity field output")?;
        let dt = t - next;
        for (a, b) in x.data.iter_mut().zip(&v.data) {
            *a -= b * dt;
        }
    }
    Ok(x)
}

/// Euler sample of shape `rows x cols` from seeded standard-normal noise.
pub fn euler_sample(
    field: &dyn VelocityField,
    rows: usize,
    cols: usize,
    steps: usize,
    seed: u64,
) -> Result<Mat> {
    if steps < 1 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let eps = gaussian_noise(rows, cols, seed, &[SAMPLER_STREAM]);
    euler_from(field, eps, steps)
}

//! Light images and multi-plane light images (MPLI).
//!
//! A light image samples a scaled inverse-square irradiance field on a plane
//! orthogonal to the optical axis. Pixel `(u, v)` of the plane at depth `d`
//! sits at the frustum point `((u + 0.5 - cx) d / f, (v + 0.5 - cy) d / f, d)`,
//! and its value is
//!
//! ```text
//! sum_i  I_i * c_i / (|q - p_i|^2 / s1 + s2)
//! ```
//!
//! An MPLI stacks K such planes at increasing depths; a sequence holds one
//! MPLI per latent group of the video.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::Image;
use crate::light::{transform_to_camera, CameraIntrinsics, CameraPose, LightingScript, PointLight};

pub const DEFAULT_DEPTHS: [f64; 4] = [0.5, 1.5, 3.0, 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpliScalers {
    pub s1: f64,
    pub s2: f64,
}

impl MpliScalers {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1 > 0.0 && s2 > 0.0 && s1.is_finite() && s2.is_finite()) {
            return Err(Error::Config(format!(
                "MPLI scalers must be positive, got s1={s1}, s2={s2}"
            )));
        }
        Ok(MpliScalers { s1, s2 })
    }
}

impl Default for MpliScalers {
    fn default() -> Self {
        MpliScalers { s1: 1.0, s2: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightImage {
    pub image: Image,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPlaneLightImage {
    pub planes: Vec<LightImage>,
}

impl MultiPlaneLightImage {
    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn depths(&self) -> Vec<f64> {
        self.planes.iter().map(|p| p.depth).collect()
    }

    pub fn width(&self) -> usize {
        self.planes.first().map_or(0, |p| p.image.width)
    }

    pub fn height(&self) -> usize {
        self.planes.first().map_or(0, |p| p.image.height)
    }

    /// Flattened `[K, H, W, 3]` values.
    pub fn flat(&self) -> Vec<f64> {
        self.planes
            .iter()
            .flat_map(|p| p.image.data.iter().copied())
            .collect()
    }

    pub fn from_flat(shape: [usize; 4], depths: &[f64], data: &[f64]) -> Result<Self> {
        let [k, h, w, c] = shape;
        if c != 3 || depths.len() != k || data.len() != k * h * w * 3 {
            return Err(Error::Shape(format!(
                "MPLI tensor {shape:?} with {} depths and {} values",
                depths.len(),
                data.len()
            )));
        }
        let planes = data
            .chunks_exact(h * w * 3)
            .zip(depths)
            .map(|(chunk, &depth)| LightImage {
                image: Image {
                    width: w,
                    height: h,
                    data: chunk.to_vec(),
                },
                depth,
            })
            .collect();
        Ok(MultiPlaneLightImage { planes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpliSequence {
    pub mplis: Vec<MultiPlaneLightImage>,
    pub frame_count: usize,
}

/// Frustum point of pixel `(u, v)` on the plane at depth `depth`.
pub fn plane_point(intrinsics: &CameraIntrinsics, u: usize, v: usize, depth: f64) -> Vec3 {
    intrinsics.pixel_direction(u, v) * depth
}

pub fn render_light_image(
    lights: &[PointLight],
    depth: f64,
    intrinsics: &CameraIntrinsics,
    scalers: MpliScalers,
) -> Result<LightImage> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::NonPositiveDepth(depth));
    }
    if let Some(bad) = lights.iter().find(|l| !l.position.is_finite()) {
        return Err(Error::InvalidLight(format!(
            "non-finite light position {:?}",
            bad.position
        )));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut image = Image::zeros(w, h);
    for v in 0..h {
        for u in 0..w {
            let q = plane_point(intrinsics, u, v, depth);
            let mut acc = Vec3::ZERO;
            for l in lights {
                let r2 = (q - l.position).norm_squared();
                acc += l.color * (l.intensity / (r2 / scalers.s1 + scalers.s2));
            }
            image.set_pixel(u, v, acc.to_array());
        }
    }
    Ok(LightImage { image, depth })
}

fn check_depths(depths: &[f64]) -> Result<()> {
    if depths.is_empty() {
        return Err(Error::Config("at least one plane depth is required".into()));
    }
    if let Some(&d) = depths.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::NonPositiveDepth(d));
    }
    if depths.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::NonIncreasingDepths);
    }
    Ok(())
}

pub fn build_mpli(
    lights: &[PointLight],
    depths: &[f64],
    intrinsics: &CameraIntrinsics,
    scalers: MpliScalers,
) -> Result<MultiPlaneLightImage> {
    check_depths(depths)?;
    let planes = depths
        .iter()
        .map(|&d| render_light_image(lights, d, intrinsics, scalers))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiPlaneLightImage { planes })
}

/// Number of latent groups for a `4N+1`-frame clip (`N+1`).
pub fn group_count(frame_count: usize) -> usize {
    frame_count.div_ceil(4)
}

/// Representative frame of latent group `g`: frame 0 for the leading group,
/// otherwise the second frame of `[4g-3, 4g]`.
pub fn group_center_frame(g: usize) -> usize {
    if g == 0 {
        0
    } else {
        4 * g - 2
    }
}

pub fn build_mpli_sequence(
    script: &LightingScript,
    trajectory: &[CameraPose],
    intrinsics: &CameraIntrinsics,
    depths: &[f64],
    scalers: MpliScalers,
) -> Result<MpliSequence> {
    script.ensure_valid()?;
    if trajectory.len() != script.frame_count {
        return Err(Error::Shape(format!(
            "trajectory has {} poses for {} frames",
            trajectory.len(),
            script.frame_count
        )));
    }
    check_depths(depths)?;
    let first = &trajectory[0];
    let mplis = (0..group_count(script.frame_count))
        .into_par_iter()
        .map(|g| {
            let frame = group_center_frame(g);
            let t = script.frame_time(frame);
            let lights = script
                .lights_at(t)?
                .iter()
                .map(|l| transform_to_camera(l, first, &trajectory[frame]))
                .collect::<Result<Vec<_>>>()?;
            build_mpli(&lights, depths, intrinsics, scalers)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MpliSequence {
        mplis,
        frame_count: script.frame_count,
    })
}

/// Maps irradiance to the codec range: `clamp(v, 0, 1) * 2 - 1`.
pub fn normalize_for_codec(mpli: &MultiPlaneLightImage) -> MultiPlaneLightImage {
    MultiPlaneLightImage {
        planes: mpli
            .planes
            .iter()
            .map(|p| LightImage {
                image: p.image.map(|v| v.clamp(0.0, 1.0) * 2.0 - 1.0),
                depth: p.depth,
            })
            .collect(),
    }
}

/// K panels side by side in increasing depth order, tone-mapped by clamping.
pub fn visualize_mpli(mpli: &MultiPlaneLightImage) -> Result<Image> {
    let mut planes: Vec<&LightImage> = mpli.planes.iter().collect();
    planes.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let panels: Vec<Image> = planes
        .iter()
        .map(|p| p.image.map(|v| v.clamp(0.0, 1.0)))
        .collect();
    Image::hstack(&panels)
}

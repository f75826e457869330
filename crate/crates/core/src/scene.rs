//! Deterministic ray-cast renderer for paired relighting clips.
//!
//! Surfaces are Lambertian spheres over an optional ground plane. Each point
//! light contributes `I * c * max(0, n.l) / r^2`, gated by a hard shadow test
//! against every sphere. Output is linear RGB clamped to [0, 1].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{Image, Video};
use crate::light::{
    sample_track, CameraIntrinsics, CameraPose, LightTrack, LightingScript, PointLight,
};

const HIT_EPS: f64 = 1e-7;

/// Keyframed 3-vector with linear interpolation and constant extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTrack {
    pub keys: Vec<(f64, Vec3)>,
}

impl PositionTrack {
    pub fn constant(p: Vec3) -> Self {
        PositionTrack {
            keys: vec![(0.0, p)],
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        let keys = &self.keys;
        let (t0, p0) = keys[0];
        let (tn, pn) = keys[keys.len() - 1];
        if t <= t0 {
            return p0;
        }
        if t >= tn {
            return pn;
        }
        let hi = keys.partition_point(|k| k.0 <= t);
        let (ta, pa) = keys[hi - 1];
        let (tb, pb) = keys[hi];
        pa.lerp(pb, (t - ta) / (tb - ta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: PositionTrack,
    pub radius: f64,
    pub albedo: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    /// The plane `y = height`; +y points down, so the surface faces -y.
    pub height: f64,
    pub albedo: Vec3,
}

/// Scene geometry in world coordinates, which coincide with the camera frame
/// of the first video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub spheres: Vec<Sphere>,
    pub ground: Option<GroundPlane>,
    pub ambient: Vec3,
    pub base_lights: Vec<LightTrack>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spheres.is_empty() && self.ground.is_none() {
            return Err(Error::Config("scene has no objects".into()));
        }
        let in_unit = |c: Vec3| c.is_finite() && c.min_element() >= 0.0 && c.max_element() <= 1.0;
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0) {
                return Err(Error::Config(format!("sphere {i} has non-positive radius")));
            }
            if !in_unit(s.albedo) {
                return Err(Error::Config(format!("sphere {i} albedo outside [0,1]")));
            }
            if s.center.keys.is_empty() {
                return Err(Error::Config(format!("sphere {i} has no center keyframes")));
            }
        }
        if let Some(g) = &self.ground {
            if !in_unit(g.albedo) {
                return Err(Error::Config("ground albedo outside [0,1]".into()));
            }
        }
        if !in_unit(self.ambient) {
            return Err(Error::Config("ambient outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn base_lights_at(&self, t: f64) -> Result<Vec<PointLight>> {
        self.base_lights
            .iter()
            .map(|tr| sample_track(tr, t))
            .collect()
    }

    /// Mean of the sphere centres at time `t`.
    pub fn centroid(&self, t: f64) -> Vec3 {
        if self.spheres.is_empty() {
            return Vec3::new(0.0, 0.0, 1.0);
        }
        let sum = self
            .spheres
            .iter()
            .fold(Vec3::ZERO, |acc, s| acc + s.center.at(t));
        sum / self.spheres.len() as f64
    }

    fn posed_spheres(&self, t: f64) -> Vec<(Vec3, f64, Vec3)> {
        self.spheres
            .iter()
            .map(|s| (s.center.at(t), s.radius, s.albedo))
            .collect()
    }
}

/// One entry of `trajectory.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    pub t: f64,
    pub position: Vec3,
    pub look_at: Vec3,
}

impl CameraKey {
    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::look_at(self.position, self.look_at, self.t)
    }
}

pub fn poses(keys: &[CameraKey]) -> Result<Vec<CameraPose>> {
    keys.iter().map(CameraKey::pose).collect()
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    distance: f64,
    point: Vec3,
    normal: Vec3,
    albedo: Vec3,
}

fn ray_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > HIT_EPS {
        return Some(t0);
    }
    let t1 = -b + sq;
    (t1 > HIT_EPS).then_some(t1)
}

fn nearest_hit(
    origin: Vec3,
    dir: Vec3,
    spheres: &[(Vec3, f64, Vec3)],
    ground: Option<&GroundPlane>,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for &(c, r, albedo) in spheres {
        if let Some(t) = ray_sphere(origin, dir, c, r) {
            if best.is_none_or(|b| t < b.distance) {
                let point = origin + dir * t;
                best = Some(Hit {
                    distance: t,
                    point,
                    normal: (point - c) / r,
                    albedo,
                });
            }
        }
    }
    if let Some(g) = ground {
        if dir.y.abs() > 1e-12 {
            let t = (g.height - origin.y) / dir.y;
            if t > HIT_EPS && best.is_none_or(|b| t < b.distance) {
                let normal = if origin.y < g.height {
                    Vec3::new(0.0, -1.0, 0.0)
                } else {
                    Vec3::new(0.0, 1.0, 0.0)
                };
                best = Some(Hit {
                    distance: t,
                    point: origin + dir * t,
                    normal,
                    albedo: g.albedo,
                });
            }
        }
    }
    best
}

/// Hard shadow test: 1 when no sphere blocks the segment from `point` to the
/// light, else 0.
pub fn visibility(point: Vec3, normal: Vec3, light: Vec3, spheres: &[(Vec3, f64)]) -> f64 {
    let origin = point + normal * 1e-6;
    let to_light = light - origin;
    let dist = to_light.norm();
    let dir = to_light / dist;
    for &(c, r) in spheres {
        if let Some(t) = ray_sphere(origin, dir, c, r) {
            if t < dist {
                return 0.0;
            }
        }
    }
    1.0
}

/// Direct lighting at a surface point, before albedo.
fn irradiance(hit: &Hit, lights: &[PointLight], occluders: &[(Vec3, f64)]) -> Vec3 {
    let mut acc = Vec3::ZERO;
    for l in lights {
        if l.intensity == 0.0 {
            continue;
        }
        let to_light = l.position - hit.point;
        let d2 = to_light.norm_squared();
        let ndl = hit.normal.dot(to_light / d2.sqrt());
        if ndl <= 0.0 {
            continue;
        }
        let vis = visibility(hit.point, hit.normal, l.position, occluders);
        if vis > 0.0 {
            acc += l.color * (l.intensity * ndl / d2);
        }
    }
    acc
}

/// Per-pixel radiance before clamping. `include_ambient = false` drops the
/// ambient term everywhere, including on background pixels.
pub fn render_frame_linear(
    scene: &SceneSpec,
    pose: &CameraPose,
    lights: &[PointLight],
    t: f64,
    intrinsics: &CameraIntrinsics,
    include_ambient: bool,
) -> Image {
    let spheres = scene.posed_spheres(t);
    let occluders: Vec<(Vec3, f64)> = spheres.iter().map(|&(c, r, _)| (c, r)).collect();
    let ambient = if include_ambient {
        scene.ambient
    } else {
        Vec3::ZERO
    };
    let mut img = Image::zeros(intrinsics.width, intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir = pose.ray_direction(intrinsics, u, v);
            let rgb = match nearest_hit(pose.position, dir, &spheres, scene.ground.as_ref()) {
                Some(hit) => hit
                    .albedo
                    .hadamard(ambient + irradiance(&hit, lights, &occluders)),
                None => ambient,
            };
            img.set_pixel(u, v, rgb.to_array());
        }
    }
    img
}

/// Renders one frame with exactly `lights` (world coordinates) plus ambient.
pub fn render_frame(
    scene: &SceneSpec,
    pose: &CameraPose,
    lights: &[PointLight],
    t: f64,
    intrinsics: &CameraIntrinsics,
) -> Image {
    render_frame_linear(scene, pose, lights, t, intrinsics, true).map(|v| v.clamp(0.0, 1.0))
}

/// Distance to the first surface along each pixel ray; infinity for background.
pub fn render_depth(
    scene: &SceneSpec,
    pose: &CameraPose,
    t: f64,
    intrinsics: &CameraIntrinsics,
) -> Vec<f64> {
    let spheres = scene.posed_spheres(t);
    let mut out = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir = pose.ray_direction(intrinsics, u, v);
            out.push(
                nearest_hit(pose.position, dir, &spheres, scene.ground.as_ref())
                    .map_or(f64::INFINITY, |h| h.distance),
            );
        }
    }
    out
}

/// Lights active in frame `frame`: base lights plus any added lights, all in
/// world coordinates.
pub fn frame_lights(
    scene: &SceneSpec,
    added: Option<&LightingScript>,
    first_pose: &CameraPose,
    t: f64,
) -> Result<Vec<PointLight>> {
    let mut lights = scene.base_lights_at(t)?;
    if let Some(script) = added {
        for l in script.lights_at(t)? {
            lights.push(PointLight {
                position: first_pose.camera_to_world(l.position),
                ..l
            });
        }
    }
    Ok(lights)
}

pub fn render_video(
    scene: &SceneSpec,
    trajectory: &[CameraPose],
    added: Option<&LightingScript>,
    intrinsics: &CameraIntrinsics,
    fps: f64,
) -> Result<Video> {
    scene.validate()?;
    let first = trajectory
        .first()
        .ok_or_else(|| Error::Shape("empty trajectory".into()))?;
    if let Some(script) = added {
        script.ensure_valid()?;
        if script.frame_count != trajectory.len() {
            return Err(Error::Shape(format!(
                "trajectory has {} poses, script expects {} frames",
                trajectory.len(),
                script.frame_count
            )));
        }
    }
    let frames = trajectory
        .par_iter()
        .enumerate()
        .map(|(f, pose)| {
            let t = f as f64 / fps;
            let lights = frame_lights(scene, added, first, t)?;
            Ok(render_frame(scene, pose, &lights, t, intrinsics))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Video { frames, fps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub source: Video,
    pub target: Video,
    pub script: LightingScript,
    pub trajectory: Vec<CameraKey>,
    pub seed: u64,
}

pub fn generate_pair(
    scene: &SceneSpec,
    trajectory: &[CameraKey],
    script: &LightingScript,
    intrinsics: &CameraIntrinsics,
    seed: u64,
) -> Result<RenderedPair> {
    let poses = poses(trajectory)?;
    let source = render_video(scene, &poses, None, intrinsics, script.fps)?;
    let target = render_video(scene, &poses, Some(script), intrinsics, script.fps)?;
    Ok(RenderedPair {
        source,
        target,
        script: script.clone(),
        trajectory: trajectory.to_vec(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(24.0, 24, 24).unwrap()
    }

    fn one_sphere(ambient: f64) -> SceneSpec {
        SceneSpec {
            spheres: vec![Sphere {
                center: PositionTrack::constant(Vec3::new(0.0, 0.0, 4.0)),
                radius: 1.0,
                albedo: Vec3::new(0.8, 0.6, 0.4),
            }],
            ground: None,
            ambient: Vec3::splat(ambient),
            base_lights: vec![],
        }
    }

    #[test]
    fn dark_scene_is_black() {
        let img = render_frame(
            &one_sphere(0.0),
            &CameraPose::identity(0.0),
            &[],
            0.0,
            &intr(),
        );
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn background_is_ambient() {
        let img = render_frame(
            &one_sphere(0.1),
            &CameraPose::identity(0.0),
            &[],
            0.0,
            &intr(),
        );
        assert_eq!(img.pixel(0, 0), [0.1, 0.1, 0.1]);
    }

    #[test]
    fn brightest_pixel_faces_the_light() {
        let scene = one_sphere(0.0);
        let light = PointLight::white(Vec3::new(0.0, 0.0, 1.5), 1.0);
        let pose = CameraPose::identity(0.0);
        let img = render_frame_linear(&scene, &pose, &[light], 0.0, &intr(), true);
        // brute force over pixels: score each hit point by n.l / r^2 directly
        let mut best = (0, 0);
        let mut best_score = f64::NEG_INFINITY;
        let c = Vec3::new(0.0, 0.0, 4.0);
        for v in 0..24 {
            for u in 0..24 {
                let dir = pose.ray_direction(&intr(), u, v);
                if let Some(t) = ray_sphere(Vec3::ZERO, dir, c, 1.0) {
                    let x = dir * t;
                    let n = (x - c).normalized();
                    let l = light.position - x;
                    let score = n.dot(l.normalized()).max(0.0) / l.norm_squared();
                    if score > best_score {
                        best_score = score;
                        best = (u, v);
                    }
                }
            }
        }
        assert_eq!(img.argmax_pixel(), best);
    }

    #[test]
    fn doubling_intensity_doubles_direct_light() {
        let scene = one_sphere(0.0);
        let pose = CameraPose::identity(0.0);
        let l1 = PointLight::white(Vec3::new(0.5, -1.0, 1.0), 1.5);
        let l2 = PointLight {
            intensity: 3.0,
            ..l1
        };
        let a = render_frame_linear(&scene, &pose, &[l1], 0.0, &intr(), false);
        let b = render_frame_linear(&scene, &pose, &[l2], 0.0, &intr(), false);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn occluder_casts_shadow() {
        let ground = GroundPlane {
            height: 1.0,
            albedo: Vec3::splat(0.5),
        };
        let light = Vec3::new(0.0, -3.0, 4.0);
        let ground_pt = Vec3::new(0.0, 1.0, 4.0);
        let blocker = SceneSpec {
            spheres: vec![Sphere {
                center: PositionTrack::constant(Vec3::new(0.0, -1.0, 4.0)),
                radius: 0.5,
                albedo: Vec3::splat(0.5),
            }],
            ground: Some(ground),
            ambient: Vec3::ZERO,
            base_lights: vec![],
        };
        let occ = [(Vec3::new(0.0, -1.0, 4.0), 0.5)];
        let n = Vec3::new(0.0, -1.0, 0.0);
        assert_eq!(visibility(ground_pt, n, light, &occ), 0.0);
        // brute-force oracle: march the segment and check containment
        let steps = 10_000;
        let blocked = (1..steps).any(|i| {
            let p = ground_pt.lerp(light, i as f64 / steps as f64);
            (p - occ[0].0).norm() < occ[0].1
        });
        assert!(blocked);
        assert_eq!(visibility(Vec3::new(2.0, 1.0, 4.0), n, light, &occ), 1.0);
        blocker.validate().unwrap();
    }

    #[test]
    fn scene_validation() {
        let mut s = one_sphere(0.1);
        s.spheres[0].radius = 0.0;
        assert!(s.validate().is_err());
        let empty = SceneSpec {
            spheres: vec![],
            ground: None,
            ambient: Vec3::ZERO,
            base_lights: vec![],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn position_track_interpolates() {
        let tr = PositionTrack {
            keys: vec![(0.0, Vec3::ZERO), (2.0, Vec3::new(2.0, 0.0, 0.0))],
        };
        assert_eq!(tr.at(1.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(tr.at(5.0), Vec3::new(2.0, 0.0, 0.0));
    }
}

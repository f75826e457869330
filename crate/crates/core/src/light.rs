//! Point lights, keyframed light tracks, cameras and lighting scripts.
//!
//! Light positions in a [`LightingScript`] are expressed in the camera frame
//! of the first video frame (camera centre at the origin, looking along +Z,
//! image x right and y down). [`transform_to_camera`] re-expresses them for
//! any later camera pose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: Vec3,
    pub color: Vec3,
    pub intensity: f64,
}

impl PointLight {
    pub fn new(position: Vec3, color: Vec3, intensity: f64) -> Result<Self> {
        let light = PointLight {
            position,
            color,
            intensity,
        };
        match light.violations().first() {
            Some((_, msg)) => Err(Error::InvalidLight(msg.clone())),
            None => Ok(light),
        }
    }

    pub fn white(position: Vec3, intensity: f64) -> Self {
        PointLight {
            position,
            color: Vec3::ONE,
            intensity,
        }
    }

    /// `(field, message)` pairs for every broken invariant.
    fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !self.position.is_finite() {
            out.push(("position", "non-finite position".to_string()));
        }
        let c = self.color;
        if !c.is_finite() || c.min_element() < 0.0 || c.max_element() > 1.0 {
            out.push(("color", "color channel outside [0,1]".to_string()));
        }
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            out.push(("intensity", "negative or non-finite intensity".to_string()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    #[serde(flatten)]
    pub light: PointLight,
}

/// A light whose parameters are linearly interpolated between keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightTrack {
    pub keyframes: Vec<Keyframe>,
}

impl LightTrack {
    pub fn constant(light: PointLight) -> Self {
        LightTrack {
            keyframes: vec![Keyframe { t: 0.0, light }],
        }
    }

    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self> {
        let track = LightTrack { keyframes };
        let mut problems = Vec::new();
        track.collect_violations("track", &mut problems);
        if problems.is_empty() {
            Ok(track)
        } else {
            Err(Error::InvalidScript(
                problems.into_iter().map(|v| v.to_string()).collect(),
            ))
        }
    }

    fn collect_violations(&self, path: &str, out: &mut Vec<Violation>) {
        if self.keyframes.is_empty() {
            out.push(Violation::new(format!("{path}.keyframes"), "empty track"));
        }
        for (i, pair) in self.keyframes.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) {
                out.push(Violation::new(
                    format!("{path}.keyframes[{}].t", i + 1),
                    "non-increasing keyframe times",
                ));
            }
        }
        for (i, k) in self.keyframes.iter().enumerate() {
            if !k.t.is_finite() {
                out.push(Violation::new(
                    format!("{path}.keyframes[{i}].t"),
                    "non-finite keyframe time",
                ));
            }
            for (field, msg) in k.light.violations() {
                out.push(Violation::new(
                    format!("{path}.keyframes[{i}].{field}"),
                    msg,
                ));
            }
        }
    }
}

/// Evaluates a track at time `t`, clamping outside the keyframe range.
pub fn sample_track(track: &LightTrack, t: f64) -> Result<PointLight> {
    let keys = &track.keyframes;
    let first = keys.first().ok_or(Error::EmptyTrack)?;
    let last = keys[keys.len() - 1];
    let raw = if t <= first.t {
        first.light
    } else if t >= last.t {
        last.light
    } else {
        // first index whose time exceeds t; guaranteed in 1..len
        let hi = keys.partition_point(|k| k.t <= t);
        let (a, b) = (&keys[hi - 1], &keys[hi]);
        if t == a.t {
            a.light
        } else {
            let w = (t - a.t) / (b.t - a.t);
            PointLight {
                position: a.light.position.lerp(b.light.position, w),
                color: a.light.color.lerp(b.light.color, w),
                intensity: a.light.intensity + (b.light.intensity - a.light.intensity) * w,
            }
        }
    };
    Ok(PointLight {
        position: raw.position,
        color: raw.color.clamp(0.0, 1.0),
        intensity: raw.intensity.max(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Camera centre in world coordinates.
    pub position: Vec3,
    /// Camera-to-world rotation.
    pub rotation: Rotation,
    pub timestamp: f64,
}

impl CameraPose {
    pub fn identity(timestamp: f64) -> Self {
        CameraPose {
            position: Vec3::ZERO,
            rotation: Rotation::IDENTITY,
            timestamp,
        }
    }

    pub fn look_at(eye: Vec3, target: Vec3, timestamp: f64) -> Result<Self> {
        let rotation = Rotation::look_at(eye, target)
            .ok_or_else(|| Error::InvalidPose("degenerate look-at direction".into()))?;
        Ok(CameraPose {
            position: eye,
            rotation,
            timestamp,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::InvalidPose("non-finite position".into()));
        }
        let err = self.rotation.orthonormality_error();
        if !(err <= 1e-6) {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p) + self.position
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.apply_transpose(p - self.position)
    }

    /// World-space direction of the ray through pixel centre `(u, v)`.
    pub fn ray_direction(&self, intrinsics: &CameraIntrinsics, u: usize, v: usize) -> Vec3 {
        let d = intrinsics.pixel_direction(u, v);
        self.rotation.apply(d).normalized()
    }
}

/// Re-expresses a light given in first-frame camera coordinates in the
/// camera frame of `pose_now`.
pub fn transform_to_camera(
    light: &PointLight,
    pose_first: &CameraPose,
    pose_now: &CameraPose,
) -> Result<PointLight> {
    pose_first.validate()?;
    pose_now.validate()?;
    let world = pose_first.camera_to_world(light.position);
    Ok(PointLight {
        position: pose_now.world_to_camera(world),
        ..*light
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    /// Principal point in pixels; `None` means the image centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<(f64, f64)>,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64, width: usize, height: usize) -> Result<Self> {
        if !(focal_px > 0.0 && focal_px.is_finite()) || width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "invalid intrinsics: focal {focal_px}, {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            focal_px,
            width,
            height,
            principal: None,
        })
    }

    pub fn principal_point(&self) -> (f64, f64) {
        self.principal
            .unwrap_or((self.width as f64 / 2.0, self.height as f64 / 2.0))
    }

    /// Camera-frame point on the `z = 1` plane through the centre of pixel
    /// `(u, v)`.
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vec3 {
        let (cx, cy) = self.principal_point();
        Vec3::new(
            (u as f64 + 0.5 - cx) / self.focal_px,
            (v as f64 + 0.5 - cy) / self.focal_px,
            1.0,
        )
    }

    /// Continuous pixel coordinates of a camera-frame point, if in front.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let (cx, cy) = self.principal_point();
        Some((
            p.x / p.z * self.focal_px + cx - 0.5,
            p.y / p.z * self.focal_px + cy - 0.5,
        ))
    }
}

/// The lights added on top of a scene for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingScript {
    pub fps: f64,
    pub frame_count: usize,
    pub tracks: Vec<LightTrack>,
}

impl LightingScript {
    pub fn duration(&self) -> f64 {
        (self.frame_count.saturating_sub(1)) as f64 / self.fps
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    /// All lights at time `t`, still in first-frame camera coordinates.
    pub fn lights_at(&self, t: f64) -> Result<Vec<PointLight>> {
        self.tracks.iter().map(|tr| sample_track(tr, t)).collect()
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_script(self);
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidScript(
                report.violations.iter().map(|v| v.to_string()).collect(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, message: &str) -> bool {
        self.violations.iter().any(|v| v.message == message)
    }
}

pub fn validate_script(script: &LightingScript) -> ValidationReport {
    let mut violations = Vec::new();
    if script.frame_count % 4 != 1 {
        violations.push(Violation::new("frame_count", "frame_count mod 4 != 1"));
    }
    if script.frame_count < 5 {
        violations.push(Violation::new("frame_count", "frame_count < 5"));
    }
    let fps_ok = script.fps.is_finite() && script.fps > 0.0;
    if !fps_ok {
        violations.push(Violation::new("fps", "fps must be positive"));
    }
    let duration = script.duration();
    for (i, track) in script.tracks.iter().enumerate() {
        let path = format!("tracks[{i}]");
        track.collect_violations(&path, &mut violations);
        if fps_ok {
            for (j, k) in track.keyframes.iter().enumerate() {
                if k.t < 0.0 || k.t > duration + 1e-9 {
                    violations.push(Violation::new(
                        format!("{path}.keyframes[{j}].t"),
                        format!("keyframe time outside [0, {duration}]"),
                    ));
                }
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn light(pos: [f64; 3], color: [f64; 3], intensity: f64) -> PointLight {
        PointLight {
            position: pos.into(),
            color: color.into(),
            intensity,
        }
    }

    fn key(t: f64, l: PointLight) -> Keyframe {
        Keyframe { t, light: l }
    }

    #[test]
    fn single_keyframe_extrapolates_constantly() {
        let l = light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 5.0);
        let track = LightTrack::constant(l);
        assert_eq!(sample_track(&track, 10.0).unwrap(), l);
        assert_eq!(sample_track(&track, -3.0).unwrap(), l);
    }

    #[test]
    fn midpoint_intensity() {
        let a = light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 0.0);
        let b = light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 8.0);
        let track = LightTrack::new(vec![key(0.0, a), key(2.0, b)]).unwrap();
        let s = sample_track(&track, 1.0).unwrap();
        assert_eq!(s.intensity, 4.0);
        assert_eq!(s.position, a.position);
        assert_eq!(s.color, a.color);
    }

    #[test]
    fn position_and_color_lerp() {
        let a = light([-1.0, -1.0, 2.0], [1.0, 0.0, 0.0], 1.0);
        let b = light([1.0, 1.0, 2.0], [0.0, 1.0, 0.0], 1.0);
        let track = LightTrack::new(vec![key(0.0, a), key(4.0, b)]).unwrap();
        let s = sample_track(&track, 2.0).unwrap();
        assert_eq!(s.position, Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(s.color, Vec3::new(0.5, 0.5, 0.0));
    }

    #[test]
    fn empty_track_errors() {
        let track = LightTrack { keyframes: vec![] };
        let err = sample_track(&track, 0.0).unwrap_err();
        assert_eq!(err.to_string(), "empty track");
    }

    #[test]
    fn exact_at_keyframes() {
        let keys = vec![
            key(0.0, light([0.1, 0.2, 3.0], [0.2, 0.4, 0.9], 1.5)),
            key(0.7, light([-2.0, 0.5, 1.0], [1.0, 0.0, 0.3], 7.25)),
            key(1.9, light([0.0, 0.0, 6.0], [0.5, 0.5, 0.5], 0.0)),
        ];
        let track = LightTrack::new(keys.clone()).unwrap();
        for k in keys {
            assert_eq!(sample_track(&track, k.t).unwrap(), k.light);
        }
    }

    #[test]
    fn identity_transform() {
        let pose =
            CameraPose::look_at(Vec3::new(0.3, -0.1, 0.2), Vec3::new(0.0, 0.0, 4.0), 0.0).unwrap();
        let l = light([0.5, -0.5, 2.0], [1.0, 0.5, 0.0], 3.0);
        let out = transform_to_camera(&l, &pose, &pose).unwrap();
        assert!((out.position - l.position).norm() < 1e-12);
        assert_eq!(out.color, l.color);
        assert_eq!(out.intensity, l.intensity);
    }

    #[test]
    fn translated_camera() {
        let first = CameraPose::identity(0.0);
        let now = CameraPose {
            position: Vec3::new(1.0, 0.0, 0.0),
            ..CameraPose::identity(1.0)
        };
        let l = light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 1.0);
        let out = transform_to_camera(&l, &first, &now).unwrap();
        assert_eq!(out.position, Vec3::new(-1.0, 0.0, 2.0));
    }

    #[test]
    fn yawed_camera_preserves_distance() {
        let first = CameraPose::identity(0.0);
        let now = CameraPose {
            rotation: Rotation::yaw(std::f64::consts::FRAC_PI_2),
            ..CameraPose::identity(1.0)
        };
        let l = light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 1.0);
        let out = transform_to_camera(&l, &first, &now).unwrap();
        assert!((out.position.norm() - 2.0).abs() < 1e-12);
        // +90° yaw: the old forward axis now lies along camera -x
        assert!((out.position - Vec3::new(-2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let first = CameraPose::identity(0.0);
        let mut bad = CameraPose::identity(0.0);
        bad.rotation.0[0][0] = 1.1;
        let l = light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 1.0);
        assert!(matches!(
            transform_to_camera(&l, &first, &bad),
            Err(Error::InvalidPose(_))
        ));
    }

    fn script(frame_count: usize, times: &[f64]) -> LightingScript {
        let keys = times
            .iter()
            .map(|&t| key(t, light([0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 1.0)))
            .collect();
        LightingScript {
            fps: 8.0,
            frame_count,
            tracks: vec![LightTrack { keyframes: keys }],
        }
    }

    #[test]
    fn valid_script_has_empty_report() {
        assert!(validate_script(&script(17, &[0.0, 1.0, 2.0])).is_valid());
    }

    #[test]
    fn frame_count_16_flagged() {
        let r = validate_script(&script(16, &[0.0]));
        assert!(r.mentions("frame_count mod 4 != 1"), "{r:?}");
    }

    #[test]
    fn repeated_keyframe_time_flagged() {
        let r = validate_script(&script(17, &[1.0, 1.0]));
        assert!(r.mentions("non-increasing keyframe times"));
        assert_eq!(r.violations[0].path, "tracks[0].keyframes[1].t");
    }

    #[test]
    fn out_of_range_fields_reported_with_paths() {
        let mut s = script(17, &[0.0, 5.0]);
        s.tracks[0].keyframes[0].light.intensity = -1.0;
        s.tracks[0].keyframes[0].light.color.y = 1.5;
        let r = validate_script(&s);
        let paths: Vec<_> = r.violations.iter().map(|v| v.path.as_str()).collect();
        assert!(paths.contains(&"tracks[0].keyframes[0].intensity"));
        assert!(paths.contains(&"tracks[0].keyframes[0].color"));
        assert!(paths.contains(&"tracks[0].keyframes[1].t"));
    }

    #[test]
    fn script_json_schema() {
        let s = script(17, &[0.0]);
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        let k = &v["tracks"][0]["keyframes"][0];
        assert_eq!(k["t"], 0.0);
        assert_eq!(k["position"], serde_json::json!([0.0, 0.0, 2.0]));
        assert_eq!(k["color"], serde_json::json!([1.0, 1.0, 1.0]));
        assert_eq!(k["intensity"], 1.0);
        let back: LightingScript = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}

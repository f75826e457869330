//! Lossless space-to-depth video codec.
//!
//! A clip of `4N+1` frames is padded to `4(N+1)` frames by replicating the
//! first frame three times at the front. Every run of four frames becomes one
//! latent group of shape `[C, H/s, W/s]` with `C = 3 * 4 * s^2`: the temporal
//! offset and the `s x s` spatial block are folded into channels as
//! `c = ((f * s + dy) * s + dx) * 3 + rgb`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mpli::MultiPlaneLightImage;

pub const FRAMES_PER_GROUP: usize = 4;
pub const DEFAULT_SPATIAL: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub groups: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spatial: usize,
    /// Frame count of the unpadded clip.
    pub frame_count: usize,
    pub data: Vec<f64>,
}

impl LatentVideo {
    pub fn group_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn group(&self, g: usize) -> &[f64] {
        let n = self.group_len();
        &self.data[g * n..(g + 1) * n]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.groups, self.channels, self.height, self.width]
    }

    pub fn sidecar(&self) -> CodecSidecar {
        CodecSidecar {
            spatial: self.spatial,
            frame_count: self.frame_count,
            planes: None,
        }
    }

    /// Stacks per-MPLI light latents into a sequence aligned with a video
    /// latent of `frame_count` frames.
    pub fn from_light_latents(latents: &[LightLatent], frame_count: usize) -> Result<Self> {
        let first = latents
            .first()
            .ok_or_else(|| Error::Shape("no light latents".into()))?;
        if latents.iter().any(|l| {
            l.channels != first.channels
                || l.height != first.height
                || l.width != first.width
                || l.spatial != first.spatial
        }) {
            return Err(Error::Shape("light latents disagree in shape".into()));
        }
        let mut data = Vec::with_capacity(latents.len() * first.data.len());
        for l in latents {
            data.extend_from_slice(&l.data);
        }
        Ok(LatentVideo {
            groups: latents.len(),
            channels: first.channels,
            height: first.height,
            width: first.width,
            spatial: first.spatial,
            frame_count,
            data,
        })
    }
}

/// Encoded MPLI: one latent group.
#[derive(Debug, Clone, PartialEq)]
pub struct LightLatent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spatial: usize,
    /// Plane count of the source MPLI (1 or 4).
    pub planes: usize,
    pub data: Vec<f64>,
}

/// JSON sidecar stored next to latent tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSidecar {
    pub spatial: usize,
    pub frame_count: usize,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub planes: Option<usize>,
}

pub fn latent_channels(spatial: usize) -> usize {
    3 * FRAMES_PER_GROUP * spatial * spatial
}

fn check_frame_count(n: usize) -> Result<()> {
    if n % 4 != 1 {
        return Err(Error::FrameCount(n));
    }
    Ok(())
}

/// Prepends three copies of frame 0.
pub fn pad_frames(frames: &[Image]) -> Result<Vec<Image>> {
    check_frame_count(frames.len())?;
    let mut out = Vec::with_capacity(frames.len() + 3);
    for _ in 0..3 {
        out.push(frames[0].clone());
    }
    out.extend_from_slice(frames);
    Ok(out)
}

/// Drops the three leading dummy frames added by [`pad_frames`].
pub fn unpad_frames(mut frames: Vec<Image>) -> Result<Vec<Image>> {
    if frames.len() < 4 || !frames.len().is_multiple_of(4) {
        return Err(Error::Shape(format!(
            "cannot unpad {} frames",
            frames.len()
        )));
    }
    frames.drain(..3);
    Ok(frames)
}

fn fold_group(frames: &[&Image], s: usize, out: &mut [f64]) {
    let (w, h) = (frames[0].width, frames[0].height);
    let (lw, lh) = (w / s, h / s);
    for (f, frame) in frames.iter().enumerate() {
        for y in 0..lh {
            for dy in 0..s {
                for x in 0..lw {
                    for dx in 0..s {
                        let src = frame.index(x * s + dx, y * s + dy);
                        for ch in 0..3 {
                            let c = ((f * s + dy) * s + dx) * 3 + ch;
                            out[(c * lh + y) * lw + x] = frame.data[src + ch];
                        }
                    }
                }
            }
        }
    }
}

fn unfold_group(data: &[f64], s: usize, lh: usize, lw: usize) -> Vec<Image> {
    let mut frames = vec![Image::zeros(lw * s, lh * s); FRAMES_PER_GROUP];
    for (f, frame) in frames.iter_mut().enumerate() {
        for y in 0..lh {
            for dy in 0..s {
                for x in 0..lw {
                    for dx in 0..s {
                        let dst = frame.index(x * s + dx, y * s + dy);
                        for ch in 0..3 {
                            let c = ((f * s + dy) * s + dx) * 3 + ch;
                            frame.data[dst + ch] = data[(c * lh + y) * lw + x];
                        }
                    }
                }
            }
        }
    }
    frames
}

fn check_frames(frames: &[Image], spatial: usize) -> Result<(usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Shape("no frames to encode".into()))?;
    if spatial == 0 {
        return Err(Error::Config("spatial factor must be >= 1".into()));
    }
    if frames.iter().any(|f| !f.same_shape(first)) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    if first.width % spatial != 0 || first.height % spatial != 0 {
        return Err(Error::Shape(format!(
            "{}x{} frames are not divisible by spatial factor {spatial}",
            first.width, first.height
        )));
    }
    Ok((first.width, first.height))
}

/// Encodes an already padded frame stack (length divisible by 4).
pub fn encode(frames: &[Image], spatial: usize) -> Result<LatentVideo> {
    let (w, h) = check_frames(frames, spatial)?;
    if !frames.len().is_multiple_of(FRAMES_PER_GROUP) {
        return Err(Error::Shape(format!(
            "{} frames do not split into groups of four",
            frames.len()
        )));
    }
    let groups = frames.len() / FRAMES_PER_GROUP;
    let channels = latent_channels(spatial);
    let (lw, lh) = (w / spatial, h / spatial);
    let glen = channels * lh * lw;
    let mut data = vec![0.0; groups * glen];
    for (g, chunk) in frames.chunks_exact(FRAMES_PER_GROUP).enumerate() {
        let refs: Vec<&Image> = chunk.iter().collect();
        fold_group(&refs, spatial, &mut data[g * glen..(g + 1) * glen]);
    }
    Ok(LatentVideo {
        groups,
        channels,
        height: lh,
        width: lw,
        spatial,
        frame_count: frames.len() - 3,
        data,
    })
}

/// Pads and encodes a `4N+1`-frame clip.
pub fn encode_video(frames: &[Image], spatial: usize) -> Result<LatentVideo> {
    encode(&pad_frames(frames)?, spatial)
}

/// Inverse of [`encode`]: returns all `4G` frames, padding included.
pub fn decode(latent: &LatentVideo) -> Result<Vec<Image>> {
    let s = latent.spatial;
    if latent.channels != latent_channels(s)
        || latent.data.len() != latent.groups * latent.group_len()
    {
        return Err(Error::Shape(format!(
            "latent {:?} with spatial factor {s} and {} values",
            latent.shape(),
            latent.data.len()
        )));
    }
    let mut frames = Vec::with_capacity(latent.groups * FRAMES_PER_GROUP);
    for g in 0..latent.groups {
        frames.extend(unfold_group(
            latent.group(g),
            s,
            latent.height,
            latent.width,
        ));
    }
    Ok(frames)
}

/// Decodes and drops the padding, recovering the original `4N+1` frames.
pub fn decode_video(latent: &LatentVideo) -> Result<Vec<Image>> {
    unpad_frames(decode(latent)?)
}

/// Encodes a normalized MPLI: its four planes play the role of four frames.
/// A single-plane MPLI is replicated four times.
pub fn encode_mpli(mpli: &MultiPlaneLightImage, spatial: usize) -> Result<LightLatent> {
    let k = mpli.plane_count();
    let frames: Vec<&Image> = match k {
        4 => mpli.planes.iter().map(|p| &p.image).collect(),
        1 => vec![&mpli.planes[0].image; 4],
        _ => return Err(Error::PlaneCount(k)),
    };
    let owned: Vec<Image> = frames.iter().map(|&f| f.clone()).collect();
    let (w, h) = check_frames(&owned, spatial)?;
    let channels = latent_channels(spatial);
    let (lw, lh) = (w / spatial, h / spatial);
    let mut data = vec![0.0; channels * lh * lw];
    fold_group(&frames, spatial, &mut data);
    Ok(LightLatent {
        channels,
        height: lh,
        width: lw,
        spatial,
        planes: k,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpli::{LightImage, MultiPlaneLightImage};

    fn ramp(w: usize, h: usize, seed: f64) -> Image {
        let mut img = Image::zeros(w, h);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i as f64 * 0.37 + seed).sin() + 1.0) / 2.0;
        }
        img
    }

    #[test]
    fn padding_lengths() {
        for (n, want) in [(1, 4), (5, 8), (17, 20), (77, 80)] {
            let frames = vec![Image::zeros(4, 4); n];
            assert_eq!(pad_frames(&frames).unwrap().len(), want);
        }
        assert!(matches!(
            pad_frames(&vec![Image::zeros(4, 4); 16]),
            Err(Error::FrameCount(16))
        ));
    }

    #[test]
    fn padding_replicates_first_frame() {
        let frames: Vec<Image> = (0..5).map(|i| ramp(4, 4, i as f64)).collect();
        let padded = pad_frames(&frames).unwrap();
        for f in &padded[..3] {
            assert_eq!(f, &frames[0]);
        }
        assert_eq!(&padded[3..], &frames[..]);
    }

    #[test]
    fn latent_shape_48() {
        let frames = vec![Image::zeros(48, 48); 17];
        let l = encode_video(&frames, 4).unwrap();
        assert_eq!(l.shape(), [5, 192, 12, 12]);
        assert!(l.data.iter().all(|&v| v == 0.0));
        assert_eq!(l.frame_count, 17);
    }

    #[test]
    fn indivisible_frames_rejected() {
        let frames = vec![Image::zeros(10, 8); 5];
        assert!(matches!(encode_video(&frames, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn round_trip_small() {
        let frames: Vec<Image> = (0..9).map(|i| ramp(8, 4, i as f64)).collect();
        let l = encode_video(&frames, 2).unwrap();
        assert_eq!(decode_video(&l).unwrap(), frames);
    }

    #[test]
    fn single_group_unpads_to_one_frame() {
        let frames = vec![ramp(4, 4, 0.3)];
        let l = encode_video(&frames, 2).unwrap();
        assert_eq!(l.groups, 1);
        let all = decode(&l).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(decode_video(&l).unwrap(), frames);
    }

    #[test]
    fn zero_latent_decodes_to_zero_frames() {
        let l = LatentVideo {
            groups: 2,
            channels: latent_channels(2),
            height: 3,
            width: 3,
            spatial: 2,
            frame_count: 5,
            data: vec![0.0; 2 * 48 * 9],
        };
        let frames = decode(&l).unwrap();
        assert_eq!(frames.len(), 8);
        assert!(frames.iter().all(|f| f.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn decode_rejects_bad_shape() {
        let l = LatentVideo {
            groups: 1,
            channels: 10,
            height: 2,
            width: 2,
            spatial: 2,
            frame_count: 1,
            data: vec![0.0; 40],
        };
        assert!(decode(&l).is_err());
    }

    fn mpli(k: usize, w: usize, h: usize) -> MultiPlaneLightImage {
        MultiPlaneLightImage {
            planes: (0..k)
                .map(|i| LightImage {
                    image: ramp(w, h, i as f64 * 1.7),
                    depth: 1.0 + i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn mpli_encodes_like_four_frames() {
        let m = mpli(4, 8, 8);
        let frames: Vec<Image> = m.planes.iter().map(|p| p.image.clone()).collect();
        let ll = encode_mpli(&m, 4).unwrap();
        let as_video = encode(&frames, 4).unwrap();
        assert_eq!(ll.data, as_video.data);
        assert_eq!((ll.channels, ll.height, ll.width), (192, 2, 2));
    }

    #[test]
    fn single_plane_is_replicated() {
        let m = mpli(1, 8, 8);
        let frames = vec![m.planes[0].image.clone(); 4];
        let ll = encode_mpli(&m, 4).unwrap();
        assert_eq!(ll.data, encode(&frames, 4).unwrap().data);
        assert_eq!(ll.planes, 1);
    }

    #[test]
    fn other_plane_counts_rejected() {
        assert!(matches!(
            encode_mpli(&mpli(3, 8, 8), 4),
            Err(Error::PlaneCount(3))
        ));
    }

    #[test]
    fn sidecar_json() {
        let s = CodecSidecar {
            spatial: 4,
            frame_count: 17,
            planes: Some(4),
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"spatial":4,"frame_count":17,"K":4}"#);
    }
}

//! Video comparison metrics used by the evaluation suites.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{luminance, Video};

/// PSNR in decibels; identical inputs give `+inf`, serialised as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Db {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{:.3} dB", self.0)
        }
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Db, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Db;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Db, E> {
                Ok(Db(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Db, E> {
                Ok(Db(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Db, E> {
                Ok(Db(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Db, E> {
                match v {
                    "inf" => Ok(Db(f64::INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn check_pair(a: &Video, b: &Video) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "videos {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse(a: &Video, b: &Video) -> Result<f64> {
    check_pair(a, b)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (x, y) in fa.data.iter().zip(&fb.data) {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `10 log10(1 / MSE)` for videos with values in `[0, 1]`.
pub fn psnr(a: &Video, b: &Video) -> Result<Db> {
    check_pair(a, b)?;
    for v in [a, b] {
        if v.frames
            .iter()
            .flat_map(|f| &f.data)
            .any(|x| !(0.0..=1.0).contains(x))
        {
            return Err(Error::Shape("PSNR inputs must lie in [0, 1]".into()));
        }
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        Db(f64::INFINITY)
    } else {
        Db(-10.0 * m.log10())
    })
}

/// Hue angle in degrees `[0, 360)`, or `None` for (near) achromatic input.
pub fn hue_degrees(rgb: [f64; 3]) -> Option<f64> {
    let [r, g, b] = rgb;
    let x = 2.0 * r - g - b;
    let y = 3f64.sqrt() * (g - b);
    if x.hypot(y) < 1e-9 {
        return None;
    }
    Some(y.atan2(x).to_degrees().rem_euclid(360.0))
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Mean per-channel difference `a - b` over every pixel and frame.
pub fn mean_delta(a: &Video, b: &Video) -> Result<[f64; 3]> {
    check_pair(a, b)?;
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (pa, pb) in fa.data.chunks_exact(3).zip(fb.data.chunks_exact(3)) {
            for c in 0..3 {
                acc[c] += pa[c] - pb[c];
            }
            n += 1;
        }
    }
    Ok(acc.map(|v| v / n.max(1) as f64))
}

/// Centroid of the positive luminance gain of `a` over `b` across the given
/// frames, in normalised image coordinates (`[-1, 1]`, y down).
pub fn gain_centroid(a: &Video, b: &Video, frames: &[usize]) -> Result<Option<(f64, f64)>> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for &f in frames {
        let (fa, fb) = match (a.frames.get(f), b.frames.get(f)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::Shape(format!("frame {f} out of range"))),
        };
        for v in 0..h {
            for u in 0..w {
                let gain = luminance(fa.pixel(u, v)) - luminance(fb.pixel(u, v));
                if gain > 0.0 {
                    sx += gain * ((u as f64 + 0.5) / w as f64 * 2.0 - 1.0);
                    sy += gain * ((v as f64 + 0.5) / h as f64 * 2.0 - 1.0);
                    sw += gain;
                }
            }
        }
    }
    Ok((sw > 1e-9).then(|| (sx / sw, sy / sw)))
}

pub fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

//! Diffusion transformer over latent patch tokens.
//!
//! The sequence is `[source tokens; noisy target tokens]`. Every block is a
//! pre-norm attention layer over the whole sequence followed by a GELU MLP.
//! In relight mode a shared light adapter projects MPLI latents to tokens
//! which are added, scaled by a per-block gain, to the target rows before
//! each block, and the attention output projection carries a LoRA branch.
//!
//! The network predicts a clean-latent residual on top of the source patch;
//! the velocity is derived from it as `(skip * x_t - x0_hat) / t`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Mat;
use crate::codec::LatentVideo;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterInit {
    Copy,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    Relight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DitConfig {
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub adapter_init: AdapterInit,
    /// Latent groups per clip.
    pub groups: usize,
    pub latent_channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub time_freqs: usize,
}

impl Default for DitConfig {
    fn default() -> Self {
        DitConfig {
            width: 32,
            blocks: 2,
            heads: 4,
            patch: 2,
            mlp_ratio: 4,
            lora_rank: 4,
            lora_alpha: 4.0,
            adapter_init: AdapterInit::Copy,
            groups: 5,
            latent_channels: 192,
            latent_height: 12,
            latent_width: 12,
            time_freqs: 8,
        }
    }
}

impl DitConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            errs.push(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if self.lora_rank == 0 {
            errs.push("LoRA rank must be at least 1".to_string());
        }
        if self.patch == 0
            || !self.latent_height.is_multiple_of(self.patch)
            || !self.latent_width.is_multiple_of(self.patch)
        {
            errs.push(format!(
                "patch {} does not divide latent {}x{}",
                self.patch, self.latent_height, self.latent_width
            ));
        }
        if self.blocks == 0 || self.groups == 0 || self.latent_channels == 0 {
            errs.push("blocks, groups and channels must be positive".to_string());
        }
        if self.mlp_ratio == 0 || self.time_freqs == 0 {
            errs.push("mlp_ratio and time_freqs must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    /// Tokens per clip (`G * (H/p) * (W/p)`).
    pub fn tokens(&self) -> usize {
        self.groups * (self.latent_height / self.patch) * (self.latent_width / self.patch)
    }

    /// Values per token before projection (`C * p * p`).
    pub fn patch_dim(&self) -> usize {
        self.latent_channels * self.patch * self.patch
    }

    /// Config matching a latent shape `[G, C, H, W]`.
    pub fn for_latent(shape: [usize; 4]) -> Self {
        DitConfig {
            groups: shape[0],
            latent_channels: shape[1],
            latent_height: shape[2],
            latent_width: shape[3],
            ..DitConfig::default()
        }
    }
}

/// Rearranges `[G, C, H, W]` latent data into `[tokens, C*p*p]` raw patches.
pub fn latent_to_tokens(data: &[f64], config: &DitConfig) -> Result<Mat> {
    let (g, c, h, w, p) = (
        config.groups,
        config.latent_channels,
        config.latent_height,
        config.latent_width,
        config.patch,
    );
    if data.len() != g * c * h * w {
        return Err(Error::Shape(format!(
            "latent of {} values for layout [{g}, {c}, {h}, {w}]",
            data.len()
        )));
    }
    let (th, tw) = (h / p, w / p);
    let mut out = Mat::zeros(g * th * tw, c * p * p);
    for gi in 0..g {
        for ty in 0..th {
            for tx in 0..tw {
                let row = out.row_mut((gi * th + ty) * tw + tx);
                for ci in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            let src = ((gi * c + ci) * h + ty * p + dy) * w + tx * p + dx;
                            row[(ci * p + dy) * p + dx] = data[src];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`latent_to_tokens`].
pub fn tokens_to_latent(tokens: &Mat, config: &DitConfig) -> Result<Vec<f64>> {
    let (g, c, h, w, p) = (
        config.groups,
        config.latent_channels,
        config.latent_height,
        config.latent_width,
        config.patch,
    );
    if tokens.shape() != (config.tokens(), config.patch_dim()) {
        return Err(Error::Shape(format!(
            "token matrix {:?} for {} tokens of width {}",
            tokens.shape(),
            config.tokens(),
            config.patch_dim()
        )));
    }
    let (th, tw) = (h / p, w / p);
    let mut out = vec![0.0; g * c * h * w];
    for gi in 0..g {
        for ty in 0..th {
            for tx in 0..tw {
                let row = tokens.row((gi * th + ty) * tw + tx);
                for ci in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            let dst = ((gi * c + ci) * h + ty * p + dy) * w + tx * p + dx;
                            out[dst] = row[(ci * p + dy) * p + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn latent_tokens(latent: &LatentVideo, config: &DitConfig) -> Result<Mat> {
    let want = [
        config.groups,
        config.latent_channels,
        config.latent_height,
        config.latent_width,
    ];
    if latent.shape() != want {
        return Err(Error::Shape(format!(
            "latent {:?} does not match model layout {want:?}",
            latent.shape()
        )));
    }
    latent_to_tokens(&latent.data, config)
}

/// Sinusoidal features of a scalar time in `[0, 1]`.
pub fn time_features(t: f64, freqs: usize) -> Mat {
    let mut out = Mat::zeros(1, 2 * freqs);
    for k in 0..freqs {
        let w = std::f64::consts::PI * (1u64 << k.min(62)) as f64 / 2.0;
        out.data[2 * k] = (w * t).sin();
        out.data[2 * k + 1] = (w * t).cos();
    }
    out
}

/// Light adapter parameters derived from the patch projection.
///
/// Copy mode returns the projection itself, zero mode all-zero tensors.
pub fn init_lia(patch_w: &Mat, patch_b: &Mat, mode: AdapterInit) -> Result<(Mat, Mat)> {
    if patch_b.shape() != (1, patch_w.cols) {
        return Err(Error::Shape(format!(
            "patch bias {:?} for weight {:?}",
            patch_b.shape(),
            patch_w.shape()
        )));
    }
    Ok(match mode {
        AdapterInit::Copy => (patch_w.clone(), patch_b.clone()),
        AdapterInit::Zero => (
            Mat::zeros(patch_w.rows, patch_w.cols),
            Mat::zeros(1, patch_b.cols),
        ),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dit {
    pub config: DitConfig,
    pub stage: Stage,
    pub params: BTreeMap<String, Mat>,
    pub trainable: BTreeSet<String>,
}

pub(crate) fn block_name(b: usize, leaf: &str) -> String {
    format!("blocks.{b}.{leaf}")
}

fn gaussian(rows: usize, cols: usize, std: f64, seed: u64, tag: u64) -> Mat {
    let mut rng = rng::stream(seed, &[0xd17, tag]);
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Mat { rows, cols, data }
}

impl Dit {
    /// Freshly initialised base model. All of its parameters are trainable.
    pub fn init_base(config: DitConfig, seed: u64) -> Result<Dit> {
        config.validate()?;
        let d = config.width;
        let pd = config.patch_dim();
        let hidden = d * config.mlp_ratio;
        let mut params = BTreeMap::new();
        let mut tag = 0u64;
        let mut next = || {
            tag += 1;
            tag
        };
        params.insert(
            "patch.w".into(),
            gaussian(pd, d, 1.0 / (pd as f64).sqrt(), seed, next()),
        );
        params.insert("patch.b".into(), Mat::zeros(1, d));
        params.insert(
            "pos".into(),
            gaussian(config.tokens(), d, 0.1, seed, next()),
        );
        params.insert("segment.source".into(), gaussian(1, d, 0.1, seed, next()));
        params.insert("segment.target".into(), gaussian(1, d, 0.1, seed, next()));
        params.insert("null_cond".into(), Mat::zeros(1, d));
        let tf = 2 * config.time_freqs;
        params.insert(
            "time.w".into(),
            gaussian(tf, d, 1.0 / (tf as f64).sqrt(), seed, next()),
        );
        params.insert("time.b".into(), Mat::zeros(1, d));
        for b in 0..config.blocks {
            let s = 1.0 / (d as f64).sqrt();
            params.insert(block_name(b, "qkv.w"), gaussian(d, 3 * d, s, seed, next()));
            params.insert(block_name(b, "qkv.b"), Mat::zeros(1, 3 * d));
            params.insert(block_name(b, "out.w"), gaussian(d, d, s, seed, next()));
            params.insert(block_name(b, "out.b"), Mat::zeros(1, d));
            params.insert(
                block_name(b, "mlp.w1"),
                gaussian(d, hidden, s, seed, next()),
            );
            params.insert(block_name(b, "mlp.b1"), Mat::zeros(1, hidden));
            params.insert(
                block_name(b, "mlp.w2"),
                gaussian(hidden, d, 1.0 / (hidden as f64).sqrt(), seed, next()),
            );
            params.insert(block_name(b, "mlp.b2"), Mat::zeros(1, d));
        }
        // zero head: the untrained model predicts the source latent
        params.insert("head.w".into(), Mat::zeros(d, pd));
        params.insert("head.b".into(), Mat::zeros(1, pd));
        params.insert("skip.source".into(), Mat::scalar(1.0));
        params.insert("skip.noisy".into(), Mat::scalar(1.0));
        let trainable = params.keys().cloned().collect();
        Ok(Dit {
            config,
            stage: Stage::Base,
            params,
            trainable,
        })
    }

    /// Relight model built from a pretrained base: adapter from the patch
    /// projection, zero LoRA output factors, and gains of 0 (copy) or 1
    /// (zero). Only attention, LoRA, adapter and gain tensors train.
    pub fn to_relight(&self, mode: AdapterInit, seed: u64) -> Result<Dit> {
        if self.stage != Stage::Base {
            return Err(Error::Config("relight model needs a base model".into()));
        }
        let mut config = self.config.clone();
        config.adapter_init = mode;
        let mut params = self.params.clone();
        let (aw, ab) = init_lia(self.param("patch.w")?, self.param("patch.b")?, mode)?;
        params.insert("adapter.w".into(), aw);
        params.insert("adapter.b".into(), ab);
        let d = config.width;
        let r = config.lora_rank;
        let gain = match mode {
            AdapterInit::Copy => 0.0,
            AdapterInit::Zero => 1.0,
        };
        for b in 0..config.blocks {
            params.insert(
                block_name(b, "lora.a"),
                gaussian(d, r, 1.0 / (d as f64).sqrt(), seed, 1000 + b as u64),
            );
            params.insert(block_name(b, "lora.b"), Mat::zeros(r, d));
            params.insert(block_name(b, "gain"), Mat::scalar(gain));
        }
        let trainable = params
            .keys()
            .filter(|k| is_relight_trainable(k))
            .cloned()
            .collect();
        Ok(Dit {
            config,
            stage: Stage::Relight,
            params,
            trainable,
        })
    }

    pub fn param(&self, name: &str) -> Result<&Mat> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Mat::len).sum()
    }

    /// Registers every parameter on the tape. With `train` set, trainable
    /// tensors are marked as requiring gradients.
    pub fn bind(&self, tape: &mut Tape, train: bool) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(k, v)| {
                let rg = train && self.trainable.contains(k);
                (k.clone(), tape.leaf(v.clone(), rg))
            })
            .collect()
    }

    /// Velocity for one clip in token layout. `x_t` and `source` are raw
    /// patch matrices `[tokens, C*p*p]`; `light` is required in relight mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BTreeMap<String, Var>,
        x_t: &Mat,
        source: &Mat,
        light: Option<&Mat>,
        t: f64,
    ) -> Result<Var> {
        let cfg = &self.config;
        let s = cfg.tokens();
        let want = (s, cfg.patch_dim());
        for (name, m) in [("noisy target", x_t), ("source", source)] {
            if m.shape() != want {
                return Err(Error::Shape(format!(
                    "{name} tokens {:?}, expected {want:?}",
                    m.shape()
                )));
            }
        }
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("time {t} outside (0, 1]")));
        }
        let light = match (self.stage, light) {
            (Stage::Relight, Some(l)) if l.shape() == want => Some(l),
            (Stage::Relight, Some(l)) => {
                return Err(Error::Shape(format!(
                    "light tokens {:?} not aligned with target tokens {want:?}",
                    l.shape()
                )))
            }
            (Stage::Relight, None) => {
                return Err(Error::Config("relight model needs light tokens".into()))
            }
            (Stage::Base, _) => None,
        };
        let get = |name: &str| -> Result<Var> {
            p.get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };

        let src_raw = tape.constant(source.clone());
        let xt_raw = tape.constant(x_t.clone());
        let (pw, pb) = (get("patch.w")?, get("patch.b")?);
        let pos = get("pos")?;

        let src = tape.matmul(src_raw, pw);
        let src = tape.add_row(src, pb);
        let src = tape.add(src, pos);
        let src = tape.add_row(src, get("segment.source")?);
        let tgt = tape.matmul(xt_raw, pw);
        let tgt = tape.add_row(tgt, pb);
        let tgt = tape.add(tgt, pos);
        let tgt = tape.add_row(tgt, get("segment.target")?);
        let mut h = tape.concat_rows(src, tgt);

        let tf = tape.constant(time_features(t, cfg.time_freqs));
        let temb = tape.matmul(tf, get("time.w")?);
        let temb = tape.add(temb, get("time.b")?);
        let temb = tape.add(temb, get("null_cond")?);
        h = tape.add_row(h, temb);

        let light_tok = match light {
            Some(l) => {
                let raw = tape.constant(l.clone());
                let a = tape.matmul(raw, get("adapter.w")?);
                Some(tape.add_row(a, get("adapter.b")?))
            }
            None => None,
        };
        let lora_scale = cfg.lora_alpha / cfg.lora_rank as f64;

        for b in 0..cfg.blocks {
            let g = |leaf: &str| get(&block_name(b, leaf));
            if let Some(lt) = light_tok {
                let inj = tape.scale_by(lt, g("gain")?);
                h = tape.add_at(h, inj, s);
            }
            let a = tape.layer_norm(h);
            let qkv = tape.matmul(a, g("qkv.w")?);
            let qkv = tape.add_row(qkv, g("qkv.b")?);
            let att = tape.attention(qkv, cfg.heads);
            let mut o = tape.matmul(att, g("out.w")?);
            o = tape.add_row(o, g("out.b")?);
            if self.stage == Stage::Relight {
                let la = tape.matmul(att, g("lora.a")?);
                let lb = tape.matmul(la, g("lora.b")?);
                let lb = tape.scale(lb, lora_scale);
                o = tape.add(o, lb);
            }
            h = tape.add(h, o);
            let m = tape.layer_norm(h);
            let m = tape.matmul(m, g("mlp.w1")?);
            let m = tape.add_row(m, g("mlp.b1")?);
            let m = tape.gelu(m);
            let m = tape.matmul(m, g("mlp.w2")?);
            let m = tape.add_row(m, g("mlp.b2")?);
            h = tape.add(h, m);
        }

        let out = tape.slice_rows(h, s, s);
        let out = tape.layer_norm(out);
        let delta = tape.matmul(out, get("head.w")?);
        let delta = tape.add_row(delta, get("head.b")?);
        let base = tape.scale_by(src_raw, get("skip.source")?);
        let x0_hat = tape.add(base, delta);
        let noisy = tape.scale_by(xt_raw, get("skip.noisy")?);
        let diff = tape.sub(noisy, x0_hat);
        Ok(tape.scale(diff, 1.0 / t))
    }

    /// Inference-only velocity.
    pub fn velocity(&self, x_t: &Mat, source: &Mat, light: Option<&Mat>, t: f64) -> Result<Mat> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let v = self.forward(&mut tape, &p, x_t, source, light, t)?;
        Ok(tape.value(v).clone())
    }

    /// Velocities for a batch of clips; samples never interact.
    pub fn velocity_batch(
        &self,
        x_t: &[Mat],
        source: &[Mat],
        light: &[Option<Mat>],
        t: f64,
    ) -> Result<Vec<Mat>> {
        use rayon::prelude::*;
        if x_t.len() != source.len() || x_t.len() != light.len() {
            return Err(Error::Shape("batch members disagree in length".into()));
        }
        (0..x_t.len())
            .into_par_iter()
            .map(|i| self.velocity(&x_t[i], &source[i], light[i].as_ref(), t))
            .collect()
    }

    /// Token embedding of raw patches through the patch projection.
    pub fn patchify(&self, raw: &Mat) -> Result<Mat> {
        let w = self.param("patch.w")?;
        let b = self.param("patch.b")?;
        if raw.cols != w.rows {
            return Err(Error::Shape(format!(
                "patch rows of width {} for projection {:?}",
                raw.cols,
                w.shape()
            )));
        }
        let mut out = raw.matmul(w);
        for r in 0..out.rows {
            for (o, v) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += v;
            }
        }
        Ok(out)
    }
}

/// Tensors updated during relight finetuning: attention projections, LoRA
/// factors, the light adapter and its gains.
pub fn is_relight_trainable(name: &str) -> bool {
    if name.starts_with("adapter.") {
        return true;
    }
    match name.strip_prefix("blocks.") {
        Some(rest) => {
            let leaf = rest.split_once('.').map(|(_, l)| l).unwrap_or("");
            leaf.starts_with("qkv.")
                || leaf.starts_with("out.")
                || leaf.starts_with("lora.")
                || leaf == "gain"
        }
        None => false,
    }
}

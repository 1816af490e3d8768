//! Synthetic task generation: procedural base images, parametric
//! distortions, an analytic pseudo-MOS oracle, and the splits used by the
//! experiment protocols.

pub mod distort;
pub mod io;

pub use distort::{apply_distortion, default_families, DistortionFamily, FamilyKind};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DistortionTask, MetaTrainingSet, ScoredImage, TargetTask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds;
use crate::tensor::Tensor;

/// Decay constant of the pseudo-MOS oracle `exp(-mse/tau)`.
pub const DEFAULT_TAU: f64 = 0.02;

/// A pristine procedural image plus the provenance needed to re-derive any
/// distortion of it deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseImage<S: Scalar> {
    pub name: String,
    pub generator: &'static str,
    pub seed: u64,
    pub pixels: Tensor<S>,
}

/// Everything task generation needs; `seed` pins all random choices.
#[derive(Debug, Clone)]
pub struct TaskGenConfig {
    pub families: Vec<DistortionFamily>,
    pub bases_per_family: usize,
    pub resolution: (usize, usize),
    pub tau: f64,
    pub support_fraction: f64,
    pub target_train_fraction: f64,
    pub seed: u64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        Self {
            families: default_families(),
            bases_per_family: 8,
            resolution: (32, 32),
            tau: DEFAULT_TAU,
            support_fraction: 0.5,
            target_train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::InvalidArgument("no distortion families".into()));
        }
        for f in &self.families {
            f.validate()?;
        }
        if self.bases_per_family < 2 {
            return Err(Error::InvalidArgument(
                "need >= 2 base images so support and query are both non-empty".into(),
            ));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidArgument("zero resolution".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidArgument(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, f) in [
            ("support_fraction", self.support_fraction),
            ("target_train_fraction", self.target_train_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0,1), got {f}")));
            }
        }
        Ok(())
    }
}

/// Generate `count` pristine images at `(h,w)`, cycling three procedural
/// styles (smooth gradients, band-limited textures, flat geometric shapes).
/// Fully determined by `seed`.
pub fn gen_base_images<S: Scalar>(
    count: usize,
    resolution: (usize, usize),
    seed: u64,
) -> Result<Vec<BaseImage<S>>> {
    let (h, w) = resolution;
    if count == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid base-image request: count={count}, resolution={h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let img_seed = seeds::derive(seed, &format!("base{i:04}"));
        let mut rng = ChaCha8Rng::seed_from_u64(img_seed);
        let (generator, pixels) = match i % 3 {
            0 => ("gradient", gradient_image(h, w, &mut rng)),
            1 => ("texture", texture_image(h, w, &mut rng)),
            _ => ("shapes", shapes_image(h, w, &mut rng)),
        };
        out.push(BaseImage {
            name: format!("base{i:04}"),
            generator,
            seed: img_seed,
            pixels: Tensor::new(&[1, h, w], pixels.into_iter().map(S::from_f64).collect())?,
        });
    }
    Ok(out)
}

fn gradient_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Linear ramp along a random direction, centered on mid gray.
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ny, nx) = theta.sin_cos();
    let amp = rng.gen_range(0.4..0.9);
    let mut px = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // Signed projection in [-1,1] of the pixel onto the direction.
            let u = 2.0 * x as f64 / (w - 1).max(1) as f64 - 1.0;
            let v = 2.0 * y as f64 / (h - 1).max(1) as f64 - 1.0;
            let t = (u * nx + v * ny) / std::f64::consts::SQRT_2;
            px.push((0.5 + amp * 0.5 * t).clamp(0.0, 1.0));
        }
    }
    px
}

fn texture_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Sum of a few random low-frequency sinusoids around mid gray.
    let k = rng.gen_range(3..=5);
    let waves: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.gen_range(1.0..6.0),
                rng.gen_range(1.0..6.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.06..0.18),
            )
        })
        .collect();
    let mut px = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.5;
            for &(fx, fy, phase, amp) in &waves {
                let t = std::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64);
                v += amp * (t + phase).sin();
            }
            px.push(v.clamp(0.0, 1.0));
        }
    }
    px
}

fn shapes_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Value ranges keep every pixel in [0.15, 0.85], which bounds the mean
    // of any single image regardless of shape coverage.
    let bg = rng.gen_range(0.35..0.65);
    let mut px = vec![bg; h * w];
    let n = rng.gen_range(3..=6);
    for _ in 0..n {
        let v = rng.gen_range(0.15..0.85);
        if rng.gen::<bool>() {
            // Rectangle.
            let y0 = rng.gen_range(0..h);
            let x0 = rng.gen_range(0..w);
            let dy = rng.gen_range(1..=(h / 2).max(1));
            let dx = rng.gen_range(1..=(w / 2).max(1));
            for y in y0..(y0 + dy).min(h) {
                for x in x0..(x0 + dx).min(w) {
                    px[y * w + x] = v;
                }
            }
        } else {
            // Filled circle.
            let cy = rng.gen_range(0..h) as f64;
            let cx = rng.gen_range(0..w) as f64;
            let r = rng.gen_range(2.0..(h.min(w) as f64 / 3.0).max(2.5));
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if d2 <= r * r {
                        px[y * w + x] = v;
                    }
                }
            }
        }
    }
    px
}

/// Analytic quality oracle: `exp(-mse/tau)`. 1 means identical, decaying
/// toward 0 as the distortion grows.
pub fn pseudo_mos<S: Scalar>(reference: &Tensor<S>, distorted: &Tensor<S>, tau: f64) -> Result<f64> {
    if reference.shape() != distorted.shape() {
        return Err(Error::InvalidArgument(format!(
            "pseudo-MOS shape mismatch: {:?} vs {:?}",
            reference.shape(),
            distorted.shape()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    let n = reference.numel();
    if n == 0 {
        return Err(Error::InvalidArgument("pseudo-MOS of empty image".into()));
    }
    let mut mse = 0.0f64;
    for (&a, &b) in reference.data().iter().zip(distorted.data()) {
        let d = a.as_f64() - b.as_f64();
        mse += d * d;
    }
    mse /= n as f64;
    Ok((-mse / tau).exp())
}

/// Map raw scores into [0,1] via a declared `(lo,hi)` range. Scores outside
/// the range are rejected rather than clamped.
pub fn normalize_scores(scores: &[f64], range: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid score range ({lo}, {hi})")));
    }
    let mut out = Vec::with_capacity(scores.len());
    for &s in scores {
        if !s.is_finite() || s < lo || s > hi {
            return Err(Error::InvalidArgument(format!(
                "score {s} outside declared range ({lo}, {hi})"
            )));
        }
        out.push((s - lo) / (hi - lo));
    }
    Ok(out)
}

/// Distort every base at every level of `family`, score with the pseudo-MOS
/// oracle, and split support/query at the *base image* level so no base
/// contributes to both sides.
pub fn build_task<S: Scalar>(
    family: &DistortionFamily,
    bases: &[BaseImage<S>],
    support_fraction: f64,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DistortionTask<S>> {
    family.validate()?;
    if bases.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "task for `{}` needs >= 2 base images, got {}",
            family.name(),
            bases.len()
        )));
    }
    if !(0.0 < support_fraction && support_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "support fraction must lie in (0,1), got {support_fraction}"
        )));
    }
    let n = bases.len();
    let n_support = ((support_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (slot, &bi) in order.iter().enumerate() {
        let base = &bases[bi];
        let side = if slot < n_support { &mut support } else { &mut query };
        for level in 0..family.levels.len() {
            let distorted = apply_distortion(&base.pixels, family, level, base.seed)?;
            let score = pseudo_mos(&base.pixels, &distorted, tau)?;
            side.push(ScoredImage {
                name: format!("{}_{}_l{}", base.name, family.name(), level),
                family: family.name().to_string(),
                severity: level,
                pixels: distorted,
                score: S::from_f64(score),
            });
        }
    }
    support.sort_by(|a, b| a.name.cmp(&b.name));
    query.sort_by(|a, b| a.name.cmp(&b.name));
    let task = DistortionTask { task_id: family.name().to_string(), support, query };
    task.validate()?;
    Ok(task)
}

/// Leave-one-distortion-out split: one task per remaining family for
/// meta-training, and the held-out family as the fine-tuning target. All
/// families share the same base-image pool.
pub fn lodo_split<S: Scalar>(
    cfg: &TaskGenConfig,
    held_out: &str,
) -> Result<(MetaTrainingSet<S>, TargetTask<S>)> {
    cfg.validate()?;
    if cfg.families.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs >= 3 families, got {}",
            cfg.families.len()
        )));
    }
    let target_family = cfg
        .families
        .iter()
        .find(|f| f.name() == held_out)
        .ok_or_else(|| Error::UnknownFamily(held_out.to_string()))?;
    let bases: Vec<BaseImage<S>> = gen_base_images(
        cfg.bases_per_family,
        cfg.resolution,
        seeds::derive(cfg.seed, "bases"),
    )?;
    let mut tasks = Vec::new();
    for family in &cfg.families {
        if family.name() == held_out {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
            cfg.seed,
            &format!("split:{}", family.name()),
        ));
        tasks.push(build_task(family, &bases, cfg.support_fraction, cfg.tau, &mut rng)?);
    }
    let meta = MetaTrainingSet { tasks };
    meta.validate()?;

    let mut rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &format!("split:{held_out}")));
    let holdout_task =
        build_task(target_family, &bases, cfg.target_train_fraction, cfg.tau, &mut rng)?;
    let target = TargetTask {
        family: held_out.to_string(),
        train: holdout_task.support,
        test: holdout_task.query,
        score_range: (0.0, 1.0),
    };
    target.validate()?;
    Ok((meta, target))
}

/// Uniform random crop: the top-left corner is drawn uniformly over all
/// valid positions, inclusive of both extremes.
pub fn crop_patch<S: Scalar>(
    pixels: &Tensor<S>,
    size: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<S>> {
    let shape = pixels.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "crop input must be (c,h,w), got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (ph, pw) = size;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {ph}x{pw} from {h}x{w}"
        )));
    }
    let y0 = rng.gen_range(0..=h - ph);
    let x0 = rng.gen_range(0..=w - pw);
    let src = pixels.data();
    let mut dst = Vec::with_capacity(c * ph * pw);
    for ci in 0..c {
        for y in 0..ph {
            let row = (ci * h + y0 + y) * w + x0;
            dst.extend_from_slice(&src[row..row + pw]);
        }
    }
    Tensor::new(&[c, ph, pw], dst)
}

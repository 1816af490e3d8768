//! Parametric distortion families. Every operator maps [0,1] pixels to
//! clamped [0,1] pixels and is a pure function of (image, level, image
//! seed). Stochastic families draw one random field keyed by the image
//! seed and family only; the level merely scales or thresholds that shared
//! field. This coupling makes the per-pixel error — and therefore the
//! oracle score — monotone in severity for every individual image, not
//! just in expectation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    GaussianNoise,
    GaussianBlur,
    Brighten,
    Darken,
    ContrastChange,
    Quantization,
    ImpulseNoise,
    Jitter,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::GaussianNoise => "gaussian-noise",
            FamilyKind::GaussianBlur => "gaussian-blur",
            FamilyKind::Brighten => "brighten",
            FamilyKind::Darken => "darken",
            FamilyKind::ContrastChange => "contrast-change",
            FamilyKind::Quantization => "quantization",
            FamilyKind::ImpulseNoise => "impulse-noise",
            FamilyKind::Jitter => "jitter",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "gaussian-noise" => FamilyKind::GaussianNoise,
            "gaussian-blur" => FamilyKind::GaussianBlur,
            "brighten" => FamilyKind::Brighten,
            "darken" => FamilyKind::Darken,
            "contrast-change" => FamilyKind::ContrastChange,
            "quantization" => FamilyKind::Quantization,
            "impulse-noise" => FamilyKind::ImpulseNoise,
            "jitter" => FamilyKind::Jitter,
            other => return Err(Error::UnknownFamily(other.to_string())),
        })
    }

    pub fn all() -> [FamilyKind; 8] {
        [
            FamilyKind::GaussianNoise,
            FamilyKind::GaussianBlur,
            FamilyKind::Brighten,
            FamilyKind::Darken,
            FamilyKind::ContrastChange,
            FamilyKind::Quantization,
            FamilyKind::ImpulseNoise,
            FamilyKind::Jitter,
        ]
    }
}

/// A distortion family with its severity grid (mildest first). Each level
/// is a parameter vector; the built-in operators read one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionFamily {
    pub kind: FamilyKind,
    pub levels: Vec<Vec<f64>>,
}

impl DistortionFamily {
    pub fn new(kind: FamilyKind, levels: Vec<Vec<f64>>) -> Result<Self> {
        let fam = Self { kind, levels };
        fam.validate()?;
        Ok(fam)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "family `{}` needs >= 3 severity levels, has {}",
                self.name(),
                self.levels.len()
            )));
        }
        if self.levels.iter().any(|l| l.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "family `{}` has an empty level parameter vector",
                self.name()
            )));
        }
        // Severity must be strictly ordered; for the built-in single-
        // parameter operators that means a strictly monotone first parameter.
        let firsts: Vec<f64> = self.levels.iter().map(|l| l[0]).collect();
        let increasing = firsts.windows(2).all(|w| w[0] < w[1]);
        let decreasing = firsts.windows(2).all(|w| w[0] > w[1]);
        if !increasing && !decreasing {
            return Err(Error::InvalidArgument(format!(
                "family `{}` severity grid is not strictly ordered: {firsts:?}",
                self.name()
            )));
        }
        Ok(())
    }

    /// Evenly subsample the grid down to `n` levels (first and last kept).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n < 3 || n > self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot reduce `{}` from {} to {} levels",
                self.name(),
                self.levels.len(),
                n
            )));
        }
        let last = self.levels.len() - 1;
        let picked = (0..n)
            .map(|i| self.levels[(i * last + (n - 1) / 2) / (n - 1)].clone())
            .collect();
        Self::new(self.kind, picked)
    }
}

/// The default eight families, four severity levels each, tuned so the
/// pseudo-MOS oracle at τ=0.02 spans roughly [0.05, 0.97].
pub fn default_families() -> Vec<DistortionFamily> {
    let grid = |kind, params: &[f64]| DistortionFamily {
        kind,
        levels: params.iter().map(|&p| vec![p]).collect(),
    };
    vec![
        grid(FamilyKind::GaussianNoise, &[0.04, 0.08, 0.14, 0.24]),
        grid(FamilyKind::GaussianBlur, &[0.7, 1.2, 2.0, 3.2]),
        grid(FamilyKind::Brighten, &[0.08, 0.14, 0.22, 0.32]),
        grid(FamilyKind::Darken, &[0.08, 0.14, 0.22, 0.32]),
        grid(FamilyKind::ContrastChange, &[0.75, 0.55, 0.38, 0.22]),
        // Level counts whose step sizes divide each other (1/12, 1/6, 1/3,
        // 1/1): nested lattices make the per-pixel rounding error — and so
        // the oracle score — monotone in severity for every image.
        grid(FamilyKind::Quantization, &[13.0, 7.0, 4.0, 2.0]),
        grid(FamilyKind::ImpulseNoise, &[0.02, 0.05, 0.10, 0.18]),
        // Fraction of pixels displaced; the displacement field itself is
        // fixed per image, so the displaced sets are nested across levels.
        grid(FamilyKind::Jitter, &[0.25, 0.5, 0.75, 1.0]),
    ]
}

/// Apply `family` at `level` to (c,h,w) pixels. `image_seed` keys the
/// random stream for stochastic families.
pub fn apply_distortion<S: Scalar>(
    pixels: &Tensor<S>,
    family: &DistortionFamily,
    level: usize,
    image_seed: u64,
) -> Result<Tensor<S>> {
    if pixels.shape().len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "distortion input must be (c,h,w), got {:?}",
            pixels.shape()
        )));
    }
    if level >= family.levels.len() {
        return Err(Error::InvalidArgument(format!(
            "level {} out of range for `{}` with {} levels",
            level,
            family.name(),
            family.levels.len()
        )));
    }
    let p = family.levels[level][0];
    // Level deliberately left out of the seed: all levels of a family see
    // the same random field (see module docs).
    let seed = seeds::derive(image_seed, family.name());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match family.kind {
        FamilyKind::GaussianNoise => map_pixels(pixels, |v| v + gaussian(&mut rng) * p),
        FamilyKind::GaussianBlur => return Ok(gaussian_blur(pixels, p)),
        FamilyKind::Brighten => map_pixels(pixels, |v| v + p),
        FamilyKind::Darken => map_pixels(pixels, |v| v - p),
        FamilyKind::ContrastChange => map_pixels(pixels, |v| 0.5 + p * (v - 0.5)),
        FamilyKind::Quantization => {
            let q = p.max(2.0).round() - 1.0;
            map_pixels(pixels, |v| (v * q).round() / q)
        }
        FamilyKind::ImpulseNoise => map_pixels(pixels, |v| {
            // Both draws happen for every pixel so the stream is aligned
            // across levels; p only moves the threshold.
            let u = rng.gen::<f64>();
            let salt = rng.gen::<bool>();
            if u < p {
                if salt {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        }),
        FamilyKind::Jitter => return Ok(jitter(pixels, p, &mut rng)),
    };
    Ok(out)
}

fn map_pixels<S: Scalar, F: FnMut(f64) -> f64>(pixels: &Tensor<S>, mut f: F) -> Tensor<S> {
    let data = pixels
        .data()
        .iter()
        .map(|&v| S::from_f64(f(v.as_f64()).clamp(0.0, 1.0)))
        .collect();
    Tensor::new(pixels.shape(), data).expect("shape unchanged")
}

/// Box–Muller standard normal draw (two uniforms per sample).
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Separable Gaussian blur with edge clamping; a constant image is a fixed
/// point because the kernel is normalized.
fn gaussian_blur<S: Scalar>(pixels: &Tensor<S>, sigma: f64) -> Tensor<S> {
    let shape = pixels.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut norm = 0.0;
    for i in -radius..=radius {
        let k = (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        kernel.push(k);
        norm += k;
    }
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let src: Vec<f64> = pixels.data().iter().map(|&v| v.as_f64()).collect();
    let mut tmp = vec![0.0f64; src.len()];
    for ci in 0..c {
        for y in 0..h {
            let row = (ci * h + y) * w;
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let xi = (x as isize + ki as isize - radius).clamp(0, w as isize - 1);
                    acc += kv * src[row + xi as usize];
                }
                tmp[row + x] = acc;
            }
        }
    }
    let mut dst = vec![0.0f64; src.len()];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let yi = (y as isize + ki as isize - radius).clamp(0, h as isize - 1);
                    acc += kv * tmp[(ci * h + yi as usize) * w + x];
                }
                dst[(ci * h + y) * w + x] = acc;
            }
        }
    }
    Tensor::new(&shape, dst.into_iter().map(|v| S::from_f64(v.clamp(0.0, 1.0))).collect())
        .expect("shape unchanged")
}

/// Displace a fraction of pixels by a fixed random offset of radius <= 2.
/// The offset field and the per-pixel activation order are drawn once, so
/// the displaced set at a lower fraction is a subset of the set at any
/// higher fraction.
fn jitter<S: Scalar>(pixels: &Tensor<S>, fraction: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    const R: isize = 2;
    let shape = pixels.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let src = pixels.data();
    // One (activation, displacement) per spatial location, shared across
    // channels; a location moves when its activation is under `fraction`.
    let mut field = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let u = rng.gen::<f64>();
        let dy = rng.gen_range(-R..=R);
        let dx = rng.gen_range(-R..=R);
        field.push((u, dy, dx));
    }
    let mut dst = Vec::with_capacity(src.len());
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (u, dy, dx) = field[y * w + x];
                let (sy, sx) = if u < fraction {
                    (
                        (y as isize + dy).clamp(0, h as isize - 1) as usize,
                        (x as isize + dx).clamp(0, w as isize - 1) as usize,
                    )
                } else {
                    (y, x)
                };
                dst.push(src[(ci * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new(&shape, dst).expect("shape unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Tensor<f64> {
        Tensor::full(&[1, 8, 8], v)
    }

    #[test]
    fn family_names_roundtrip() {
        for kind in FamilyKind::all() {
            assert_eq!(FamilyKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(matches!(FamilyKind::parse("jpeg"), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn default_grids_are_valid() {
        let fams = default_families();
        assert_eq!(fams.len(), 8);
        for f in &fams {
            f.validate().unwrap();
            assert_eq!(f.levels.len(), 4);
        }
    }

    #[test]
    fn unordered_grid_rejected() {
        let bad = DistortionFamily::new(
            FamilyKind::GaussianNoise,
            vec![vec![0.1], vec![0.3], vec![0.2]],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn brighten_worked_example() {
        // +0.2 on constant 0.5 -> constant 0.7
        let fam =
            DistortionFamily::new(FamilyKind::Brighten, vec![vec![0.1], vec![0.2], vec![0.3]])
                .unwrap();
        let out = apply_distortion(&constant(0.5), &fam, 1, 0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        // A σ=0 level is expressible even if the defaults never use it.
        let fam = DistortionFamily {
            kind: FamilyKind::GaussianNoise,
            levels: vec![vec![0.0], vec![0.1], vec![0.2]],
        };
        let img = constant(0.3);
        let out = apply_distortion(&img, &fam, 0, 7).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn blur_fixes_constant_images() {
        let fams = default_families();
        let blur = fams.iter().find(|f| f.kind == FamilyKind::GaussianBlur).unwrap();
        let img = constant(0.6);
        for level in 0..blur.levels.len() {
            let out = apply_distortion(&img, blur, level, 3).unwrap();
            for &v in out.data() {
                assert!((v - 0.6).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_clamped_and_deterministic() {
        let img = Tensor::<f64>::new(&[1, 8, 8], (0..64).map(|v| v as f64 / 63.0).collect()).unwrap();
        for fam in &default_families() {
            for level in 0..fam.levels.len() {
                let a = apply_distortion(&img, fam, level, 42).unwrap();
                let b = apply_distortion(&img, fam, level, 42).unwrap();
                assert_eq!(a, b, "family {} not deterministic", fam.name());
                assert!(
                    a.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                    "family {} out of range",
                    fam.name()
                );
            }
        }
    }

    #[test]
    fn different_image_seeds_decorrelate_noise() {
        let img = constant(0.5);
        let fams = default_families();
        let noise = &fams[0];
        let a = apply_distortion(&img, noise, 2, 1).unwrap();
        let b = apply_distortion(&img, noise, 2, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn level_out_of_range_rejected() {
        let fams = default_families();
        assert!(apply_distortion(&constant(0.5), &fams[0], 4, 0).is_err());
    }

    #[test]
    fn truncation_keeps_endpoints() {
        let fams = default_families();
        let t = fams[0].truncated(3).unwrap();
        assert_eq!(t.levels.len(), 3);
        assert_eq!(t.levels[0], fams[0].levels[0]);
        assert_eq!(t.levels[2], fams[0].levels[3]);
    }
}

//! On-disk task format: one subdirectory per family holding binary PPM
//! (P6) images, plus a top-level `scores.csv` with header
//! `image,family,severity,score`. The CSV is the authoritative listing;
//! import reads it and loads whatever it names.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{ScoredImage, TargetTask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Write (c,h,w) pixels in [0,1] as an 8-bit binary PPM. Single-channel
/// images are replicated to gray RGB.
pub fn write_ppm<S: Scalar>(path: &Path, pixels: &Tensor<S>) -> Result<()> {
    let shape = pixels.shape();
    if shape.len() != 3 || (shape[0] != 1 && shape[0] != 3) {
        return Err(Error::InvalidArgument(format!(
            "PPM output needs (1|3,h,w) pixels, got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut buf = Vec::with_capacity(32 + 3 * h * w);
    write!(buf, "P6\n{w} {h}\n255\n")?;
    let data = pixels.data();
    let quantize = |v: S| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let src = if c == 1 { 0 } else { ch };
                buf.push(quantize(data[(src * h + y) * w + x]));
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Read a binary PPM. Returns (1,h,w) when all three channels agree
/// everywhere, else (3,h,w); values are scaled to [0,1].
pub fn read_ppm<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments allowed; a single whitespace byte ends the header.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(bad("not a P6 PPM"));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    let raw = &bytes[pos..pos + need];
    let gray = raw.chunks_exact(3).all(|px| px[0] == px[1] && px[0] == px[2]);
    let scale = |b: u8| S::from_f64(b as f64 / 255.0);
    if gray {
        let data = raw.chunks_exact(3).map(|px| scale(px[0])).collect();
        Tensor::new(&[1, h, w], data)
    } else {
        let mut data = vec![S::zero(); 3 * h * w];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                data[ch * h * w + i] = scale(px[ch]);
            }
        }
        Tensor::new(&[3, h, w], data)
    }
}

/// Export scored images under `dir`, grouped by family, and write the
/// `scores.csv` manifest sorted by (family, image) for stable bytes.
pub fn export_images<S: Scalar>(dir: &Path, images: &[ScoredImage<S>]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("nothing to export".into()));
    }
    fs::create_dir_all(dir)?;
    let mut rows: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
    for img in images {
        let fam_dir = dir.join(&img.family);
        fs::create_dir_all(&fam_dir)?;
        let file = format!("{}.ppm", img.name);
        write_ppm(&fam_dir.join(&file), &img.pixels)?;
        let key = (img.family.clone(), file);
        if rows
            .insert(key.clone(), (img.severity, img.score.as_f64()))
            .is_some()
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate image {}/{} in export",
                key.0, key.1
            )));
        }
    }
    let mut csv = String::from("image,family,severity,score\n");
    for ((family, file), (severity, score)) in &rows {
        csv.push_str(&format!("{family}/{file},{family},{severity},{score:.9}\n"));
    }
    fs::write(dir.join("scores.csv"), csv)?;
    Ok(())
}

/// Load every image listed in `dir/scores.csv`.
pub fn import_images<S: Scalar>(dir: &Path) -> Result<Vec<ScoredImage<S>>> {
    let manifest = dir.join("scores.csv");
    let text = fs::read_to_string(&manifest)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("image,family,severity,score") => {}
        other => {
            return Err(Error::Parse(format!(
                "{}: expected header image,family,severity,score, got {other:?}",
                manifest.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "{} line {}: expected 4 fields, got {}",
                manifest.display(),
                ln + 2,
                fields.len()
            )));
        }
        let severity: usize = fields[2].parse().map_err(|_| {
            Error::Parse(format!("{} line {}: bad severity", manifest.display(), ln + 2))
        })?;
        let score: f64 = fields[3].parse().map_err(|_| {
            Error::Parse(format!("{} line {}: bad score", manifest.display(), ln + 2))
        })?;
        let pixels = read_ppm(&dir.join(fields[0]))?;
        let name = Path::new(fields[0])
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| fields[0].to_string());
        out.push(ScoredImage {
            name,
            family: fields[1].to_string(),
            severity,
            pixels,
            score: S::from_f64(score),
        });
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!("{} lists no images", manifest.display())));
    }
    Ok(out)
}

/// Build a fine-tuning target from externally scored images: normalize the
/// scores through the declared range and split train/test at image level.
pub fn target_from_images<S: Scalar>(
    images: Vec<ScoredImage<S>>,
    family: &str,
    score_range: (f64, f64),
    train_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TargetTask<S>> {
    if images.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "target task needs >= 2 images, got {}",
            images.len()
        )));
    }
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let raw: Vec<f64> = images.iter().map(|i| i.score.as_f64()).collect();
    let normed = crate::taskgen::normalize_scores(&raw, score_range)?;
    let mut images = images;
    for (img, s) in images.iter_mut().zip(&normed) {
        img.score = S::from_f64(*s);
    }
    let n = images.len();
    let n_train = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let train_idx: std::collections::HashSet<usize> = order[..n_train].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, img) in images.into_iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(img);
        } else {
            test.push(img);
        }
    }
    train.sort_by(|a, b| a.name.cmp(&b.name));
    test.sort_by(|a, b| a.name.cmp(&b.name));
    let task = TargetTask {
        family: family.to_string(),
        train,
        test,
        score_range: (0.0, 1.0),
    };
    task.validate()?;
    Ok(task)
}

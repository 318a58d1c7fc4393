//! Seeded synthetic corpora: ellipse/disc images with exact masks for
//! segmentation, and separable class-labeled images for classifier smoke
//! runs. Everything here is test scaffolding with analytic ground truth,
//! not a stand-in for dermoscopy data.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::rng::SeededRng;

/// Analytic ellipse rasterization: pixel (y, x) is set iff its integer
/// coordinates fall inside the ellipse.
pub fn ellipse_mask(size: usize, cy: f64, cx: f64, ry: f64, rx: f64) -> Result<Mask> {
    if ry <= 0.0 || rx <= 0.0 {
        return Err(Error::param("ellipse_mask", format!("radii ({ry}, {rx}) must be positive")));
    }
    let mut bits = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                bits[y * size + x] = 1;
            }
        }
    }
    Mask::new(size, size, bits)
}

/// Grayscale image of a bright ellipse on a dark field, with uniform pixel
/// noise of amplitude `noise` on both regions.
pub fn ellipse_image(
    mask: &Mask,
    background: u8,
    foreground: u8,
    noise: u8,
    rng: &mut SeededRng,
) -> Image {
    let (h, w) = (mask.height(), mask.width());
    let mut img = Image::filled(h, w, 1, background);
    let amp = noise as f64;
    for (px, &bit) in img.pixels_mut().iter_mut().zip(mask.bits()) {
        let base = if bit == 1 { foreground } else { background } as f64;
        *px = (base + rng.uniform(-amp as f32, amp as f32) as f64).clamp(0.0, 255.0) as u8;
    }
    img
}

/// Seeded corpus of noisy ellipse images paired with their exact analytic
/// masks. Centers and radii stay far enough from the border that every
/// lesion is fully in frame.
pub fn ellipse_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<(Image, Mask)>> {
    if size < 8 {
        return Err(Error::param("ellipse_dataset", format!("size {size} too small")));
    }
    let mut rng = SeededRng::new(seed);
    let s = size as f64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cy = rng.uniform((0.32 * s) as f32, (0.68 * s) as f32) as f64;
        let cx = rng.uniform((0.32 * s) as f32, (0.68 * s) as f32) as f64;
        let ry = rng.uniform((0.10 * s) as f32, (0.26 * s) as f32) as f64;
        let rx = rng.uniform((0.10 * s) as f32, (0.26 * s) as f32) as f64;
        let mask = ellipse_mask(size, cy, cx, ry, rx)?;
        let bg = 20 + rng.next_below(41) as u8;
        let fg = 170 + rng.next_below(66) as u8;
        let img = ellipse_image(&mask, bg, fg, 12, &mut rng);
        out.push((img, mask));
    }
    Ok(out)
}

/// Class color table: the 8 corners of the RGB cube, mapped to dim/bright
/// levels so classes are separable by channel statistics alone.
pub fn class_color(class: usize) -> [u8; 3] {
    let level = |bit: usize| if (class >> bit) & 1 == 1 { 185 } else { 70 };
    [level(2), level(1), level(0)]
}

/// RGB images whose class is encoded in the dominant color, plus uniform
/// per-pixel noise. Returns images with their class indices, grouped by
/// class in index order.
pub fn color_class_dataset(per_class: usize, h: usize, w: usize, seed: u64) -> (Vec<Image>, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let mut images = Vec::with_capacity(per_class * 8);
    let mut labels = Vec::with_capacity(per_class * 8);
    for class in 0..8 {
        let base = class_color(class);
        for _ in 0..per_class {
            let mut img = Image::filled(h, w, 3, 0);
            for (i, px) in img.pixels_mut().iter_mut().enumerate() {
                let b = base[i % 3] as f64;
                *px = (b + rng.uniform(-18.0, 18.0) as f64).clamp(0.0, 255.0) as u8;
            }
            images.push(img);
            labels.push(class);
        }
    }
    (images, labels)
}

/// Grayscale images where each class is a fixed seeded noise texture and
/// members differ only by small pixel perturbations. Separable by local
/// pattern rather than brightness.
pub fn pattern_class_dataset(per_class: usize, h: usize, w: usize, seed: u64) -> (Vec<Image>, Vec<usize>) {
    let root = SeededRng::new(seed);
    let mut member_rng = root.derive(u64::MAX);
    let mut images = Vec::with_capacity(per_class * 8);
    let mut labels = Vec::with_capacity(per_class * 8);
    for class in 0..8 {
        let mut proto_rng = root.derive(class as u64);
        let proto: Vec<u8> = (0..h * w).map(|_| proto_rng.next_below(256) as u8).collect();
        for _ in 0..per_class {
            let mut img = Image::filled(h, w, 1, 0);
            for (px, &p) in img.pixels_mut().iter_mut().zip(&proto) {
                *px = (p as f64 + member_rng.uniform(-10.0, 10.0) as f64).clamp(0.0, 255.0) as u8;
            }
            images.push(img);
            labels.push(class);
        }
    }
    (images, labels)
}

fn write_corpus_csv(dir: &Path, ids: &[String], labels: &[usize]) -> Result<PathBuf> {
    let mut csv = String::from(crate::dataset::ISIC_HEADER);
    csv.push('\n');
    for (id, &class) in ids.iter().zip(labels) {
        csv.push_str(id);
        for c in 0..8 {
            csv.push_str(if c == class { ",1.0" } else { ",0.0" });
        }
        csv.push('\n');
    }
    let csv_path = dir.join("ground_truth.csv");
    fs::write(&csv_path, csv)?;
    Ok(csv_path)
}

/// Writes a color-class corpus to disk in the ingest layout: one PNG per
/// image plus a ground-truth CSV with one-hot rows. Returns the CSV path.
pub fn write_color_corpus(dir: &Path, per_class: usize, h: usize, w: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (images, labels) = color_class_dataset(per_class, h, w, seed);
    let mut ids = Vec::with_capacity(images.len());
    for (i, (img, &class)) in images.iter().zip(&labels).enumerate() {
        let id = format!("syn_{class}_{i:04}");
        img.save(&dir.join(format!("{id}.png")))?;
        ids.push(id);
    }
    write_corpus_csv(dir, &ids, &labels)
}

/// Class color table for lesion-shaped corpora. Levels sit high enough that
/// even the dimmest class's disc clears the default mid-tone stretch, so
/// the deterministic segmenter always finds it.
pub fn lesion_color(class: usize) -> [u8; 3] {
    let level = |bit: usize| if (class >> bit) & 1 == 1 { 230 } else { 120 };
    [level(2), level(1), level(0)]
}

/// Writes a lesion-shaped corpus: a class-colored ellipse on a dark field,
/// in the ingest layout. Class identity lives in the disc color relative to
/// the shared background, so it survives global per-channel gain correction;
/// the dark field keeps border cropping and thresholding well-posed.
pub fn write_lesion_corpus(dir: &Path, per_class: usize, size: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut rng = SeededRng::new(seed);
    let s = size as f64;
    let mut ids = Vec::with_capacity(per_class * 8);
    let mut labels = Vec::with_capacity(per_class * 8);
    for class in 0..8 {
        let color = lesion_color(class);
        for i in 0..per_class {
            let cy = rng.uniform((0.36 * s) as f32, (0.64 * s) as f32) as f64;
            let cx = rng.uniform((0.36 * s) as f32, (0.64 * s) as f32) as f64;
            let ry = rng.uniform((0.16 * s) as f32, (0.26 * s) as f32) as f64;
            let rx = rng.uniform((0.16 * s) as f32, (0.26 * s) as f32) as f64;
            let mask = ellipse_mask(size, cy, cx, ry, rx)?;
            let mut img = Image::filled(size, size, 3, 0);
            for (p, &bit) in img.pixels_mut().chunks_exact_mut(3).zip(mask.bits()) {
                for (ch, v) in p.iter_mut().enumerate() {
                    let base = if bit == 1 { color[ch] as f64 } else { 22.0 };
                    *v = (base + rng.uniform(-8.0, 8.0) as f64).clamp(0.0, 255.0) as u8;
                }
            }
            let id = format!("les_{class}_{i:04}");
            img.save(&dir.join(format!("{id}.png")))?;
            ids.push(id);
            labels.push(class);
        }
    }
    write_corpus_csv(dir, &ids, &labels)
}

//! Affine and photometric augmentations plus the class-balancing planner
//! that tops every class up to a fixed per-class training quota.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{self, Image};
use crate::rng::SeededRng;

/// One augmentation step. Geometric ops keep the output at the input's
/// dimensions: rotation, scaling and shearing fill uncovered pixels with
/// black, and `Crop` resizes its window back up.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentOp {
    /// Positive degrees turn the content clockwise (top-left origin).
    Rotate { degrees: f32 },
    /// Zoom about the center; factor > 1 magnifies.
    Scale { factor: f32 },
    FlipH,
    FlipV,
    /// Horizontal shear about the center row.
    Shear { factor: f32 },
    /// Gain applied around the mid-gray pivot 128.
    Contrast { gain: f32 },
    /// Additive intensity shift, clamped to u8.
    Brightness { delta: i16 },
    /// Window to keep; the result is resized back to the source dims.
    Crop { x: usize, y: usize, w: usize, h: usize },
    /// Window to blank out.
    Cutout { x: usize, y: usize, w: usize, h: usize },
}

fn check_rect(op: &'static str, img: &Image, x: usize, y: usize, w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 || x + w > img.width() || y + h > img.height() {
        return Err(Error::param(
            op,
            format!(
                "rect {w}x{h}+{x}+{y} outside image {}x{}",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(())
}

/// Bilinear sampling through an inverse map from output (y, x) to source
/// coordinates. Samples outside the source read as black.
fn affine_sample(img: &Image, map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.pixels();
    let mut out = vec![0u8; h * w * c];
    for yo in 0..h {
        for xo in 0..w {
            let (sy, sx) = map(yo as f64, xo as f64);
            if sy <= -1.0 || sx <= -1.0 || sy >= h as f64 || sx >= w as f64 {
                continue;
            }
            let y0 = sy.floor();
            let x0 = sx.floor();
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            for ch in 0..c {
                let at = |y: isize, x: isize| -> f64 {
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        0.0
                    } else {
                        src[(y as usize * w + x as usize) * c + ch] as f64
                    }
                };
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                out[(yo * w + xo) * c + ch] = imaging::round_u8(v);
            }
        }
    }
    Image::new(h, w, c, out).expect("dims preserved")
}

fn flip(img: &Image, horizontal: bool) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.pixels();
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
            let d = (y * w + x) * c;
            let s = (sy * w + sx) * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    Image::new(h, w, c, out).expect("dims preserved")
}

/// Applies one op. Output dims always equal input dims, and the result is a
/// pure function of `(img, op)`.
pub fn apply_augment(img: &Image, op: &AugmentOp) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    match *op {
        AugmentOp::Rotate { degrees } => {
            let rad = (degrees as f64).to_radians();
            let (sin, cos) = rad.sin_cos();
            Ok(affine_sample(img, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                (cy - dx * sin + dy * cos, cx + dx * cos + dy * sin)
            }))
        }
        AugmentOp::Scale { factor } => {
            if !(factor > 0.0) {
                return Err(Error::param("apply_augment", format!("scale factor {factor} must be > 0")));
            }
            let f = factor as f64;
            Ok(affine_sample(img, |y, x| (cy + (y - cy) / f, cx + (x - cx) / f)))
        }
        AugmentOp::FlipH => Ok(flip(img, true)),
        AugmentOp::FlipV => Ok(flip(img, false)),
        AugmentOp::Shear { factor } => {
            let k = factor as f64;
            Ok(affine_sample(img, |y, x| (y, x - k * (y - cy))))
        }
        AugmentOp::Contrast { gain } => {
            if !(gain > 0.0) {
                return Err(Error::param("apply_augment", format!("contrast gain {gain} must be > 0")));
            }
            let out = img
                .pixels()
                .iter()
                .map(|&v| imaging::round_u8((v as f64 - 128.0) * gain as f64 + 128.0))
                .collect();
            Image::new(h, w, img.channels(), out)
        }
        AugmentOp::Brightness { delta } => {
            let out = img
                .pixels()
                .iter()
                .map(|&v| (v as i32 + delta as i32).clamp(0, 255) as u8)
                .collect();
            Image::new(h, w, img.channels(), out)
        }
        AugmentOp::Crop { x, y, w: cw, h: ch } => {
            check_rect("apply_augment", img, x, y, cw, ch)?;
            let c = img.channels();
            let mut window = Vec::with_capacity(ch * cw * c);
            for yy in y..y + ch {
                let row = &img.pixels()[(yy * w + x) * c..(yy * w + x + cw) * c];
                window.extend_from_slice(row);
            }
            imaging::resize(&Image::new(ch, cw, c, window)?, h, w)
        }
        AugmentOp::Cutout { x, y, w: cw, h: ch } => {
            check_rect("apply_augment", img, x, y, cw, ch)?;
            let c = img.channels();
            let mut out = img.pixels().to_vec();
            for yy in y..y + ch {
                out[(yy * w + x) * c..(yy * w + x + cw) * c].fill(0);
            }
            Image::new(h, w, c, out)
        }
    }
}

/// Applies a chain left to right.
pub fn apply_chain(img: &Image, ops: &[AugmentOp]) -> Result<Image> {
    let mut cur = img.clone();
    for op in ops {
        cur = apply_augment(&cur, op)?;
    }
    Ok(cur)
}

/// Encodes a chain as `op:param|op:param`; parameterless flips encode bare.
pub fn format_chain(ops: &[AugmentOp]) -> String {
    let mut s = String::new();
    for (i, op) in ops.iter().enumerate() {
        if i > 0 {
            s.push('|');
        }
        match op {
            AugmentOp::Rotate { degrees } => write!(s, "rotate:{degrees}").unwrap(),
            AugmentOp::Scale { factor } => write!(s, "scale:{factor}").unwrap(),
            AugmentOp::FlipH => s.push_str("flip_h"),
            AugmentOp::FlipV => s.push_str("flip_v"),
            AugmentOp::Shear { factor } => write!(s, "shear:{factor}").unwrap(),
            AugmentOp::Contrast { gain } => write!(s, "contrast:{gain}").unwrap(),
            AugmentOp::Brightness { delta } => write!(s, "brightness:{delta}").unwrap(),
            AugmentOp::Crop { x, y, w, h } => write!(s, "crop:{x},{y},{w},{h}").unwrap(),
            AugmentOp::Cutout { x, y, w, h } => write!(s, "cutout:{x},{y},{w},{h}").unwrap(),
        }
    }
    s
}

fn parse_rect(op: &'static str, param: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<&str> = param.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::param(op, format!("rect needs x,y,w,h; got {param:?}")));
    }
    let mut vals = [0usize; 4];
    for (v, part) in vals.iter_mut().zip(&parts) {
        *v = part
            .parse()
            .map_err(|_| Error::param(op, format!("bad rect component {part:?}")))?;
    }
    Ok((vals[0], vals[1], vals[2], vals[3]))
}

/// Parses the `op:param|op:param` encoding produced by [`format_chain`].
/// An empty string is the empty chain.
pub fn parse_chain(s: &str) -> Result<Vec<AugmentOp>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut ops = Vec::new();
    for token in s.split('|') {
        let (name, param) = match token.split_once(':') {
            Some((n, p)) => (n, p),
            None => (token, ""),
        };
        let num = |op: &'static str| -> Result<f32> {
            param
                .parse()
                .map_err(|_| Error::param(op, format!("bad parameter {param:?}")))
        };
        ops.push(match name {
            "rotate" => AugmentOp::Rotate { degrees: num("parse_chain rotate")? },
            "scale" => AugmentOp::Scale { factor: num("parse_chain scale")? },
            "flip_h" => AugmentOp::FlipH,
            "flip_v" => AugmentOp::FlipV,
            "shear" => AugmentOp::Shear { factor: num("parse_chain shear")? },
            "contrast" => AugmentOp::Contrast { gain: num("parse_chain contrast")? },
            "brightness" => AugmentOp::Brightness {
                delta: param
                    .parse()
                    .map_err(|_| Error::param("parse_chain brightness", format!("bad parameter {param:?}")))?,
            },
            "crop" => {
                let (x, y, w, h) = parse_rect("parse_chain crop", param)?;
                AugmentOp::Crop { x, y, w, h }
            }
            "cutout" => {
                let (x, y, w, h) = parse_rect("parse_chain cutout", param)?;
                AugmentOp::Cutout { x, y, w, h }
            }
            other => return Err(Error::param("parse_chain", format!("unknown op {other:?}"))),
        });
    }
    Ok(ops)
}

/// Sampling ranges for randomly drawn augmentations. All configurable; the
/// defaults below are what the balancing planner uses.
#[derive(Debug, Clone, Copy)]
pub struct AugmentRanges {
    pub rotate_degrees: (f32, f32),
    pub scale: (f32, f32),
    pub shear: (f32, f32),
    pub contrast: (f32, f32),
    pub brightness: (i16, i16),
    /// Cutout hole size as a fraction of each dimension.
    pub cutout_frac: (f32, f32),
    /// Crop window size as a fraction of each dimension.
    pub crop_frac: (f32, f32),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            rotate_degrees: (-45.0, 45.0),
            scale: (0.8, 1.2),
            shear: (-0.2, 0.2),
            contrast: (0.7, 1.3),
            brightness: (-30, 30),
            cutout_frac: (0.05, 0.25),
            crop_frac: (0.7, 1.0),
        }
    }
}

/// Op kinds the planner draws from when synthesizing balanced data:
/// rotation, cropping, scaling, both flips, shearing, and contrast.
const PLANNER_POOL: usize = 7;

fn sample_window(rng: &mut SeededRng, frac: (f32, f32), h: usize, w: usize) -> (usize, usize, usize, usize) {
    let fw = rng.uniform(frac.0, frac.1);
    let fh = rng.uniform(frac.0, frac.1);
    let cw = ((w as f32 * fw).round() as usize).clamp(1, w);
    let ch = ((h as f32 * fh).round() as usize).clamp(1, h);
    let x = rng.next_below((w - cw + 1) as u64) as usize;
    let y = rng.next_below((h - ch + 1) as u64) as usize;
    (x, y, cw, ch)
}

/// Draws a chain of 1..=3 distinct ops from the planner pool, with concrete
/// parameters sampled from `ranges` for an image of `h` x `w`.
pub fn sample_chain(rng: &mut SeededRng, ranges: &AugmentRanges, h: usize, w: usize) -> Vec<AugmentOp> {
    let n = 1 + rng.next_below(3) as usize;
    let kinds = rng.sample_without_replacement(PLANNER_POOL, n);
    kinds
        .into_iter()
        .map(|kind| match kind {
            0 => AugmentOp::Rotate {
                degrees: rng.uniform(ranges.rotate_degrees.0, ranges.rotate_degrees.1),
            },
            1 => {
                let (x, y, cw, chh) = sample_window(rng, ranges.crop_frac, h, w);
                AugmentOp::Crop { x, y, w: cw, h: chh }
            }
            2 => AugmentOp::Scale { factor: rng.uniform(ranges.scale.0, ranges.scale.1) },
            3 => AugmentOp::FlipH,
            4 => AugmentOp::FlipV,
            5 => AugmentOp::Shear { factor: rng.uniform(ranges.shear.0, ranges.shear.1) },
            _ => AugmentOp::Contrast { gain: rng.uniform(ranges.contrast.0, ranges.contrast.1) },
        })
        .collect()
}

/// One synthesized image: which source (by ordinal within its class) and
/// what chain to run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub src_index: usize,
    pub ops: Vec<AugmentOp>,
}

/// Per-class share of a balance plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPlan {
    pub class: String,
    pub source_count: usize,
    pub target: usize,
    /// Number of augmented images to create: `max(0, target - source_count)`.
    pub synthesize: usize,
    /// Ordinals of retained originals (all of them, or a subsample of
    /// exactly `target` when the class is over quota).
    pub keep: Vec<usize>,
    pub synth: Vec<SynthItem>,
}

/// Full balancing plan across classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancePlan {
    pub seed: u64,
    pub target: usize,
    pub classes: Vec<ClassPlan>,
}

impl BalancePlan {
    /// Total images in the balanced set: `target` per class.
    pub fn total_rows(&self) -> usize {
        self.classes.iter().map(|c| c.keep.len() + c.synth.len()).sum()
    }
}

/// Builds a deterministic balancing plan from per-class counts. Under-quota
/// classes keep every original and synthesize the difference; over-quota
/// classes subsample `target` originals without replacement. Image dims are
/// needed so crop windows in sampled chains carry concrete pixel rects.
pub fn plan_balance(
    class_counts: &BTreeMap<String, usize>,
    target: usize,
    h: usize,
    w: usize,
    ranges: &AugmentRanges,
    seed: u64,
) -> Result<BalancePlan> {
    if target == 0 {
        return Err(Error::param("plan_balance", "target must be at least 1"));
    }
    if class_counts.is_empty() {
        return Err(Error::param("plan_balance", "no classes"));
    }
    let root = SeededRng::new(seed);
    let mut classes = Vec::with_capacity(class_counts.len());
    for (class, &count) in class_counts {
        if count == 0 {
            return Err(Error::param("plan_balance", format!("class {class} has no images")));
        }
        let mut stream = root.derive(crate::rng::hash_bytes(class.as_bytes()));
        let (keep, synthesize) = if count > target {
            (stream.sample_without_replacement(count, target), 0)
        } else {
            ((0..count).collect(), target - count)
        };
        let synth = (0..synthesize)
            .map(|i| {
                let mut item = stream.derive(i as u64);
                SynthItem {
                    src_index: item.next_below(count as u64) as usize,
                    ops: sample_chain(&mut item, ranges, h, w),
                }
            })
            .collect();
        classes.push(ClassPlan {
            class: class.clone(),
            source_count: count,
            target,
            synthesize,
            keep,
            synth,
        });
    }
    Ok(BalancePlan { seed, target, classes })
}

/// One source image execute_plan can read: a stable id plus where it lives.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub id: String,
    pub path: PathBuf,
}

/// One output row of the balanced dataset manifest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestRow {
    pub out_path: String,
    pub src_id: String,
    pub class: String,
    pub op_chain: String,
    pub seed: u64,
}

/// Writes manifest rows as CSV with the fixed header.
pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads back a manifest written by [`write_manifest`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Materializes a plan: retained originals are referenced in place, and each
/// synth item is rendered to `out_dir/<class>/` as PNG. Returns the manifest
/// rows (also written to `out_dir/manifest.csv`). Rerunning with the same
/// plan and sources reproduces the manifest byte for byte.
pub fn execute_plan(
    plan: &BalancePlan,
    sources: &BTreeMap<String, Vec<SourceImage>>,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(plan.total_rows());
    for cp in &plan.classes {
        let srcs = sources
            .get(&cp.class)
            .ok_or_else(|| Error::Dataset(format!("no sources for class {}", cp.class)))?;
        if srcs.len() != cp.source_count {
            return Err(Error::Dataset(format!(
                "class {}: plan expects {} sources, got {}",
                cp.class,
                cp.source_count,
                srcs.len()
            )));
        }
        for &i in &cp.keep {
            let s = &srcs[i];
            rows.push(ManifestRow {
                out_path: s.path.to_string_lossy().into_owned(),
                src_id: s.id.clone(),
                class: cp.class.clone(),
                op_chain: String::new(),
                seed: plan.seed,
            });
        }
        if !cp.synth.is_empty() {
            std::fs::create_dir_all(out_dir.join(&cp.class))?;
        }
        for (seq, item) in cp.synth.iter().enumerate() {
            let s = &srcs[item.src_index];
            let img = Image::load(&s.path)
                .map_err(|e| Error::Dataset(format!("source {} unreadable: {e}", s.id)))?;
            let aug = apply_chain(&img, &item.ops)?;
            let out_path = out_dir.join(&cp.class).join(format!("{}_aug{seq}.png", s.id));
            aug.save(&out_path)?;
            rows.push(ManifestRow {
                out_path: out_path.to_string_lossy().into_owned(),
                src_id: s.id.clone(),
                class: cp.class.clone(),
                op_chain: format_chain(&item.ops),
                seed: plan.seed,
            });
        }
    }
    write_manifest(&rows, &out_dir.join("manifest.csv"))?;
    Ok(rows)
}

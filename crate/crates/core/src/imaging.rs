//! Image preprocessing: decode/encode, bilinear resize, grayscale,
//! contrast stretching, color constancy, border cropping, mask application.
//!
//! All float-to-u8 conversions round half to even so goldens are bit-exact.
//! JPEG decode can differ across codec builds; byte-exact fixtures use PNG.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit image, row-major, channels interleaved. Grayscale (1 channel) or
/// RGB (3 channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("Image::new", format!("zero dimension {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param("Image::new", format!("{channels} channels; expected 1 or 3")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                "Image::new",
                format!("{} pixel bytes", height * width * channels),
                format!("{}", pixels.len()),
            ));
        }
        Ok(Image { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Image::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled dims validated by caller")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Channel values of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    /// Decodes PNG or JPEG. Single-channel files stay grayscale; everything
    /// else is converted to RGB.
    pub fn load(path: &Path) -> Result<Image> {
        let decoded = image::open(path)?;
        match decoded {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                Image::new(h, w, 1, g.into_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                Image::new(h, w, 3, rgb.into_raw())
            }
        }
    }

    /// Encodes by file extension (`.png`, `.jpg`, `.jpeg`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => image::GrayImage::from_raw(w, h, self.pixels.clone())
                .expect("buffer length checked at construction")
                .save(path)?,
            _ => image::RgbImage::from_raw(w, h, self.pixels.clone())
                .expect("buffer length checked at construction")
                .save(path)?,
        }
        Ok(())
    }
}

/// Binary mask paired with an image of the same spatial dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(
                "Mask::new",
                format!("{} bits", height * width),
                format!("{}", bits.len()),
            ));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::param("Mask::new", format!("bit value {bad}; mask bits must be 0 or 1")));
        }
        Ok(Mask { height, width, bits })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask { height, width, bits: vec![1; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Fraction of set bits.
    pub fn coverage(&self) -> f64 {
        let set: usize = self.bits.iter().map(|&b| b as usize).sum();
        set as f64 / self.bits.len() as f64
    }

    /// Binarizes the grayscale rendering of `img`: set where luma >= threshold.
    pub fn from_image(img: &Image, threshold: u8) -> Result<Mask> {
        let gray = to_grayscale(img)?;
        let bits = gray.pixels().iter().map(|&v| u8::from(v >= threshold)).collect();
        Mask::new(gray.height, gray.width, bits)
    }

    /// Reads a grayscale PNG; any nonzero value becomes a set bit.
    pub fn load(path: &Path) -> Result<Mask> {
        let img = Image::load(path)?;
        let gray = to_grayscale(&img)?;
        let bits = gray.pixels().iter().map(|&v| u8::from(v > 0)).collect();
        Mask::new(gray.height, gray.width, bits)
    }

    /// Writes a grayscale PNG with set bits as 255.
    pub fn save(&self, path: &Path) -> Result<()> {
        let pixels = self.bits.iter().map(|&b| b * 255).collect();
        Image::new(self.height, self.width, 1, pixels)?.save(path)
    }
}

/// Control points of the three-branch contrast stretch: `(r1, s1)` and
/// `(r2, s2)` map input intensity breakpoints to output intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PiecewiseParams {
    pub r1: u8,
    pub s1: u8,
    pub r2: u8,
    pub s2: u8,
}

impl PiecewiseParams {
    pub fn new(r1: u8, s1: u8, r2: u8, s2: u8) -> Result<Self> {
        if r1 == 0 || r1 > r2 || r2 >= 255 {
            return Err(Error::param(
                "PiecewiseParams",
                format!("r1 {r1}, r2 {r2}; need 0 < r1 <= r2 < 255"),
            ));
        }
        if s1 > s2 {
            return Err(Error::param("PiecewiseParams", format!("s1 {s1} > s2 {s2}")));
        }
        Ok(PiecewiseParams { r1, s1, r2, s2 })
    }
}

impl Default for PiecewiseParams {
    /// Mid-tone stretch used by the pipeline when no params are configured.
    fn default() -> Self {
        PiecewiseParams { r1: 70, s1: 0, r2: 140, s2: 255 }
    }
}

/// Round half to even, clamped to u8 range.
pub(crate) fn round_u8(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

/// Bilinear resize with pixel-center alignment. Interpolation runs in f64
/// per channel; sample coordinates are clamped at the borders.
pub fn resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param("resize", format!("zero output dimension {out_h}x{out_w}")));
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let src = &img.pixels;
    let mut out = vec![0u8; out_h * out_w * c];
    for yo in 0..out_h {
        let sy = ((yo as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for xo in 0..out_w {
            let sx = ((xo as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let (w00, w01) = ((1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx);
            let (w10, w11) = (fy * (1.0 - fx), fy * fx);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch] as f64;
                let v = w00 * at(y0, x0) + w01 * at(y0, x1) + w10 * at(y1, x0) + w11 * at(y1, x1);
                out[(yo * out_w + xo) * c + ch] = round_u8(v);
            }
        }
    }
    Image::new(out_h, out_w, c, out)
}

/// Luma conversion `round(0.299 R + 0.587 G + 0.114 B)`. A grayscale input
/// passes through unchanged.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels == 1 {
        return Ok(img.clone());
    }
    let out = img
        .pixels
        .chunks_exact(3)
        .map(|p| round_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    Image::new(img.height, img.width, 1, out)
}

fn piecewise_value(pix: u8, p: &PiecewiseParams) -> u8 {
    // Branch slopes are formed only inside the branch whose domain is
    // non-empty, so r1 == r2 never divides by zero.
    let (pix_f, r1, s1, r2, s2) =
        (pix as f64, p.r1 as f64, p.s1 as f64, p.r2 as f64, p.s2 as f64);
    let v = if pix <= p.r1 {
        (s1 / r1) * pix_f
    } else if pix <= p.r2 {
        (s2 - s1) / (r2 - r1) * (pix_f - r1) + s1
    } else {
        (255.0 - s2) / (255.0 - r2) * (pix_f - r2) + s2
    };
    round_u8(v)
}

/// Applies the three-branch intensity transform to every channel value via a
/// 256-entry table.
pub fn piecewise_linear(img: &Image, params: &PiecewiseParams) -> Result<Image> {
    PiecewiseParams::new(params.r1, params.s1, params.r2, params.s2)?;
    let mut lut = [0u8; 256];
    for (pix, slot) in lut.iter_mut().enumerate() {
        *slot = piecewise_value(pix as u8, params);
    }
    let out = img.pixels.iter().map(|&v| lut[v as usize]).collect();
    Image::new(img.height, img.width, img.channels, out)
}

/// `(sum |x_i - y_i|^p)^(1/p)`.
pub fn minkowski_distance(x: &[f64], y: &[f64], p: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "minkowski_distance",
            format!("equal lengths, left has {}", x.len()),
            format!("{}", y.len()),
        ));
    }
    if !(p >= 1.0) {
        return Err(Error::param("minkowski_distance", format!("p {p} must be >= 1")));
    }
    let mut acc = 0.0f64;
    for (a, b) in x.iter().zip(y) {
        acc += (a - b).abs().powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// Per-channel illuminant estimates `e_c = (mean (v/255)^p)^(1/p)`.
pub fn channel_estimates(img: &Image, p: f64) -> Result<[f64; 3]> {
    if img.channels != 3 {
        return Err(Error::shape("channel_estimates", "3 channels", format!("{}", img.channels)));
    }
    let n = (img.height * img.width) as f64;
    let mut sums = [0.0f64; 3];
    for px in img.pixels.chunks_exact(3) {
        for c in 0..3 {
            sums[c] += (px[c] as f64 / 255.0).powf(p);
        }
    }
    Ok([0, 1, 2].map(|c| (sums[c] / n).powf(1.0 / p)))
}

/// Per-channel gains `mean(e) / e_c` that equalize the estimates.
pub fn shades_of_gray_gains(img: &Image, p: f64) -> Result<[f64; 3]> {
    let est = channel_estimates(img, p)?;
    if let Some(c) = est.iter().position(|&e| e == 0.0) {
        return Err(Error::param(
            "shades_of_gray",
            format!("channel {c} is identically zero; gain undefined"),
        ));
    }
    let mean = (est[0] + est[1] + est[2]) / 3.0;
    Ok([0, 1, 2].map(|c| mean / est[c]))
}

/// Color-constancy correction: scales each channel by its gain, then rounds
/// and clamps back to u8.
pub fn shades_of_gray(img: &Image, p: f64) -> Result<Image> {
    let gains = shades_of_gray_gains(img, p)?;
    let out = img
        .pixels
        .chunks_exact(3)
        .flat_map(|px| [0, 1, 2].map(|c| round_u8(px[c] as f64 * gains[c])))
        .collect();
    Image::new(img.height, img.width, 3, out)
}

/// Removes the dark surround: binarizes the grayscale rendering at
/// `threshold`, measures the foreground's horizontal and vertical extents,
/// and returns the extent-sized rectangle centered on the foreground
/// centroid, clipped to the image.
pub fn crop_black_border(img: &Image, threshold: u8) -> Result<Image> {
    let gray = to_grayscale(img)?;
    let (h, w) = (gray.height, gray.width);
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (usize::MAX, 0usize, usize::MAX, 0usize);
    let (mut sum_x, mut sum_y, mut count) = (0.0f64, 0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            if gray.pixels[y * w + x] >= threshold {
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
                sum_x += x as f64;
                sum_y += y as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyForeground { threshold });
    }
    let (w_ext, h_ext) = (max_x - min_x + 1, max_y - min_y + 1);
    let (cx, cy) = (sum_x / count as f64, sum_y / count as f64);
    let left = (cx - (w_ext as f64 - 1.0) / 2.0).round_ties_even().max(0.0) as usize;
    let top = (cy - (h_ext as f64 - 1.0) / 2.0).round_ties_even().max(0.0) as usize;
    let right = (left + w_ext).min(w);
    let bottom = (top + h_ext).min(h);

    let c = img.channels;
    let mut out = Vec::with_capacity((bottom - top) * (right - left) * c);
    for y in top..bottom {
        let row = &img.pixels[(y * w + left) * c..(y * w + right) * c];
        out.extend_from_slice(row);
    }
    Image::new(bottom - top, right - left, c, out)
}

/// Zeroes every channel of pixels whose mask bit is 0.
pub fn apply_mask(img: &Image, mask: &Mask) -> Result<Image> {
    if img.height != mask.height || img.width != mask.width {
        return Err(Error::shape(
            "apply_mask",
            format!("mask dims {}x{}", img.height, img.width),
            format!("{}x{}", mask.height, mask.width),
        ));
    }
    let c = img.channels;
    let mut out = img.pixels.clone();
    for (i, &bit) in mask.bits.iter().enumerate() {
        if bit == 0 {
            out[i * c..(i + 1) * c].fill(0);
        }
    }
    Image::new(img.height, img.width, c, out)
}

/// Converts to a `[C, H, W]` tensor scaled to `[0, 1]` as `v / 255`.
pub fn to_tensor(img: &Image) -> Tensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut data = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[ch * h * w + y * w + x] = img.pixels[(y * w + x) * c + ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("image dims validated at construction")
}

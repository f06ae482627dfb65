//! Grayscale histogram signatures.
//!
//! Every image, whatever its size, color model or container format, is
//! reduced to 256 percentages: the share of pixels sitting at each 8-bit
//! gray level. Two images with the same tonal distribution therefore carry
//! the same signature even when one is a resized or desaturated copy of the
//! other.

use std::io::Cursor;

use image::{ImageFormat, ImageReader, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BINS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("unsupported or unrecognised image format")]
    UnsupportedFormat,
    #[error("corrupt image stream: {0}")]
    Corrupt(String),
    #[error("image has a zero dimension")]
    ZeroDimension,
    #[error("histogram is empty")]
    EmptyHistogram,
}

/// Formats the decoder accepts.
pub fn supported_formats() -> &'static [ImageFormat] {
    &[
        ImageFormat::Png,
        ImageFormat::Jpeg,
        ImageFormat::Bmp,
        ImageFormat::Gif,
        #[cfg(feature = "tiff")]
        ImageFormat::Tiff,
    ]
}

/// Decodes PNG, JPEG, BMP or GIF bytes into an RGBA raster. Animated GIFs
/// yield their first frame.
pub fn decode_image(bytes: &[u8]) -> Result<RgbaImage, ImageError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ImageError::Corrupt(e.to_string()))?;
    match reader.format() {
        Some(f) if supported_formats().contains(&f) => {}
        _ => return Err(ImageError::UnsupportedFormat),
    }
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(_) => ImageError::UnsupportedFormat,
        other => ImageError::Corrupt(other.to_string()),
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(ImageError::ZeroDimension);
    }
    Ok(img.into_rgba8())
}

/// MIME type of encoded image bytes, sniffed from their magic number.
pub fn mime_type(bytes: &[u8]) -> Option<&'static str> {
    image::guess_format(bytes).ok().map(|f| f.to_mime_type())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        assert_eq!(
            pixels.len(),
            width as usize * height as usize,
            "pixel buffer does not match {width}x{height}"
        );
        Ok(GrayImage { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions checked at construction")
    }

    /// Replicates each pixel into a `factor × factor` block.
    pub fn upscale_nearest(&self, factor: u32) -> GrayImage {
        assert!(factor >= 1);
        GrayImage::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
        .expect("nonzero dimensions")
    }

    /// Averages each `factor × factor` block, rounding half up. Edge pixels
    /// that do not fill a whole block are dropped.
    pub fn downscale_area(&self, factor: u32) -> GrayImage {
        assert!(factor >= 1 && factor <= self.width && factor <= self.height);
        let area = factor * factor;
        GrayImage::from_fn(self.width / factor, self.height / factor, |bx, by| {
            let mut sum = 0u32;
            for dy in 0..factor {
                for dx in 0..factor {
                    sum += u32::from(self.get(bx * factor + dx, by * factor + dy));
                }
            }
            ((2 * sum + area) / (2 * area)) as u8
        })
        .expect("nonzero dimensions")
    }
}

/// BT.601 luma of an RGBA pixel composited over white, rounded half up.
///
/// Done in integer arithmetic so the result is reproducible bit for bit:
/// with `c' = (c·a + 255·(255 − a)) / 255` and `Y = (299 R' + 587 G' + 114 B') / 1000`
/// the rounded value is `⌊(2N + D) / 2D⌋` for `N/D = Y`.
pub fn luma(rgba: [u8; 4]) -> u8 {
    let [r, g, b, a] = rgba.map(u64::from);
    let bg = 255 * (255 - a);
    let numer = 299 * (r * a + bg) + 587 * (g * a + bg) + 114 * (b * a + bg);
    let denom = 255_000;
    ((2 * numer + denom) / (2 * denom)) as u8
}

pub fn to_gray8(raster: &RgbaImage) -> GrayImage {
    let pixels = raster.pixels().map(|p| luma(p.0)).collect();
    GrayImage::new(raster.width(), raster.height(), pixels).expect("raster has positive dimensions")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: [u64; BINS],
    total: u64,
}

impl Histogram {
    pub fn of(img: &GrayImage) -> Self {
        let mut counts = [0u64; BINS];
        for &p in img.pixels() {
            counts[usize::from(p)] += 1;
        }
        Histogram {
            counts,
            total: img.pixels().len() as u64,
        }
    }

    /// Builds a histogram from raw bin counts.
    pub fn from_counts(counts: [u64; BINS]) -> Self {
        let total = counts.iter().sum();
        Histogram { counts, total }
    }

    pub fn counts(&self) -> &[u64; BINS] {
        &self.counts
    }

    /// Total number of pixels.
    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Percentage of pixels at each gray level; the 256 entries sum to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Signature(Box<[f64; BINS]>);

#[derive(Debug, Error, PartialEq)]
pub enum SignatureError {
    #[error("signature must have {BINS} entries, got {0}")]
    Arity(usize),
    #[error("signature entry {index} is {value}, expected a finite nonnegative percentage")]
    BadEntry { index: usize, value: f64 },
    #[error("signature sums to {0}, expected 100")]
    BadSum(f64),
}

/// Allowed drift of the entry sum for signatures read back from storage.
pub const STORED_SUM_TOLERANCE: f64 = 1e-6;

impl Signature {
    /// `P(x_i) = λ_i / total × 100` for every gray level `i`.
    pub fn from_histogram(h: &Histogram) -> Result<Self, ImageError> {
        if h.total == 0 {
            return Err(ImageError::EmptyHistogram);
        }
        let total = h.total as f64;
        let mut p = Box::new([0.0; BINS]);
        for (out, &count) in p.iter_mut().zip(h.counts.iter()) {
            *out = count as f64 / total * 100.0;
        }
        Ok(Signature(p))
    }

    /// Validates externally supplied percentages.
    pub fn from_percentages(values: &[f64]) -> Result<Self, SignatureError> {
        let arr: [f64; BINS] = values.try_into().map_err(|_| SignatureError::Arity(values.len()))?;
        if let Some((index, &value)) = arr.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(SignatureError::BadEntry { index, value });
        }
        let sum: f64 = arr.iter().sum();
        if (sum - 100.0).abs() > STORED_SUM_TOLERANCE {
            return Err(SignatureError::BadSum(sum));
        }
        Ok(Signature(Box::new(arr)))
    }

    pub fn values(&self) -> &[f64; BINS] {
        &self.0
    }

    pub fn get(&self, level: u8) -> f64 {
        self.0[usize::from(level)]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Largest per-level difference, in percentage points.
    pub fn chebyshev_gap(&self, other: &Signature) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Shared mass `Σ min(a_i, b_i)`, in `[0, 100]`.
    pub fn intersection(&self, other: &Signature) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.min(*b)).sum()
    }

    pub fn l1_distance(&self, other: &Signature) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl TryFrom<Vec<f64>> for Signature {
    type Error = SignatureError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Signature::from_percentages(&v)
    }
}

impl From<Signature> for Vec<f64> {
    fn from(s: Signature) -> Self {
        s.0.to_vec()
    }
}

pub fn signature_of_gray(img: &GrayImage) -> Signature {
    Signature::from_histogram(&Histogram::of(img)).expect("gray images are never empty")
}

/// Decode, convert to gray, bin and normalise.
pub fn signature_of_bytes(bytes: &[u8]) -> Result<Signature, ImageError> {
    let raster = decode_image(bytes)?;
    Ok(signature_of_gray(&to_gray8(&raster)))
}

/// Encodes a gray image losslessly as PNG.
pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.to_luma8()
        .write_to(&mut out, ImageFormat::Png)
        .expect("encoding into memory cannot fail");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    fn encode(img: &RgbaImage, fmt: ImageFormat) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        match fmt {
            ImageFormat::Jpeg | ImageFormat::Bmp => image::DynamicImage::ImageRgba8(img.clone())
                .into_rgb8()
                .write_to(&mut out, fmt)
                .unwrap(),
            _ => img.write_to(&mut out, fmt).unwrap(),
        }
        out.into_inner()
    }

    fn sig_with(bins: &[(usize, f64)]) -> Signature {
        let mut v = vec![0.0; BINS];
        for &(i, p) in bins {
            v[i] = p;
        }
        Signature::from_percentages(&v).unwrap()
    }

    #[test]
    fn decodes_single_white_png() {
        let png = encode(&RgbaImage::from_pixel(1, 1, Rgba([255; 4])), ImageFormat::Png);
        let raster = decode_image(&png).unwrap();
        assert_eq!(raster.dimensions(), (1, 1));
        assert_eq!(raster.get_pixel(0, 0).0, [255, 255, 255, 255]);
        let sig = signature_of_bytes(&png).unwrap();
        assert_eq!(sig.get(255), 100.0);
        assert_eq!(mime_type(&png), Some("image/png"));
        assert_eq!(mime_type(b"plain"), None);
    }

    #[test]
    fn truncated_jpeg_is_corrupt() {
        let img = RgbaImage::from_fn(32, 32, |x, y| Rgba([(x * 8) as u8, (y * 8) as u8, 40, 255]));
        let jpeg = encode(&img, ImageFormat::Jpeg);
        let cut = &jpeg[..jpeg.len() / 2];
        assert!(matches!(decode_image(cut), Err(ImageError::Corrupt(_))));
    }

    #[test]
    fn unknown_bytes_are_unsupported() {
        assert!(matches!(
            decode_image(b"definitely not an image"),
            Err(ImageError::UnsupportedFormat)
        ));
    }

    #[test]
    fn gif_uses_first_frame() {
        use image::codecs::gif::GifEncoder;
        use image::{Delay, Frame};
        let red = RgbaImage::from_pixel(4, 3, Rgba([255, 0, 0, 255]));
        let blue = RgbaImage::from_pixel(4, 3, Rgba([0, 0, 255, 255]));
        let mut bytes = Vec::new();
        {
            let mut enc = GifEncoder::new(&mut bytes);
            for f in [red, blue] {
                enc.encode_frame(Frame::from_parts(f, 0, 0, Delay::from_numer_denom_ms(100, 1)))
                    .unwrap();
            }
        }
        let raster = decode_image(&bytes).unwrap();
        assert_eq!(raster.dimensions(), (4, 3));
        assert!(raster.pixels().all(|p| p.0 == [255, 0, 0, 255]));
    }

    #[test]
    fn luma_fixed_points() {
        assert_eq!(luma([128, 128, 128, 255]), 128);
        assert_eq!(luma([255, 0, 0, 255]), 76);
        assert_eq!(luma([0, 0, 0, 0]), 255);
        assert_eq!(luma([0, 0, 0, 255]), 0);
        for v in 0..=255u8 {
            assert_eq!(luma([v, v, v, 255]), v);
        }
    }

    #[test]
    fn luma_rounds_half_up() {
        let mut ties = 0;
        for r in 0..=255u32 {
            for b in 0..=255u32 {
                let n = 299 * r + 114 * b;
                if n % 1000 == 500 {
                    ties += 1;
                    assert_eq!(u32::from(luma([r as u8, 0, b as u8, 255])), n / 1000 + 1);
                }
            }
        }
        assert!(ties > 0);
        for r in (0..=255u32).step_by(7) {
            for g in (0..=255u32).step_by(11) {
                for b in (0..=255u32).step_by(13) {
                    let n = 299 * r + 587 * g + 114 * b;
                    let expect = (n + 500) / 1000;
                    assert_eq!(u32::from(luma([r as u8, g as u8, b as u8, 255])), expect);
                }
            }
        }
    }

    #[test]
    fn half_transparent_black_composites_to_mid_gray() {
        // 255·(255−128)/255 = 127
        assert_eq!(luma([0, 0, 0, 128]), 127);
    }

    #[test]
    fn histogram_examples() {
        let uniform = GrayImage::new(16, 16, vec![7; 256]).unwrap();
        let h = Histogram::of(&uniform);
        assert_eq!(h.counts()[7], 256);
        assert_eq!(h.total(), 256);
        assert_eq!(h.counts().iter().sum::<u64>(), 256);

        let pair = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        let h = Histogram::of(&pair);
        assert_eq!((h.counts()[0], h.counts()[255], h.total()), (1, 1, 2));

        let ramp = GrayImage::from_fn(256, 1, |x, _| x as u8).unwrap();
        assert!(Histogram::of(&ramp).counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn signature_examples() {
        let uniform = signature_of_gray(&GrayImage::new(16, 16, vec![7; 256]).unwrap());
        assert_eq!(uniform.get(7), 100.0);
        assert_eq!(uniform.sum(), 100.0);

        let mut counts = [0u64; BINS];
        counts[10] = 4096;
        counts[20] = 65536 - 4096;
        let s = Signature::from_histogram(&Histogram::from_counts(counts)).unwrap();
        assert_eq!(s.get(10), 6.25);

        let ramp = signature_of_gray(&GrayImage::from_fn(256, 1, |x, _| x as u8).unwrap());
        assert!(ramp.values().iter().all(|&p| p == 0.390625));

        assert_eq!(
            Signature::from_histogram(&Histogram::from_counts([0; BINS])),
            Err(ImageError::EmptyHistogram)
        );
    }

    #[test]
    fn png_and_bmp_agree() {
        let img = RgbaImage::from_fn(9, 5, |x, y| Rgba([(x * 29) as u8, (y * 51) as u8, 77, 255]));
        let a = signature_of_bytes(&encode(&img, ImageFormat::Png)).unwrap();
        let b = signature_of_bytes(&encode(&img, ImageFormat::Bmp)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jpeg_and_its_upscaled_png_rendering_agree() {
        let img = RgbaImage::from_fn(24, 16, |x, y| Rgba([(x * 10) as u8, (y * 15) as u8, 99, 255]));
        let jpeg = encode(&img, ImageFormat::Jpeg);
        let decoded = decode_image(&jpeg).unwrap();
        let up = image::imageops::resize(&decoded, 48, 32, image::imageops::FilterType::Nearest);
        let png = encode(&up, ImageFormat::Png);
        assert_eq!(signature_of_bytes(&jpeg).unwrap(), signature_of_bytes(&png).unwrap());
    }

    #[test]
    fn distance_examples() {
        let a = sig_with(&[(0, 50.0), (255, 50.0)]);
        let b = sig_with(&[(0, 100.0)]);
        let low = sig_with(&[(0, 100.0)]);
        let high = sig_with(&[(255, 100.0)]);
        assert_eq!(a.chebyshev_gap(&a), 0.0);
        assert_eq!(low.chebyshev_gap(&high), 100.0);
        assert_eq!(a.intersection(&a), 100.0);
        assert_eq!(low.intersection(&high), 0.0);
        assert_eq!(a.intersection(&b), 50.0);
        assert_eq!(b.intersection(&a), 50.0);

        let c = sig_with(&[(3, 40.3), (4, 59.7)]);
        let d = sig_with(&[(3, 40.0), (4, 60.0)]);
        assert!((c.chebyshev_gap(&d) - 0.3).abs() < 1e-12);
        assert!((c.intersection(&d) - (100.0 - c.l1_distance(&d) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn signature_validation() {
        assert_eq!(
            Signature::from_percentages(&[1.0; 255]),
            Err(SignatureError::Arity(255))
        );
        let mut v = vec![0.0; BINS];
        v[0] = 99.0;
        assert!(matches!(
            Signature::from_percentages(&v),
            Err(SignatureError::BadSum(_))
        ));
        v[1] = -1.0;
        v[2] = 2.0;
        assert!(matches!(
            Signature::from_percentages(&v),
            Err(SignatureError::BadEntry { index: 1, .. })
        ));
    }

    #[test]
    fn resampling_helpers() {
        let img = GrayImage::new(2, 2, vec![0, 10, 20, 31]).unwrap();
        let up = img.upscale_nearest(3);
        assert_eq!((up.width(), up.height()), (6, 6));
        assert_eq!(up.get(5, 5), 31);
        assert_eq!(up.get(2, 3), 20);
        let down = img.downscale_area(2);
        // (0+10+20+31)/4 = 15.25
        assert_eq!(down.pixels(), &[15]);
        assert_eq!(up.downscale_area(3), img);
    }
}

//! Seeded augmentations on RGB byte images, plus binary PPM (P6) IO.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::common::RngState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    /// Row-major `H×W×3`.
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be >= 1"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::shape("ImageBuffer::new", height * width * 3, pixels.len()));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(height, width, rgb.repeat(height * width))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean, rounded half up.
    pub fn channel_mean(&self) -> [u8; 3] {
        let mut sums = [0u64; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        let n = (self.height * self.width) as u64;
        sums.map(|s| ((2 * s + n) / (2 * n)) as u8)
    }

    /// Pixels mapped linearly to `[0, 1]`, in buffer order.
    pub fn to_features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// Binary PPM, maxval 255.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // whitespace and comments between header tokens
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated PPM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::invalid("non-ascii PPM header"))?);
        }
        if fields[0] != "P6" {
            return Err(Error::invalid(format!("unsupported PPM magic {:?}", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad PPM header field {s:?}")));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(Error::invalid(format!("PPM maxval must be 255, got {maxval}")));
        }
        // exactly one whitespace byte after maxval
        let data = bytes.get(pos + 1..).unwrap_or_default();
        if data.len() != width * height * 3 {
            return Err(Error::shape("from_ppm: pixel data", width * height * 3, data.len()));
        }
        Self::new(height, width, data.to_vec())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

pub fn horizontal_flip(img: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(y, img.width - 1 - x, img.pixel(y, x));
        }
    }
    out
}

/// Zero-pads by `pad` on every side and crops the `H×W` window whose top-left
/// corner sits at `(top, left)` in padded coordinates.
pub fn pad_crop_at(img: &ImageBuffer, pad: usize, top: usize, left: usize) -> Result<ImageBuffer> {
    if top > 2 * pad || left > 2 * pad {
        return Err(Error::invalid(format!(
            "crop offset ({top},{left}) outside padded range 0..={}",
            2 * pad
        )));
    }
    let mut out = ImageBuffer::filled(img.height, img.width, [0, 0, 0])?;
    for y in 0..img.height {
        let sy = (y + top).checked_sub(pad);
        for x in 0..img.width {
            let sx = (x + left).checked_sub(pad);
            if let (Some(sy), Some(sx)) = (sy, sx) {
                if sy < img.height && sx < img.width {
                    out.set_pixel(y, x, img.pixel(sy, sx));
                }
            }
        }
    }
    Ok(out)
}

pub fn pad_random_crop(img: &ImageBuffer, pad: usize, rng: &mut RngState) -> ImageBuffer {
    let top = rng.next_int(2 * pad + 1).expect("n >= 1");
    let left = rng.next_int(2 * pad + 1).expect("n >= 1");
    pad_crop_at(img, pad, top, left).expect("offsets drawn in range")
}

/// Rectangle-selection parameters shared by random erasing and grayscale
/// patch replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchParams {
    pub probability: f64,
    /// Fraction of the image area, `[lo, hi]`.
    pub area_range: (f64, f64),
    /// Height / width ratio, `[lo, hi]`.
    pub aspect_range: (f64, f64),
}

impl Default for PatchParams {
    fn default() -> Self {
        Self {
            probability: 0.5,
            area_range: (0.02, 0.4),
            aspect_range: (0.3, 3.33),
        }
    }
}

impl PatchParams {
    pub fn validate(&self) -> Result<()> {
        let (alo, ahi) = self.area_range;
        let (rlo, rhi) = self.aspect_range;
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid(format!("probability {} not in [0,1]", self.probability)));
        }
        if !(alo > 0.0 && alo <= ahi && ahi < 1.0) {
            return Err(Error::invalid(format!("area range ({alo}, {ahi}) invalid")));
        }
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::invalid(format!("aspect range ({rlo}, {rhi}) invalid")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Coin flip with `probability`, then up to 10 attempts at a rectangle with
/// area fraction ~ U(area_range) and aspect ~ U(aspect_range) that fits
/// strictly inside the image.
pub fn select_patch(img: &ImageBuffer, params: &PatchParams, rng: &mut RngState) -> Result<Option<Rect>> {
    params.validate()?;
    if rng.next_uniform() >= params.probability {
        return Ok(None);
    }
    let area = (img.height * img.width) as f64;
    for _ in 0..10 {
        let target = rng.uniform_in(params.area_range.0, params.area_range.1) * area;
        let aspect = rng.uniform_in(params.aspect_range.0, params.aspect_range.1);
        let h = (target * aspect).sqrt().round() as usize;
        let w = (target / aspect).sqrt().round() as usize;
        if h >= 1 && w >= 1 && h < img.height && w < img.width {
            let top = rng.next_int(img.height - h + 1)?;
            let left = rng.next_int(img.width - w + 1)?;
            return Ok(Some(Rect {
                top,
                left,
                height: h,
                width: w,
            }));
        }
    }
    Ok(None)
}

fn map_patch(img: &ImageBuffer, rect: Rect, f: impl Fn([u8; 3]) -> [u8; 3]) -> ImageBuffer {
    let mut out = img.clone();
    for y in rect.top..rect.top + rect.height {
        for x in rect.left..rect.left + rect.width {
            out.set_pixel(y, x, f(img.pixel(y, x)));
        }
    }
    out
}

/// Fills a random rectangle with the image's per-channel mean.
pub fn random_erasing(img: &ImageBuffer, params: &PatchParams, rng: &mut RngState) -> Result<ImageBuffer> {
    Ok(match select_patch(img, params, rng)? {
        Some(rect) => {
            let mean = img.channel_mean();
            map_patch(img, rect, |_| mean)
        }
        None => img.clone(),
    })
}

/// BT.601 luma, rounded half up.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let y = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
    (y + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Replaces a random rectangle by its grayscale counterpart `(Y, Y, Y)`.
pub fn grayscale_patch_replacement(
    img: &ImageBuffer,
    params: &PatchParams,
    rng: &mut RngState,
) -> Result<ImageBuffer> {
    Ok(match select_patch(img, params, rng)? {
        Some(rect) => map_patch(img, rect, |px| [luma(px); 3]),
        None => img.clone(),
    })
}

/// Training-time augmentation for image-backed datasets. Each stage draws
/// from the same generator, in the order flip, pad/crop, grayscale patch,
/// random erasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub pad: usize,
    pub grayscale_patch: Option<PatchParams>,
    pub random_erasing: Option<PatchParams>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            pad: 2,
            grayscale_patch: Some(PatchParams::default()),
            random_erasing: Some(PatchParams::default()),
        }
    }
}

pub fn augment(img: &ImageBuffer, cfg: &AugmentConfig, rng: &mut RngState) -> Result<ImageBuffer> {
    let mut out = if rng.next_uniform() < cfg.flip_probability {
        horizontal_flip(img)
    } else {
        img.clone()
    };
    if cfg.pad > 0 {
        out = pad_random_crop(&out, cfg.pad, rng);
    }
    if let Some(p) = &cfg.grayscale_patch {
        out = grayscale_patch_replacement(&out, p, rng)?;
    }
    if let Some(p) = &cfg.random_erasing {
        out = random_erasing(&out, p, rng)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rng: &mut RngState, h: usize, w: usize) -> ImageBuffer {
        let px = (0..h * w * 3).map(|_| rng.next_int(256).unwrap() as u8).collect();
        ImageBuffer::new(h, w, px).unwrap()
    }

    fn always() -> PatchParams {
        PatchParams {
            probability: 1.0,
            ..PatchParams::default()
        }
    }

    #[test]
    fn flip_examples() {
        let mut rng = RngState::new(1);
        let narrow = random_image(&mut rng, 5, 1);
        assert_eq!(horizontal_flip(&narrow), narrow);

        let img = ImageBuffer::new(2, 2, (0..12).collect()).unwrap();
        let f = horizontal_flip(&img);
        assert_eq!(f.pixels(), &[3, 4, 5, 0, 1, 2, 9, 10, 11, 6, 7, 8]);
        assert_eq!(horizontal_flip(&f), img);
    }

    #[test]
    fn pad_crop_examples() {
        let mut rng = RngState::new(2);
        let img = random_image(&mut rng, 6, 5);
        assert_eq!(pad_random_crop(&img, 0, &mut rng), img);
        assert_eq!(pad_crop_at(&img, 2, 2, 2).unwrap(), img);
        let shifted = pad_crop_at(&img, 2, 0, 0).unwrap();
        assert_eq!(shifted.pixel(0, 0), [0, 0, 0]);
        assert_eq!(shifted.pixel(2, 2), img.pixel(0, 0));
        assert!(pad_crop_at(&img, 2, 5, 0).is_err());
        let a = pad_random_crop(&img, 3, &mut RngState::new(9));
        let b = pad_random_crop(&img, 3, &mut RngState::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn erasing_examples() {
        let mut rng = RngState::new(3);
        let img = random_image(&mut rng, 16, 12);
        let off = PatchParams {
            probability: 0.0,
            ..PatchParams::default()
        };
        assert_eq!(random_erasing(&img, &off, &mut rng).unwrap(), img);
        assert_eq!(grayscale_patch_replacement(&img, &off, &mut rng).unwrap(), img);

        let flat = ImageBuffer::filled(16, 12, [10, 200, 33]).unwrap();
        for seed in 0..20 {
            let out = random_erasing(&flat, &always(), &mut RngState::new(seed)).unwrap();
            assert_eq!(out, flat);
        }
    }

    #[test]
    fn invalid_patch_params() {
        let img = ImageBuffer::filled(4, 4, [0, 0, 0]).unwrap();
        let mut rng = RngState::new(0);
        for bad in [
            PatchParams { probability: 1.5, ..PatchParams::default() },
            PatchParams { area_range: (0.0, 0.4), ..PatchParams::default() },
            PatchParams { area_range: (0.5, 0.4), ..PatchParams::default() },
            PatchParams { area_range: (0.1, 1.0), ..PatchParams::default() },
            PatchParams { aspect_range: (0.0, 1.0), ..PatchParams::default() },
            PatchParams { aspect_range: (2.0, 1.0), ..PatchParams::default() },
        ] {
            assert!(random_erasing(&img, &bad, &mut rng).is_err());
            assert!(grayscale_patch_replacement(&img, &bad, &mut rng).is_err());
        }
    }

    #[test]
    fn luma_examples() {
        assert_eq!(luma([255, 0, 0]), 76);
        assert_eq!(luma([0, 255, 0]), 150);
        assert_eq!(luma([0, 0, 255]), 29);
        for g in 0..=255u8 {
            assert_eq!(luma([g, g, g]), g);
        }
    }

    #[test]
    fn grayscale_patch_only_touches_its_rectangle() {
        let mut rng = RngState::new(4);
        for seed in 0..50 {
            let img = random_image(&mut rng, 12, 9);
            let rect = select_patch(&img, &always(), &mut RngState::new(seed)).unwrap();
            let out = grayscale_patch_replacement(&img, &always(), &mut RngState::new(seed)).unwrap();
            let Some(rect) = rect else {
                assert_eq!(out, img);
                continue;
            };
            for y in 0..12 {
                for x in 0..9 {
                    if rect.contains(y, x) {
                        let g = luma(img.pixel(y, x));
                        assert_eq!(out.pixel(y, x), [g, g, g]);
                    } else {
                        assert_eq!(out.pixel(y, x), img.pixel(y, x));
                    }
                }
            }
            // a gray patch stays put under a second pass over the same rectangle
            let again = grayscale_patch_replacement(&out, &always(), &mut RngState::new(seed)).unwrap();
            assert_eq!(again, out);
        }
    }

    #[test]
    fn ppm_round_trip() {
        let mut rng = RngState::new(5);
        let img = random_image(&mut rng, 3, 7);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n7 3\n255\n"));
        assert_eq!(ImageBuffer::from_ppm(&bytes).unwrap(), img);
        let commented = [b"P6\n# made by hand\n7 3\n255\n".as_slice(), img.pixels()].concat();
        assert_eq!(ImageBuffer::from_ppm(&commented).unwrap(), img);
        assert!(ImageBuffer::from_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(ImageBuffer::from_ppm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn pipeline_preserves_dims_and_is_repeatable() {
        let mut rng = RngState::new(6);
        let img = random_image(&mut rng, 16, 8);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut RngState::new(77)).unwrap();
        let b = augment(&img, &cfg, &mut RngState::new(77)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.height(), a.width()), (16, 8));
    }
}

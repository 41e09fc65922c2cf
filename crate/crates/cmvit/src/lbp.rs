//! Local binary pattern texture descriptors.
//!
//! Conventions are frozen so results are bit-exact: 8 neighbors on the
//! radius-1 ring, comparison `neighbor >= center` sets the bit, the top-left
//! neighbor is bit 0 with subsequent bits clockwise, and borders replicate
//! the nearest pixel.

use crate::data::RgbImage;
use crate::error::{Error, Result};

/// LBP extraction settings. Only 8 neighbors are supported; the radius
/// scales the eight compass offsets without interpolation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LBPConfig {
    pub radius: usize,
    pub neighbors: usize,
}

impl Default for LBPConfig {
    fn default() -> Self {
        LBPConfig {
            radius: 1,
            neighbors: 8,
        }
    }
}

impl LBPConfig {
    fn validate(&self) -> Result<()> {
        if self.neighbors != 8 {
            return Err(Error::contract(format!(
                "LBP supports exactly 8 neighbors, got {}",
                self.neighbors
            )));
        }
        if self.radius == 0 {
            return Err(Error::contract("LBP radius must be positive"));
        }
        Ok(())
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "GrayImage: {} values for {width}x{height}",
                values.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    // replicate-pad access for signed coordinates
    fn at_clamped(&self, x: isize, y: isize) -> u8 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.at(xc, yc)
    }
}

/// Rec. 601 luminance: round(0.299 R + 0.587 G + 0.114 B).
pub fn to_gray(img: &RgbImage) -> GrayImage {
    let mut values = Vec::with_capacity(img.width * img.height);
    for px in img.pixels.chunks_exact(3) {
        let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        values.push(y.round().clamp(0.0, 255.0) as u8);
    }
    GrayImage {
        width: img.width,
        height: img.height,
        values,
    }
}

// (dx, dy) per bit, top-left first then clockwise
const RING: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// LBP code of the pixel at (x, y): bit i is set iff the i-th ring neighbor
/// is >= the center value.
pub fn lbp_code_at(img: &GrayImage, x: usize, y: usize, cfg: &LBPConfig) -> Result<u8> {
    cfg.validate()?;
    if x >= img.width || y >= img.height {
        return Err(Error::contract(format!(
            "lbp_code_at: ({x}, {y}) outside {}x{} image",
            img.width, img.height
        )));
    }
    let center = img.at(x, y);
    let r = cfg.radius as isize;
    let mut code = 0u8;
    for (bit, (dx, dy)) in RING.iter().enumerate() {
        let neighbor = img.at_clamped(x as isize + dx * r, y as isize + dy * r);
        if neighbor >= center {
            code |= 1 << bit;
        }
    }
    Ok(code)
}

/// LBP code plane: [`lbp_code_at`] applied at every pixel.
pub fn lbp_map(img: &GrayImage, cfg: &LBPConfig) -> Result<GrayImage> {
    cfg.validate()?;
    let mut codes = Vec::with_capacity(img.width * img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            codes.push(lbp_code_at(img, x, y, cfg)?);
        }
    }
    GrayImage::new(img.width, img.height, codes)
}

/// 256-bin code histogram; normalized bins sum to 1.
pub fn lbp_histogram(map: &GrayImage, normalize: bool) -> Vec<f64> {
    let mut bins = vec![0.0f64; 256];
    for &c in &map.values {
        bins[c as usize] += 1.0;
    }
    if normalize {
        let total = map.values.len() as f64;
        if total > 0.0 {
            for b in &mut bins {
                *b /= total;
            }
        }
    }
    bins
}

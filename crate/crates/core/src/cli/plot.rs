//! Slice overlays as binary PPM (P6): the slice in grayscale, each surface
//! set drawn as 1-pixel polylines in its own colour.

use crate::error::{Error, Result};
use crate::synthdata::{SurfaceSet, Volume};

/// Red, green, blue, then yellow, cyan, magenta.
pub const PALETTE: [[u8; 3]; 6] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
];

/// An `X x Z` RGB image, row-major with z as the row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

pub fn render_overlay(volume: &Volume, sets: &[&SurfaceSet], y: usize) -> Result<Image> {
    if y >= volume.y {
        return Err(Error::Config(format!("slice {y} out of range for Y={}", volume.y)));
    }
    if sets.len() > PALETTE.len() {
        return Err(Error::Config(format!("at most {} surface sets", PALETTE.len())));
    }
    for s in sets {
        if s.x != volume.x || s.y != volume.y {
            return Err(Error::Shape(format!(
                "surfaces {}x{} do not match volume {}x{}",
                s.x, s.y, volume.x, volume.y
            )));
        }
    }
    let slice = volume.slice(y);
    let (lo, hi) = slice
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut img = Image {
        width: volume.x,
        height: volume.z,
        rgb: vec![0; 3 * volume.x * volume.z],
    };
    for x in 0..volume.x {
        for z in 0..volume.z {
            let g = ((volume.get(x, y, z) - lo) * scale).round().clamp(0.0, 255.0) as u8;
            img.put(x, z, [g, g, g]);
        }
    }
    let last = volume.z as f64 - 1.0;
    let row = |v: f64| v.round().clamp(0.0, last) as usize;
    for (set, colour) in sets.iter().zip(PALETTE) {
        for i in 0..set.lambda {
            let r = set.row(i, y);
            for x in 0..volume.x {
                let z0 = row(r[x] as f64);
                let z1 = if x + 1 < volume.x { row(r[x + 1] as f64) } else { z0 };
                // fill toward the next column's row so the line stays connected
                let (a, b) = if z1 >= z0 { (z0, z1.max(z0 + 1) - 1) } else { (z1 + 1, z0) };
                for z in a..=b {
                    img.put(x, z, colour);
                }
            }
        }
    }
    Ok(img)
}

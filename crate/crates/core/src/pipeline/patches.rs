use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthdata::{SurfaceSet, Volume};

/// Intensity used for columns outside the slice (mid-gray after normalization).
pub const PAD_VALUE: f32 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    /// Patch width; a multiple of 4.
    pub n: usize,
    /// Distance between consecutive patch starts.
    pub stride: usize,
    /// Zero columns added on each side of the slice before tiling (at most N/4).
    pub pad: usize,
}

impl PatchConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            stride: n / 2,
            pad: 0,
        }
    }

    /// First predicted column within the patch.
    pub fn middle_start(&self) -> usize {
        self.n / 4
    }

    pub fn m1(&self) -> usize {
        self.n / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 4 != 0 {
            return Err(Error::Config(format!("patch width {} must be a positive multiple of 4", self.n)));
        }
        if self.stride == 0 {
            return Err(Error::Config("patch stride must be positive".into()));
        }
        if self.pad > self.n / 4 {
            return Err(Error::Config(format!(
                "padding {} exceeds N/4 = {}",
                self.pad,
                self.n / 4
            )));
        }
        Ok(())
    }

    /// Patch start columns in original slice coordinates (negative when padded).
    pub fn starts(&self, width: usize) -> Vec<isize> {
        let padded = width + 2 * self.pad;
        if self.n > padded {
            return Vec::new();
        }
        (0..=padded - self.n)
            .step_by(self.stride)
            .map(|s| s as isize - self.pad as isize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchOrigin {
    pub volume: usize,
    pub y: usize,
    /// First patch column in slice coordinates.
    pub start: isize,
}

/// A full-height strip of `N` columns, stored `[1, Z, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: Tensor<f32>,
    pub origin: PatchOrigin,
}

/// `lambda * N/2` positions, surface-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTarget {
    pub values: Vec<f32>,
}

/// A patch, its middle-column targets, and the surfaces across all `N`
/// columns (needed to re-derive targets after geometric augmentation).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub patch: Patch,
    pub target: PatchTarget,
    /// `lambda x N`, surface-major.
    pub context: Vec<f64>,
}

impl PatchSample {
    pub fn n(&self) -> usize {
        self.patch.data.shape()[2]
    }

    pub fn z(&self) -> usize {
        self.patch.data.shape()[1]
    }

    pub fn lambda(&self) -> usize {
        self.context.len() / self.n()
    }

    /// Rebuilds the middle-column targets from the full-width context.
    pub fn middle_from_context(context: &[f64], n: usize) -> Vec<f32> {
        let lambda = context.len() / n;
        let mut values = Vec::with_capacity(lambda * n / 2);
        for i in 0..lambda {
            for k in n / 4..3 * n / 4 {
                values.push(context[i * n + k] as f32);
            }
        }
        values
    }
}

/// Cuts every slice of `volume` into `N`-column patches and pairs each with
/// the surface positions at its middle `N/2` columns.
pub fn extract_patches(
    volume: &Volume,
    surfaces: &SurfaceSet,
    volume_id: usize,
    cfg: &PatchConfig,
) -> Result<Vec<PatchSample>> {
    cfg.validate()?;
    if surfaces.x != volume.x || surfaces.y != volume.y {
        return Err(Error::Shape(format!(
            "surfaces {}x{} do not match volume {}x{}",
            surfaces.x, surfaces.y, volume.x, volume.y
        )));
    }
    let starts = cfg.starts(volume.x);
    if starts.is_empty() {
        return Err(Error::Invalid(format!(
            "no patches: width {} (padded {}) is smaller than N = {}",
            volume.x,
            volume.x + 2 * cfg.pad,
            cfg.n
        )));
    }
    let (n, z, lambda) = (cfg.n, volume.z, surfaces.lambda);
    let mut out = Vec::with_capacity(starts.len() * volume.y);
    for y in 0..volume.y {
        for &start in &starts {
            let mut data = vec![PAD_VALUE; z * n];
            let mut context = vec![0.0; lambda * n];
            for j in 0..n {
                let col = start + j as isize;
                let inside = col >= 0 && (col as usize) < volume.x;
                if inside {
                    let column = volume.column(col as usize, y);
                    for (zz, v) in column.iter().enumerate() {
                        data[zz * n + j] = *v;
                    }
                }
                let src = col.clamp(0, volume.x as isize - 1) as usize;
                for i in 0..lambda {
                    context[i * n + j] = surfaces.get(i, src, y);
                }
            }
            let target = PatchTarget {
                values: PatchSample::middle_from_context(&context, n),
            };
            out.push(PatchSample {
                patch: Patch {
                    data: Tensor::from_vec(&[1, z, n], data)?,
                    origin: PatchOrigin { volume: volume_id, y, start },
                },
                target,
                context,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SynthConfig};

    #[test]
    fn start_enumeration() {
        let cfg = PatchConfig::new(32);
        assert_eq!(cfg.starts(64), vec![0, 16, 32]);
        assert!(cfg.starts(31).is_empty());
        let padded = PatchConfig { pad: 8, ..cfg };
        assert_eq!(padded.starts(32), vec![-8, 8]);
    }

    #[test]
    fn flat_surface_targets() {
        let vol = Volume::filled(64, 1, 40, 0.0);
        let mut surf = SurfaceSet::zeros(1, 64, 1);
        surf.positions.fill(20.0);
        let samples = extract_patches(&vol, &surf, 0, &PatchConfig::new(32)).unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            assert_eq!(s.target.values.len(), 16);
            assert!(s.target.values.iter().all(|&v| v == 20.0));
        }
    }

    #[test]
    fn targets_cover_middle_columns() {
        let cfg = SynthConfig {
            x: 64,
            y: 2,
            ..SynthConfig::default()
        };
        let (vol, surf) = generate(&cfg).unwrap();
        let samples = extract_patches(&vol, &surf, 3, &PatchConfig::new(32)).unwrap();
        let first = &samples[0];
        assert_eq!(first.patch.origin, PatchOrigin { volume: 3, y: 0, start: 0 });
        for i in 0..2 {
            for k in 0..16 {
                // columns 8..=23 for the patch starting at 0
                assert_eq!(first.target.values[i * 16 + k] as f64, surf.get(i, 8 + k, 0));
            }
        }
        let p = &first.patch.data;
        assert_eq!(p.shape(), &[1, 64, 32]);
        assert_eq!(p.data()[5 * 32 + 7], vol.get(7, 0, 5));
    }

    #[test]
    fn too_narrow_volume_is_reported() {
        let vol = Volume::filled(16, 1, 8, 0.0);
        let surf = SurfaceSet::zeros(1, 16, 1);
        assert!(extract_patches(&vol, &surf, 0, &PatchConfig::new(32)).is_err());
    }

    #[test]
    fn padding_fills_with_zero() {
        let vol = Volume::filled(32, 1, 8, 0.7);
        let surf = SurfaceSet::zeros(1, 32, 1);
        let cfg = PatchConfig {
            pad: 8,
            ..PatchConfig::new(32)
        };
        let samples = extract_patches(&vol, &surf, 0, &cfg).unwrap();
        assert_eq!(samples.len(), 2);
        let d = samples[0].patch.data.data();
        assert_eq!(d[0], PAD_VALUE);
        assert_eq!(d[8], 0.7);
    }
}

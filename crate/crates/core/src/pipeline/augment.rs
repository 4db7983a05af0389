//! Geometric augmentation of training patches: translation along z,
//! rotation about the patch centre, or both.

use crate::numerics::Tensor;
use crate::rng::RngState;

use super::patches::{PatchSample, PatchTarget};

/// Background intensity exposed by translation or rotation.
pub const FILL_VALUE: f32 = -1.0;
pub const MAX_ROTATION_DEG: f64 = 45.0;
/// Translation draws attempted before falling back to `t = 0`.
pub const TRANSLATION_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    None,
    Translate,
    Rotate,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    /// Shift along z in voxels.
    pub translation: i64,
    /// Rotation in degrees, `|θ| <= 45`.
    pub rotation_deg: f64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            mode: AugmentMode::None,
            translation: 0,
            rotation_deg: 0.0,
        }
    }

    pub fn translate(t: i64) -> Self {
        Self {
            mode: AugmentMode::Translate,
            translation: t,
            rotation_deg: 0.0,
        }
    }

    pub fn rotate(deg: f64) -> Self {
        Self {
            mode: AugmentMode::Rotate,
            translation: 0,
            rotation_deg: deg,
        }
    }

    pub fn both(t: i64, deg: f64) -> Self {
        Self {
            mode: AugmentMode::Both,
            translation: t,
            rotation_deg: deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// A middle-column target left `[0, Z - 1]`.
    OutOfRange,
    /// The rotated surface folds back over itself.
    MultiValued,
    /// A middle column is not spanned by the rotated surface.
    Uncovered,
    /// Rotation beyond ±45°.
    InvalidSpec,
}

/// Draws `t` uniformly from `[-range, range]` until every middle target
/// stays inside `[0, Z - 1]`; gives up with `t = 0`.
pub fn sample_translation(sample: &PatchSample, range: i64, rng: &mut RngState) -> i64 {
    let zmax = (sample.z() - 1) as f64;
    let (lo, hi) = sample
        .target
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    for _ in 0..TRANSLATION_ATTEMPTS {
        let t = rng.int_inclusive(-range, range);
        if lo + t as f64 >= 0.0 && hi + t as f64 <= zmax {
            return t;
        }
    }
    0
}

pub fn sample_rotation(max_deg: f64, rng: &mut RngState) -> f64 {
    let m = max_deg.min(MAX_ROTATION_DEG);
    rng.uniform(-m, m)
}

fn check_targets(values: &[f32], z: usize) -> Result<(), Rejection> {
    let hi = (z - 1) as f32;
    if values.iter().all(|v| (0.0..=hi).contains(v)) {
        Ok(())
    } else {
        Err(Rejection::OutOfRange)
    }
}

fn translated(sample: &PatchSample, t: i64) -> PatchSample {
    let (z, n) = (sample.z(), sample.n());
    let src = sample.patch.data.data();
    let mut data = vec![FILL_VALUE; z * n];
    for zz in 0..z {
        let from = zz as i64 - t;
        if (0..z as i64).contains(&from) {
            let from = from as usize;
            data[zz * n..(zz + 1) * n].copy_from_slice(&src[from * n..(from + 1) * n]);
        }
    }
    let context: Vec<f64> = sample.context.iter().map(|v| v + t as f64).collect();
    PatchSample {
        patch: super::patches::Patch {
            data: Tensor::from_vec(&[1, z, n], data).expect("same shape"),
            origin: sample.patch.origin,
        },
        target: PatchTarget {
            values: PatchSample::middle_from_context(&context, n),
        },
        context,
    }
}

fn bilinear(src: &[f32], z: usize, n: usize, x: f64, zz: f64) -> f32 {
    let x0 = x.floor();
    let z0 = zz.floor();
    let (fx, fz) = (x - x0, zz - z0);
    let at = |xi: f64, zi: f64| -> f64 {
        if xi < 0.0 || zi < 0.0 || xi >= n as f64 || zi >= z as f64 {
            FILL_VALUE as f64
        } else {
            src[zi as usize * n + xi as usize] as f64
        }
    };
    let v = (1.0 - fx) * (1.0 - fz) * at(x0, z0)
        + fx * (1.0 - fz) * at(x0 + 1.0, z0)
        + (1.0 - fx) * fz * at(x0, z0 + 1.0)
        + fx * fz * at(x0 + 1.0, z0 + 1.0);
    v as f32
}

/// Rotates a surface given at integer columns `0..n` and re-samples it at
/// every column by linear interpolation. Columns outside the rotated span
/// are extrapolated from the end segment; `middle` columns must be spanned.
fn rotate_polyline(
    values: &[f64],
    (cx, cz): (f64, f64),
    (c, s): (f64, f64),
    middle: std::ops::Range<usize>,
) -> Result<Vec<f64>, Rejection> {
    let n = values.len();
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let (dx, dz) = (j as f64 - cx, v - cz);
            (cx + c * dx - s * dz, cz + s * dx + c * dz)
        })
        .collect();
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Rejection::MultiValued);
    }
    let lerp = |a: (f64, f64), b: (f64, f64), x: f64| a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let x = k as f64;
        let covered = x >= pts[0].0 && x <= pts[n - 1].0;
        if !covered && middle.contains(&k) {
            return Err(Rejection::Uncovered);
        }
        while seg + 2 < n && pts[seg + 1].0 < x {
            seg += 1;
        }
        out.push(lerp(pts[seg], pts[seg + 1], x));
    }
    Ok(out)
}

fn rotated(sample: &PatchSample, deg: f64) -> Result<PatchSample, Rejection> {
    let (z, n) = (sample.z(), sample.n());
    let theta = deg.to_radians();
    let (s, c) = theta.sin_cos();
    let (cx, cz) = ((n as f64 - 1.0) / 2.0, (z as f64 - 1.0) / 2.0);

    let src = sample.patch.data.data();
    let mut data = Vec::with_capacity(z * n);
    for zz in 0..z {
        for x in 0..n {
            // inverse rotation of the output pixel centre
            let (dx, dz) = (x as f64 - cx, zz as f64 - cz);
            let sx = cx + c * dx + s * dz;
            let sz = cz - s * dx + c * dz;
            data.push(bilinear(src, z, n, sx, sz));
        }
    }

    let middle = n / 4..3 * n / 4;
    let lambda = sample.lambda();
    let mut context = Vec::with_capacity(lambda * n);
    for i in 0..lambda {
        context.extend(rotate_polyline(
            &sample.context[i * n..(i + 1) * n],
            (cx, cz),
            (c, s),
            middle.clone(),
        )?);
    }
    Ok(PatchSample {
        patch: super::patches::Patch {
            data: Tensor::from_vec(&[1, z, n], data).expect("same shape"),
            origin: sample.patch.origin,
        },
        target: PatchTarget {
            values: PatchSample::middle_from_context(&context, n),
        },
        context,
    })
}

/// Applies `spec` to a sample. Translation shifts intensity rows and targets
/// by `t`; rotation resamples the image bilinearly about the patch centre
/// and re-derives targets from the rotated surfaces. Samples whose targets
/// would leave the patch or become multi-valued are rejected.
pub fn augment(sample: &PatchSample, spec: &AugmentSpec) -> Result<PatchSample, Rejection> {
    if spec.rotation_deg.abs() > MAX_ROTATION_DEG || !spec.rotation_deg.is_finite() {
        return Err(Rejection::InvalidSpec);
    }
    let out = match spec.mode {
        AugmentMode::None => sample.clone(),
        AugmentMode::Translate => translated(sample, spec.translation),
        AugmentMode::Rotate => rotated(sample, spec.rotation_deg)?,
        AugmentMode::Both => rotated(&translated(sample, spec.translation), spec.rotation_deg)?,
    };
    check_targets(&out.target.values, out.z())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::patches::{extract_patches, PatchConfig};
    use crate::synthdata::{generate, SurfaceSet, SynthConfig, Volume};

    fn flat_sample(level: f64) -> PatchSample {
        let mut vol = Volume::filled(32, 1, 64, -1.0);
        for x in 0..32 {
            for z in 0..64 {
                let i = vol.index(x, 0, z);
                vol.voxels[i] = if (z as f64) < level { -1.0 } else { 1.0 };
            }
        }
        let mut surf = SurfaceSet::zeros(1, 32, 1);
        surf.positions.fill(level as f32);
        extract_patches(&vol, &surf, 0, &PatchConfig::new(32)).unwrap().remove(0)
    }

    #[test]
    fn identity_spec() {
        let s = flat_sample(20.0);
        assert_eq!(augment(&s, &AugmentSpec::identity()).unwrap(), s);
        assert_eq!(augment(&s, &AugmentSpec::translate(0)).unwrap(), s);
        let r = augment(&s, &AugmentSpec::rotate(0.0)).unwrap();
        assert_eq!(r.target, s.target);
        assert_eq!(r.patch.data, s.patch.data);
    }

    #[test]
    fn translation_shifts_rows_and_targets() {
        let s = flat_sample(20.0);
        let t = augment(&s, &AugmentSpec::translate(5)).unwrap();
        assert!(t.target.values.iter().all(|&v| v == 25.0));
        let (src, dst) = (s.patch.data.data(), t.patch.data.data());
        for z in 5..64 {
            assert_eq!(dst[z * 32 + 3], src[(z - 5) * 32 + 3]);
        }
        assert!(dst[..5 * 32].iter().all(|&v| v == FILL_VALUE));
    }

    #[test]
    fn translation_out_of_range_is_rejected() {
        let s = flat_sample(20.0);
        assert_eq!(augment(&s, &AugmentSpec::translate(50)), Err(Rejection::OutOfRange));
        assert_eq!(augment(&s, &AugmentSpec::translate(-21)), Err(Rejection::OutOfRange));
    }

    #[test]
    fn sampled_translation_keeps_targets_in_range() {
        let s = flat_sample(20.0);
        let mut rng = RngState::new(1);
        for _ in 0..200 {
            let t = sample_translation(&s, 250, &mut rng);
            assert!((-20..=43).contains(&t));
        }
    }

    #[test]
    fn rotation_of_flat_surface_tilts_targets() {
        let s = flat_sample(31.5);
        let r = augment(&s, &AugmentSpec::rotate(10.0)).unwrap();
        // a horizontal line through the centre rotates into a line of slope tan θ
        let slope = 10f64.to_radians().tan();
        for (k, v) in r.target.values.iter().enumerate() {
            let x = (8 + k) as f64 - 15.5;
            assert!((*v as f64 - (31.5 + slope * x)).abs() < 1e-4);
        }
    }

    #[test]
    fn steep_rotation_of_steep_surface_is_multi_valued() {
        let mut s = flat_sample(20.0);
        for j in 0..32 {
            s.context[j] = 10.0 + 1.5 * j as f64;
        }
        assert_eq!(augment(&s, &AugmentSpec::rotate(45.0)), Err(Rejection::MultiValued));
    }

    #[test]
    fn over_limit_rotation_is_invalid() {
        let s = flat_sample(20.0);
        assert_eq!(augment(&s, &AugmentSpec::rotate(50.0)), Err(Rejection::InvalidSpec));
    }

    #[test]
    fn rotation_round_trip_on_synthetic_patch() {
        let (vol, surf) = generate(&SynthConfig {
            noise_sigma: 0.0,
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let samples = extract_patches(&vol, &surf, 0, &PatchConfig::new(32)).unwrap();
        let s = &samples[2];
        let there = augment(s, &AugmentSpec::rotate(30.0)).unwrap();
        let back = augment(&there, &AugmentSpec::rotate(-30.0)).unwrap();
        let rms = (s
            .target
            .values
            .iter()
            .zip(&back.target.values)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / s.target.values.len() as f64)
            .sqrt();
        assert!(rms <= 0.75, "rms {rms}");
    }
}

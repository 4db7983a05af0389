use log::warn;

use crate::synthdata::Volume;

pub const MEDIAN_SIZE: usize = 5;

/// Cubic median filter of odd edge length `size` with replicated borders.
pub fn median_filter(volume: &Volume, size: usize) -> Volume {
    assert!(size % 2 == 1, "median window must have odd size");
    let r = (size / 2) as isize;
    let (nx, ny, nz) = (volume.x as isize, volume.y as isize, volume.z as isize);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut window = Vec::with_capacity(size * size * size);
    let mut out = Vec::with_capacity(volume.voxels.len());
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                window.clear();
                for dy in -r..=r {
                    let yy = clamp(y + dy, ny);
                    for dx in -r..=r {
                        let col = volume.column(clamp(x + dx, nx), yy);
                        for dz in -r..=r {
                            window.push(col[clamp(z + dz, nz)]);
                        }
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                out.push(*m);
            }
        }
    }
    Volume {
        x: volume.x,
        y: volume.y,
        z: volume.z,
        voxels: out,
    }
}

/// Affine min-max map onto `[-1, 1]`. A constant volume maps to all zeros;
/// the second value reports that case.
pub fn normalize(volume: &Volume) -> (Volume, bool) {
    let (lo, hi) = volume
        .voxels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let constant = !(hi > lo);
    let voxels = if constant {
        vec![0.0; volume.voxels.len()]
    } else {
        let (lo, span) = (lo as f64, (hi - lo) as f64);
        volume
            .voxels
            .iter()
            .map(|&v| (2.0 * (v as f64 - lo) / span - 1.0) as f32)
            .collect()
    };
    (
        Volume {
            voxels,
            ..volume.clone()
        },
        constant,
    )
}

/// 5x5x5 median denoising followed by normalization to `[-1, 1]`.
pub fn preprocess(volume: &Volume) -> Volume {
    let (out, constant) = normalize(&median_filter(volume, MEDIAN_SIZE));
    if constant {
        warn!("constant volume: normalized intensities are all 0");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn random_volume(x: usize, y: usize, z: usize, seed: u64) -> Volume {
        let mut rng = RngState::new(seed);
        let voxels = (0..x * y * z).map(|_| rng.uniform(-3.0, 3.0) as f32).collect();
        Volume::new(x, y, z, voxels).unwrap()
    }

    #[test]
    fn constant_volume_normalizes_to_zero() {
        let v = Volume::filled(6, 5, 7, 0.3);
        assert_eq!(median_filter(&v, 5), v);
        let p = preprocess(&v);
        assert!(p.voxels.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn impulse_is_removed() {
        let mut v = Volume::filled(7, 7, 7, 1.0);
        let i = v.index(3, 3, 3);
        v.voxels[i] = 100.0;
        let m = median_filter(&v, 5);
        assert!(m.voxels.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn center_matches_sort_oracle() {
        let v = random_volume(9, 9, 9, 4);
        let m = median_filter(&v, 5);
        let mut vals = Vec::new();
        for y in 2..7 {
            for x in 2..7 {
                for z in 2..7 {
                    vals.push(v.get(x, y, z));
                }
            }
        }
        vals.sort_by(f32::total_cmp);
        assert_eq!(m.get(4, 4, 4), vals[62]);
    }

    #[test]
    fn border_uses_replicated_neighbours() {
        let v = random_volume(4, 3, 5, 8);
        let m = median_filter(&v, 5);
        let mut vals = Vec::new();
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                for dz in -2i32..=2 {
                    vals.push(v.get(dx.clamp(0, 3) as usize, dy.clamp(0, 2) as usize, dz.clamp(0, 4) as usize));
                }
            }
        }
        vals.sort_by(f32::total_cmp);
        assert_eq!(m.get(0, 0, 0), vals[62]);
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let v = random_volume(5, 4, 6, 2);
        let (n, constant) = normalize(&v);
        assert!(!constant);
        let lo = n.voxels.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = n.voxels.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(lo, -1.0);
        assert!((hi - 1.0).abs() < 1e-6);
    }
}

//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Three separable passes of the lower-envelope-of-parabolas method over
//! squared distances, one per axis, each using that axis's spacing as the
//! sample step. Lines within a pass are independent and processed in
//! parallel; every line is computed by the same sequential code, so the
//! result does not depend on scheduling.

use rayon::prelude::*;

use super::{BinaryMask, DistanceField, GeometryError};

/// Squared distances (mm²) to the nearest foreground voxel centre.
pub fn edt_squared(m: &BinaryMask) -> Result<Vec<f64>, GeometryError> {
    if m.is_empty() {
        return Err(GeometryError::EmptyForeground);
    }
    let mut values: Vec<f64> = m.bits().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let [nx, ny, nz] = m.dims();
    let [sx, sy, sz] = m.spacing();

    values.par_chunks_mut(nx).for_each_init(Scratch::default, |scratch, line| {
        scratch.load(line.iter().copied());
        scratch.run(sx);
        line.copy_from_slice(&scratch.out);
    });

    let slab = nx * ny;
    values.par_chunks_mut(slab).for_each_init(Scratch::default, |scratch, plane| {
        for x in 0..nx {
            scratch.load((0..ny).map(|y| plane[x + nx * y]));
            scratch.run(sy);
            for (y, &v) in scratch.out.iter().enumerate() {
                plane[x + nx * y] = v;
            }
        }
    });

    if nz > 1 {
        let mut columns = vec![0.0; values.len()];
        columns.par_chunks_mut(nz).enumerate().for_each_init(Scratch::default, |scratch, (xy, column)| {
            scratch.load((0..nz).map(|z| values[xy + slab * z]));
            scratch.run(sz);
            column.copy_from_slice(&scratch.out);
        });
        values.par_chunks_mut(slab).enumerate().for_each(|(z, plane)| {
            for (xy, v) in plane.iter_mut().enumerate() {
                *v = columns[xy * nz + z];
            }
        });
    }
    Ok(values)
}

/// Distance field (mm) of `m`. Fails on an empty mask.
pub fn edt(m: &BinaryMask) -> Result<DistanceField, GeometryError> {
    let mut values = edt_squared(m)?;
    for v in &mut values {
        *v = v.sqrt();
    }
    Ok(DistanceField { dims: m.dims(), spacing: m.spacing(), values })
}

/// Per-thread buffers for the 1D transform.
#[derive(Default)]
struct Scratch {
    input: Vec<f64>,
    out: Vec<f64>,
    /// Sample indices of the parabolas on the lower envelope.
    sites: Vec<usize>,
    /// Left boundary of each envelope parabola, in mm.
    bounds: Vec<f64>,
}

impl Scratch {
    fn load(&mut self, values: impl Iterator<Item = f64>) {
        self.input.clear();
        self.input.extend(values);
    }

    /// Computes `out[q] = min_r ((q - r) * step)^2 + input[r]` over finite inputs.
    fn run(&mut self, step: f64) {
        let f = &self.input;
        let n = f.len();
        self.out.clear();
        self.sites.clear();
        self.bounds.clear();
        for q in 0..n {
            if f[q].is_infinite() {
                continue;
            }
            let pq = q as f64 * step;
            loop {
                let Some(&r) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let pr = r as f64 * step;
                let s = ((f[q] + pq * pq) - (f[r] + pr * pr)) / (2.0 * (pq - pr));
                if s <= *self.bounds.last().expect("bounds parallel to sites") {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            self.out.resize(n, f64::INFINITY);
            return;
        }
        let mut k = 0;
        for q in 0..n {
            let x = q as f64 * step;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let r = self.sites[k];
            let d = x - r as f64 * step;
            self.out.push(d * d + f[r]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(dims: [usize; 3], spacing: [f64; 3], at: [usize; 3]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims, spacing).unwrap();
        m.set(at[0], at[1], at[2], true);
        m
    }

    #[test]
    fn pythagorean_triple() {
        let f = edt(&single([6, 6, 2], [1.0; 3], [0, 0, 0])).unwrap();
        assert_eq!(f.get(3, 4, 0), 5.0);
        assert_eq!(f.get(0, 0, 0), 0.0);
    }

    #[test]
    fn anisotropic_step() {
        let f = edt(&single([3, 2, 2], [2.0, 1.0, 1.0], [0, 0, 0])).unwrap();
        assert_eq!(f.get(1, 0, 0), 2.0);
        assert_eq!(f.get(0, 1, 1), 2f64.sqrt());
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = BinaryMask::empty([4, 4, 4], [1.0; 3]).unwrap();
        assert_eq!(edt(&m), Err(GeometryError::EmptyForeground));
    }

    #[test]
    fn degenerate_axes() {
        let f = edt(&single([1, 1, 5], [1.0, 1.0, 0.5], [0, 0, 4])).unwrap();
        assert_eq!(f.values(), &[2.0, 1.5, 1.0, 0.5, 0.0]);
        let f = edt(&single([5, 1, 1], [0.5, 1.0, 1.0], [2, 0, 0])).unwrap();
        assert_eq!(f.values(), &[1.0, 0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let dims = [rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..6)];
            let spacing = [rng.gen_range(0.4..2.0), rng.gen_range(0.4..2.0), rng.gen_range(0.4..2.0)];
            let mut m = BinaryMask::empty(dims, spacing).unwrap();
            let density = rng.gen_range(0.01..0.5);
            let n = m.len();
            for i in 0..n {
                if rng.gen_bool(density) {
                    let [x, y, z] = m.coords(i);
                    m.set(x, y, z, true);
                }
            }
            if m.is_empty() {
                m.set(0, 0, 0, true);
            }
            let field = edt(&m).unwrap();
            let fg: Vec<_> = m.voxels().collect();
            for i in 0..n {
                let p = m.coords(i);
                let best = fg
                    .iter()
                    .map(|q| (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * spacing[k]).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!((field.values()[i] - best).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn translation_shifts_the_field() {
        let spacing = [0.7, 1.3, 0.9];
        let a = single([12, 12, 12], spacing, [4, 5, 6]);
        let b = single([12, 12, 12], spacing, [5, 7, 4]);
        let fa = edt(&a).unwrap();
        let fb = edt(&b).unwrap();
        for z in 0..10 {
            for y in 0..10 {
                for x in 0..11 {
                    let (xs, ys) = (x + 1, y + 2);
                    if z < 2 {
                        continue;
                    }
                    let zs = z - 2;
                    assert!((fa.get(x, y, z) - fb.get(xs, ys, zs)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = BinaryMask::empty([24, 20, 16], [0.5, 0.5, 1.0]).unwrap();
        for i in 0..m.len() {
            if rng.gen_bool(0.02) {
                let [x, y, z] = m.coords(i);
                m.set(x, y, z, true);
            }
        }
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| edt(&m).unwrap());
        let b = four.install(|| edt(&m).unwrap());
        let bits = |f: &DistanceField| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

//! Geometric primitives on binary voxel masks: volume, exact Euclidean
//! distance, face-contact area, centroids and tumour laterality.
//!
//! All quantities are physical (mm, mm², mm³). Distances are measured between
//! voxel centres, so a voxel of the reference mask is at distance 0 and a
//! face neighbour along axis `a` is at `spacing[a]`.

mod edt;

pub use edt::{edt, edt_squared};

use thiserror::Error;

use crate::affine::{self, Affine};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("mask has no foreground voxels")]
    EmptyForeground,
    #[error("grids differ in dims or spacing")]
    ShapeMismatch,
    #[error("masks overlap at voxel {0}")]
    OverlappingMasks(usize),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
}

/// Dense boolean voxel grid, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: [usize; 3],
    spacing: [f64; 3],
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, GeometryError> {
        let n = checked_len(dims)?;
        Self::from_bits(dims, spacing, vec![false; n])
    }

    pub fn from_bits(dims: [usize; 3], spacing: [f64; 3], bits: Vec<bool>) -> Result<Self, GeometryError> {
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(GeometryError::InvalidMask(format!("spacing {spacing:?}")));
        }
        if checked_len(dims)? != bits.len() {
            return Err(GeometryError::InvalidMask(format!("{} bits for dims {dims:?}", bits.len())));
        }
        Ok(Self { dims, spacing, bits })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Indices of set voxels as `[x, y, z]`.
    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| self.coords(i))
    }

    fn same_grid(&self, dims: [usize; 3], spacing: [f64; 3]) -> bool {
        self.dims == dims && self.spacing == spacing
    }
}

fn checked_len(dims: [usize; 3]) -> Result<usize, GeometryError> {
    if dims.contains(&0) {
        return Err(GeometryError::InvalidMask(format!("dims {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| GeometryError::InvalidMask(format!("dims {dims:?} overflow")))
}

/// Per-voxel distance (mm) from the voxel centre to the nearest foreground
/// voxel centre.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    dims: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
}

impl DistanceField {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Distance reported for a structure that has no voxels.
pub const ABSENT_DISTANCE: f64 = -1.0;

pub fn structure_volume(m: &BinaryMask) -> f64 {
    let [sx, sy, sz] = m.spacing;
    m.count() as f64 * sx * sy * sz
}

/// Shortest centre-to-centre distance (mm) from `structure` to the reference
/// mask whose field is `vs_field`, or [`ABSENT_DISTANCE`] for an empty structure.
pub fn dist_vs(structure: &BinaryMask, vs_field: &DistanceField) -> Result<f64, GeometryError> {
    if !structure.same_grid(vs_field.dims, vs_field.spacing) {
        return Err(GeometryError::ShapeMismatch);
    }
    Ok(structure
        .bits
        .iter()
        .zip(&vs_field.values)
        .filter(|(&b, _)| b)
        .map(|(_, &d)| d)
        .reduce(f64::min)
        .unwrap_or(ABSENT_DISTANCE))
}

/// Number of face-adjacent `(a, b)` voxel pairs per axis: entry `k` counts
/// pairs offset along axis `k`.
pub fn contact_faces(a: &BinaryMask, b: &BinaryMask) -> Result<[u64; 3], GeometryError> {
    if !a.same_grid(b.dims, b.spacing) {
        return Err(GeometryError::ShapeMismatch);
    }
    if let Some(i) = a.bits.iter().zip(&b.bits).position(|(&p, &q)| p && q) {
        return Err(GeometryError::OverlappingMasks(i));
    }
    let [nx, ny, nz] = a.dims;
    let strides = [1, nx, nx * ny];
    let mut faces = [0u64; 3];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = a.index(x, y, z);
                let p = [x, y, z];
                for axis in 0..3 {
                    if p[axis] + 1 >= a.dims[axis] {
                        continue;
                    }
                    let j = i + strides[axis];
                    if (a.bits[i] && b.bits[j]) || (b.bits[i] && a.bits[j]) {
                        faces[axis] += 1;
                    }
                }
            }
        }
    }
    Ok(faces)
}

/// Area (mm²) of the faces shared between `vs` and `other` under
/// 6-connectivity. A face normal to x has area `spacing_y * spacing_z`, and
/// cyclically for y and z.
pub fn surf_vs(vs: &BinaryMask, other: &BinaryMask) -> Result<f64, GeometryError> {
    let faces = contact_faces(vs, other)?;
    Ok(face_area(faces, vs.spacing))
}

pub(crate) fn face_area(faces: [u64; 3], spacing: [f64; 3]) -> f64 {
    let [sx, sy, sz] = spacing;
    faces[0] as f64 * (sy * sz) + faces[1] as f64 * (sx * sz) + faces[2] as f64 * (sx * sy)
}

/// Mean voxel index of the mask, mapped through `affine`.
pub fn centroid_world(m: &BinaryMask, affine: &Affine) -> Result<[f64; 3], GeometryError> {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for v in m.voxels() {
        for (s, c) in sum.iter_mut().zip(v) {
            *s += c as u64;
        }
        n += 1;
    }
    if n == 0 {
        return Err(GeometryError::EmptyForeground);
    }
    let mean = sum.map(|s| s as f64 / n as f64);
    Ok(affine::apply(affine, mean))
}

/// Side of the tumour relative to the midline, assuming the first world axis
/// points to the patient's right. The midline is the brainstem centroid, or
/// the grid centre when the brainstem mask is empty. Ties resolve to `Right`.
pub fn resolve_laterality(vs: &BinaryMask, brainstem: &BinaryMask, affine: &Affine) -> Result<Side, GeometryError> {
    let tumour_x = centroid_world(vs, affine)?[0];
    let midline_x = match centroid_world(brainstem, affine) {
        Ok(c) => c[0],
        Err(GeometryError::EmptyForeground) => {
            let centre = vs.dims.map(|d| (d as f64 - 1.0) / 2.0);
            affine::apply(affine, centre)[0]
        }
        Err(e) => return Err(e),
    };
    Ok(if tumour_x >= midline_x { Side::Right } else { Side::Left })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_with(dims: [usize; 3], spacing: [f64; 3], voxels: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims, spacing).unwrap();
        for &[x, y, z] in voxels {
            m.set(x, y, z, true);
        }
        m
    }

    #[test]
    fn volume_counts_voxels() {
        let one = mask_with([4, 4, 4], [0.5, 0.5, 1.0], &[[1, 1, 1]]);
        assert_eq!(structure_volume(&one), 0.25);
        let mut block = BinaryMask::empty([5, 5, 5], [1.0; 3]).unwrap();
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    block.set(x, y, z, true);
                }
            }
        }
        assert_eq!(structure_volume(&block), 27.0);
        assert_eq!(structure_volume(&BinaryMask::empty([3, 3, 3], [1.0; 3]).unwrap()), 0.0);
    }

    #[test]
    fn dist_vs_examples() {
        let vs = mask_with([6, 3, 3], [1.0; 3], &[[0, 0, 0]]);
        let s = mask_with([6, 3, 3], [1.0; 3], &[[3, 0, 0]]);
        assert_eq!(dist_vs(&s, &edt(&vs).unwrap()).unwrap(), 3.0);

        let vs = mask_with([3, 3, 3], [1.0, 0.8, 1.0], &[[1, 1, 1]]);
        let s = mask_with([3, 3, 3], [1.0, 0.8, 1.0], &[[1, 2, 1]]);
        assert_eq!(dist_vs(&s, &edt(&vs).unwrap()).unwrap(), 0.8);

        let empty = BinaryMask::empty([3, 3, 3], [1.0, 0.8, 1.0]).unwrap();
        assert_eq!(dist_vs(&empty, &edt(&vs).unwrap()).unwrap(), -1.0);

        let other_grid = BinaryMask::empty([3, 3, 3], [1.0; 3]).unwrap();
        assert_eq!(dist_vs(&other_grid, &edt(&vs).unwrap()), Err(GeometryError::ShapeMismatch));
    }

    #[test]
    fn surf_vs_examples() {
        let a = mask_with([2, 1, 1], [1.0; 3], &[[0, 0, 0]]);
        let b = mask_with([2, 1, 1], [1.0; 3], &[[1, 0, 0]]);
        assert_eq!(surf_vs(&a, &b).unwrap(), 1.0);

        let a = mask_with([1, 1, 2], [0.5, 0.5, 1.5], &[[0, 0, 0]]);
        let b = mask_with([1, 1, 2], [0.5, 0.5, 1.5], &[[0, 0, 1]]);
        assert_eq!(surf_vs(&a, &b).unwrap(), 0.25);

        assert_eq!(surf_vs(&a, &a), Err(GeometryError::OverlappingMasks(0)));
        let c = BinaryMask::empty([2, 1, 1], [1.0; 3]).unwrap();
        assert_eq!(surf_vs(&a, &c), Err(GeometryError::ShapeMismatch));
    }

    /// Exhaustive oracle: every ordered voxel pair, checked for unit index offset.
    fn brute_force_contact(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let [sx, sy, sz] = a.spacing();
        let av: Vec<_> = a.voxels().collect();
        let bv: Vec<_> = b.voxels().collect();
        let mut area = 0.0;
        for p in &av {
            for q in &bv {
                let d: Vec<usize> = (0..3).map(|k| p[k].abs_diff(q[k])).collect();
                area += match (d[0], d[1], d[2]) {
                    (1, 0, 0) => sy * sz,
                    (0, 1, 0) => sx * sz,
                    (0, 0, 1) => sx * sy,
                    _ => 0.0,
                };
            }
        }
        area
    }

    #[test]
    fn surf_vs_matches_exhaustive_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let spacing = [0.5, 0.25, 1.5];
            let mut a = BinaryMask::empty([12, 12, 12], spacing).unwrap();
            let mut b = a.clone();
            for i in 0..a.len() {
                match rng.gen_range(0..3) {
                    0 => a.bits[i] = true,
                    1 => b.bits[i] = true,
                    _ => {}
                }
            }
            let fast = surf_vs(&a, &b).unwrap();
            assert_eq!(fast, brute_force_contact(&a, &b));
            assert_eq!(fast, surf_vs(&b, &a).unwrap());
        }
    }

    #[test]
    fn centroid_examples() {
        let id = affine::diagonal([1.0; 3]);
        let m = mask_with([5, 5, 5], [1.0; 3], &[[2, 3, 4]]);
        assert_eq!(centroid_world(&m, &id).unwrap(), [2.0, 3.0, 4.0]);
        let m = mask_with([5, 5, 5], [1.0; 3], &[[0, 0, 0], [2, 0, 0]]);
        assert_eq!(centroid_world(&m, &id).unwrap(), [1.0, 0.0, 0.0]);
        let empty = BinaryMask::empty([5, 5, 5], [1.0; 3]).unwrap();
        assert_eq!(centroid_world(&empty, &id), Err(GeometryError::EmptyForeground));
    }

    #[test]
    fn centroid_matches_transform_then_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut m = BinaryMask::empty([9, 7, 5], [1.0; 3]).unwrap();
            for i in 0..m.len() {
                m.bits[i] = rng.gen_bool(0.3);
            }
            m.bits[0] = true;
            let mut a = [[0.0; 4]; 4];
            for row in a.iter_mut().take(3) {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-3.0..3.0);
                }
            }
            a[3][3] = 1.0;
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            for v in m.voxels() {
                let w = affine::apply(&a, v.map(|c| c as f64));
                for k in 0..3 {
                    sum[k] += w[k];
                }
                n += 1.0;
            }
            let got = centroid_world(&m, &a).unwrap();
            for k in 0..3 {
                assert!((got[k] - sum[k] / n).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn laterality_examples() {
        // 41 voxels wide, identity affine shifted so index 20 sits at world x = 0.
        let mut a = affine::diagonal([1.0; 3]);
        a[0][3] = -20.0;
        let dims = [41, 3, 3];
        let brainstem = mask_with(dims, [1.0; 3], &[[20, 1, 1]]);
        let right = mask_with(dims, [1.0; 3], &[[40, 1, 1]]);
        let left = mask_with(dims, [1.0; 3], &[[5, 1, 1]]);
        let centred = mask_with(dims, [1.0; 3], &[[20, 0, 1]]);
        assert_eq!(resolve_laterality(&right, &brainstem, &a).unwrap(), Side::Right);
        assert_eq!(resolve_laterality(&left, &brainstem, &a).unwrap(), Side::Left);
        assert_eq!(resolve_laterality(&centred, &brainstem, &a).unwrap(), Side::Right);

        let no_brainstem = BinaryMask::empty(dims, [1.0; 3]).unwrap();
        assert_eq!(resolve_laterality(&left, &no_brainstem, &a).unwrap(), Side::Left);
        assert_eq!(resolve_laterality(&centred, &no_brainstem, &a).unwrap(), Side::Right);
        assert_eq!(resolve_laterality(&no_brainstem, &brainstem, &a), Err(GeometryError::EmptyForeground));
    }

    fn arb_masks(dims: [usize; 3]) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        let n = dims.iter().product::<usize>();
        proptest::collection::vec(0u8..4, n).prop_map(|v| {
            let a = v.iter().map(|&c| c == 0).collect();
            let b = v.iter().map(|&c| c == 1).collect();
            (a, b)
        })
    }

    proptest! {
        #[test]
        fn isotropic_scaling((a, b) in arb_masks([6, 5, 4]), k in 0.25f64..4.0) {
            prop_assume!(a.iter().any(|&x| x) && b.iter().any(|&x| x));
            let base = [0.5, 0.75, 1.25];
            let scaled = base.map(|s| s * k);
            let (a0, b0) = (
                BinaryMask::from_bits([6, 5, 4], base, a.clone()).unwrap(),
                BinaryMask::from_bits([6, 5, 4], base, b.clone()).unwrap(),
            );
            let (a1, b1) = (
                BinaryMask::from_bits([6, 5, 4], scaled, a).unwrap(),
                BinaryMask::from_bits([6, 5, 4], scaled, b).unwrap(),
            );
            let rel = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1.0);
            prop_assert!(rel(structure_volume(&a1), structure_volume(&a0) * k * k * k));
            prop_assert!(rel(surf_vs(&a1, &b1).unwrap(), surf_vs(&a0, &b0).unwrap() * k * k));
            let d0 = dist_vs(&b0, &edt(&a0).unwrap()).unwrap();
            let d1 = dist_vs(&b1, &edt(&a1).unwrap()).unwrap();
            prop_assert!(rel(d1, d0 * k));
            let f0 = edt(&a0).unwrap();
            let f1 = edt(&a1).unwrap();
            for (x, y) in f1.values().iter().zip(f0.values()) {
                prop_assert!(rel(*x, y * k));
            }
        }

        #[test]
        fn contact_implies_one_step_distance((a, b) in arb_masks([5, 5, 5]), sx in 0.4f64..2.0, sy in 0.4f64..2.0, sz in 0.4f64..2.0) {
            let spacing = [sx, sy, sz];
            let vs = BinaryMask::from_bits([5, 5, 5], spacing, a).unwrap();
            let other = BinaryMask::from_bits([5, 5, 5], spacing, b).unwrap();
            prop_assume!(!vs.is_empty());
            let faces = contact_faces(&vs, &other).unwrap();
            prop_assume!(faces.iter().any(|&f| f > 0));
            let d = dist_vs(&other, &edt(&vs).unwrap()).unwrap();
            let step = (0..3).filter(|&k| faces[k] > 0).map(|k| spacing[k]).fold(f64::INFINITY, f64::min);
            prop_assert!(d > 0.0);
            prop_assert!(d <= step + 1e-12);
            let iso = [1.0; 3];
            let vs_iso = BinaryMask::from_bits([5, 5, 5], iso, vs.bits().to_vec()).unwrap();
            let other_iso = BinaryMask::from_bits([5, 5, 5], iso, other.bits().to_vec()).unwrap();
            prop_assert_eq!(dist_vs(&other_iso, &edt(&vs_iso).unwrap()).unwrap(), 1.0);
        }
    }
}

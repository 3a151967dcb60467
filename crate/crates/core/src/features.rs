//! The nine-column handcrafted feature vector and its extraction from a
//! labelled volume.
//!
//! | column | structure | quantity |
//! |---|---|---|
//! | `vs_volume` | VS | volume, mm³ |
//! | `dist_*` (7) | pons, brainstem, three vermal groups, ipsi/contralateral cerebellum | shortest distance to the VS, mm |
//! | `surf_background` | background | contact area with the VS, mm² |
//!
//! Distances are voxel centre to voxel centre; a structure absent from the
//! volume gets [`ABSENT_DISTANCE`] (−1). Left/right cerebellum are relabelled
//! ipsilateral/contralateral relative to the side the tumour is on.

use thiserror::Error;

use crate::atlas::{all_masks, AtlasConfig, StructureId};
use crate::geometry::{self, dist_vs, edt, resolve_laterality, structure_volume, surf_vs, GeometryError, Side};
use crate::nifti::LabelVolume;

pub use crate::geometry::ABSENT_DISTANCE;

pub const FEATURE_COUNT: usize = 9;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "vs_volume",
    "dist_pons",
    "dist_brainstem",
    "dist_vermal_1_5",
    "dist_vermal_6_7",
    "dist_vermal_8_10",
    "dist_ipsi_cerebellum",
    "dist_contra_cerebellum",
    "surf_background",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub vs_volume: f64,
    pub dist_pons: f64,
    pub dist_brainstem: f64,
    pub dist_vermal_1_5: f64,
    pub dist_vermal_6_7: f64,
    pub dist_vermal_8_10: f64,
    pub dist_ipsi_cerebellum: f64,
    pub dist_contra_cerebellum: f64,
    pub surf_background: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.vs_volume,
            self.dist_pons,
            self.dist_brainstem,
            self.dist_vermal_1_5,
            self.dist_vermal_6_7,
            self.dist_vermal_8_10,
            self.dist_ipsi_cerebellum,
            self.dist_contra_cerebellum,
            self.surf_background,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            vs_volume: a[0],
            dist_pons: a[1],
            dist_brainstem: a[2],
            dist_vermal_1_5: a[3],
            dist_vermal_6_7: a[4],
            dist_vermal_8_10: a[5],
            dist_ipsi_cerebellum: a[6],
            dist_contra_cerebellum: a[7],
            surf_background: a[8],
        }
    }

    /// Checks the value ranges an extracted vector always satisfies.
    pub fn is_well_formed(&self) -> bool {
        let a = self.to_array();
        a.iter().all(|v| v.is_finite())
            && self.vs_volume > 0.0
            && a[1..8].iter().all(|&d| d >= 0.0 || d == ABSENT_DISTANCE)
            && self.surf_background >= 0.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("the vestibular schwannoma mask is empty")]
    MissingVS,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Features plus the tumour side used for the ipsilateral/contralateral split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    pub features: FeatureVector,
    pub side: Side,
}

pub fn extract_case(vol: &LabelVolume, atlas: &AtlasConfig) -> Result<FeatureVector, FeatureError> {
    extract_case_with_side(vol, atlas).map(|e| e.features)
}

pub fn extract_case_with_side(vol: &LabelVolume, atlas: &AtlasConfig) -> Result<Extraction, FeatureError> {
    let masks = all_masks(vol, atlas);
    let mask = |s: StructureId| &masks[s.index()];
    let vs = mask(StructureId::VS);
    if vs.is_empty() {
        return Err(FeatureError::MissingVS);
    }
    let field = edt(vs)?;
    let dist = |s: StructureId| dist_vs(mask(s), &field);

    let side = resolve_laterality(vs, mask(StructureId::Brainstem), vol.affine())?;
    let (ipsi, contra) = match side {
        Side::Right => (StructureId::RightCerebellum, StructureId::LeftCerebellum),
        Side::Left => (StructureId::LeftCerebellum, StructureId::RightCerebellum),
    };

    let features = FeatureVector {
        vs_volume: structure_volume(vs),
        dist_pons: dist(StructureId::Pons)?,
        dist_brainstem: dist(StructureId::Brainstem)?,
        dist_vermal_1_5: dist(StructureId::VermalLobulesI_V)?,
        dist_vermal_6_7: dist(StructureId::VermalLobulesVI_VII)?,
        dist_vermal_8_10: dist(StructureId::VermalLobulesVIII_X)?,
        dist_ipsi_cerebellum: dist(ipsi)?,
        dist_contra_cerebellum: dist(contra)?,
        surf_background: surf_vs(vs, mask(StructureId::Background))?,
    };
    Ok(Extraction { features, side })
}

/// Face-contact area (mm²) between the VS and every structure, in
/// `StructureId::ALL` order. Diagnostic companion to `surf_background`.
pub fn vs_contact_areas(vol: &LabelVolume, atlas: &AtlasConfig) -> Result<[f64; 9], FeatureError> {
    let masks = all_masks(vol, atlas);
    let vs = &masks[StructureId::VS.index()];
    let mut out = [0.0; 9];
    for s in StructureId::ALL {
        if s != StructureId::VS {
            out[s.index()] = geometry::surf_vs(vs, &masks[s.index()])?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::load_atlas;

    const ATLAS: &str = "VS = 1\nPons = 2\nBrainstem = 3\nVermalLobulesI_V = 4\n\
        VermalLobulesVI_VII = 5\nVermalLobulesVIII_X = 6\nLeftCerebellum = 7, 8\nRightCerebellum = 9, 10\n";

    fn paint(vol: &mut LabelVolume, lo: [usize; 3], hi: [usize; 3], label: u16) {
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    let i = vol.index(x, y, z);
                    vol.labels_mut()[i] = label;
                }
            }
        }
    }

    #[test]
    fn single_voxel_tumour_and_pons() {
        let atlas = load_atlas(ATLAS).unwrap();
        let mut vol = LabelVolume::with_spacing([11, 11, 11], [1.0; 3], vec![0; 1331]).unwrap();
        paint(&mut vol, [5, 5, 5], [6, 6, 6], 1);
        paint(&mut vol, [5, 8, 5], [6, 9, 6], 2);
        let fv = extract_case(&vol, &atlas).unwrap();
        assert_eq!(
            fv,
            FeatureVector {
                vs_volume: 1.0,
                dist_pons: 3.0,
                dist_brainstem: -1.0,
                dist_vermal_1_5: -1.0,
                dist_vermal_6_7: -1.0,
                dist_vermal_8_10: -1.0,
                dist_ipsi_cerebellum: -1.0,
                dist_contra_cerebellum: -1.0,
                surf_background: 6.0,
            }
        );
        assert!(fv.is_well_formed());
    }

    /// Counts VS faces whose in-grid neighbour is background, by direct
    /// neighbour enumeration on the label array.
    fn exposed_faces(vol: &LabelVolume, atlas: &AtlasConfig) -> f64 {
        let [nx, ny, nz] = vol.dims();
        let [sx, sy, sz] = vol.spacing();
        let mut area = 0.0;
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    if atlas.structure_of(vol.get(x as usize, y as usize, z as usize)) != StructureId::VS {
                        continue;
                    }
                    for (d, a) in [([1, 0, 0], sy * sz), ([0, 1, 0], sx * sz), ([0, 0, 1], sx * sy)] {
                        for sign in [-1i64, 1] {
                            let q = [x + sign * d[0], y + sign * d[1], z + sign * d[2]];
                            if q.iter().zip([nx, ny, nz]).any(|(&c, n)| c < 0 || c >= n as i64) {
                                continue;
                            }
                            let l = vol.get(q[0] as usize, q[1] as usize, q[2] as usize);
                            if atlas.structure_of(l) == StructureId::Background {
                                area += a;
                            }
                        }
                    }
                }
            }
        }
        area
    }

    #[test]
    fn tumour_abutting_brainstem() {
        let atlas = load_atlas(ATLAS).unwrap();
        let mut vol = LabelVolume::with_spacing([12, 8, 8], [1.0; 3], vec![0; 768]).unwrap();
        // VS 2×2×3 block at x 6..8; brainstem 3×4×5 block at x 3..6 covering it.
        paint(&mut vol, [6, 2, 2], [8, 4, 5], 1);
        paint(&mut vol, [3, 1, 1], [6, 5, 6], 3);
        let fv = extract_case(&vol, &atlas).unwrap();
        assert_eq!(fv.dist_brainstem, 1.0);
        assert_eq!(fv.vs_volume, 12.0);
        // 32 faces on a free 2×2×3 block, 6 of them against the brainstem.
        assert_eq!(fv.surf_background, 26.0);
        assert_eq!(fv.surf_background, exposed_faces(&vol, &atlas));
        let contact = vs_contact_areas(&vol, &atlas).unwrap();
        assert_eq!(contact[StructureId::Brainstem.index()], 6.0);
    }

    fn lateral_case(atlas_swap: bool) -> LabelVolume {
        let mut vol = LabelVolume::with_spacing([21, 9, 7], [0.5, 1.0, 1.5], vec![0; 21 * 9 * 7]).unwrap();
        paint(&mut vol, [9, 3, 1], [12, 6, 6], 3);
        paint(&mut vol, [10, 0, 1], [11, 2, 5], 2);
        paint(&mut vol, [9, 7, 0], [12, 9, 2], 4);
        let (left, right) = if atlas_swap { (9, 7) } else { (7, 9) };
        paint(&mut vol, [0, 6, 1], [3, 9, 6], left);
        paint(&mut vol, [18, 6, 1], [21, 9, 6], right);
        paint(&mut vol, [14, 2, 2], [16, 4, 4], 1);
        vol
    }

    fn mirror_x(vol: &LabelVolume, swap_sides: bool) -> LabelVolume {
        let [nx, ny, nz] = vol.dims();
        let mut out = vol.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut l = vol.get(nx - 1 - x, y, z);
                    if swap_sides {
                        l = match l {
                            7 => 9,
                            8 => 10,
                            9 => 7,
                            10 => 8,
                            other => other,
                        };
                    }
                    let i = out.index(x, y, z);
                    out.labels_mut()[i] = l;
                }
            }
        }
        out
    }

    #[test]
    fn ipsilateral_follows_the_tumour() {
        let atlas = load_atlas(ATLAS).unwrap();
        let vol = lateral_case(false);
        let e = extract_case_with_side(&vol, &atlas).unwrap();
        assert_eq!(e.side, Side::Right);
        assert!(e.features.dist_ipsi_cerebellum < e.features.dist_contra_cerebellum);

        let mirrored = extract_case_with_side(&mirror_x(&vol, false), &atlas).unwrap();
        assert_eq!(mirrored.side, Side::Left);
        let mut expect = e.features;
        std::mem::swap(&mut expect.dist_ipsi_cerebellum, &mut expect.dist_contra_cerebellum);
        assert_eq!(mirrored.features, expect);

        let relabelled = extract_case(&mirror_x(&vol, true), &atlas).unwrap();
        assert_eq!(relabelled, e.features);
    }

    #[test]
    fn missing_tumour_is_reported() {
        let atlas = load_atlas(ATLAS).unwrap();
        let vol = LabelVolume::with_spacing([3, 3, 3], [1.0; 3], vec![3; 27]).unwrap();
        assert_eq!(extract_case(&vol, &atlas), Err(FeatureError::MissingVS));
    }

    #[test]
    fn extraction_is_bit_reproducible() {
        let atlas = load_atlas(ATLAS).unwrap();
        let vol = lateral_case(false);
        let a = extract_case(&vol, &atlas).unwrap().to_array().map(f64::to_bits);
        let b = extract_case(&vol, &atlas).unwrap().to_array().map(f64::to_bits);
        assert_eq!(a, b);
    }

    #[test]
    fn array_round_trip_keeps_column_order() {
        let a: [f64; 9] = std::array::from_fn(|i| i as f64);
        let fv = FeatureVector::from_array(a);
        assert_eq!(fv.dist_ipsi_cerebellum, 6.0);
        assert_eq!(fv.to_array(), a);
    }
}

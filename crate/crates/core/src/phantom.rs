//! Synthetic graded label volumes.
//!
//! A fixed schematic hindbrain (brainstem cylinder, pons and vermis
//! ellipsoids, cerebellar blocks) plus a spherical tumour whose size and
//! brainstem relation encode the grade:
//!
//! | grade | radius      | placement                                   |
//! |-------|-------------|---------------------------------------------|
//! | 1     | <= `R1`     | gap to brainstem >= `G_FAR`                 |
//! | 2     | > `R1`      | gap in [`G_NEAR`, `G_FAR`)                  |
//! | 3     | any         | touching the brainstem, no voxel overwritten|
//! | 4     | any         | sunk into the brainstem, overwriting it     |
//!
//! Positions are in mm relative to the grid centre; world coordinates are
//! voxel index times spacing, with +x to the patient's right and +y
//! anterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::affine;
use crate::atlas::{load_atlas, AtlasConfig};
use crate::dataset::CaseRecord;
use crate::features::{extract_case, FeatureVector};
use crate::geometry::Side;
use crate::grade::Grade;
use crate::nifti::LabelVolume;
use crate::seed::mix;

/// Largest grade-1 tumour radius (mm).
pub const R1: f64 = 4.0;
/// Smallest grade-1 brainstem gap (mm).
pub const G_FAR: f64 = 6.0;
/// Smallest grade-2 brainstem gap (mm).
pub const G_NEAR: f64 = 1.0;
/// Touching tumours whose background surface falls below this multiple of
/// the surface of an equal-volume sphere are grade 4.
pub const COMPACTNESS_SPLIT: f64 = 1.40;

pub const BRAINSTEM_RADIUS: f64 = 3.0;
pub const DEFAULT_DIMS: [usize; 3] = [64, 64, 40];
pub const DEFAULT_SPACING: [f64; 3] = [0.5, 0.5, 1.0];

/// Atlas config matching the labels painted here.
pub const PHANTOM_ATLAS_TEXT: &str = include_str!("../assets/phantom_atlas.txt");

const VS: u16 = 1;
const PONS: u16 = 2;
const BRAINSTEM: u16 = 3;

/// Tumour height relative to the grid centre (mm), before jitter.
const VS_Z: f64 = -1.5;
/// Step of the inward search that brings a grade-3 tumour into contact (mm).
const TOUCH_STEP: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
}

fn invalid(msg: impl Into<String>) -> PhantomError {
    PhantomError::InvalidSpec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub grade: Grade,
    pub side: Side,
    pub tumor_radius_mm: f64,
    /// Gap between tumour and brainstem surfaces; negative is the depth a
    /// grade-4 tumour sinks in. Ignored for grade 3, which is placed by
    /// moving the tumour inward until it touches.
    pub brainstem_gap_mm: f64,
    /// Drives the tumour's direction (42 to 48 degrees anterolateral) and a
    /// sub-voxel height offset.
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(grade: Grade, side: Side, tumor_radius_mm: f64, brainstem_gap_mm: f64, seed: u64) -> Self {
        Self { dims: DEFAULT_DIMS, spacing: DEFAULT_SPACING, grade, side, tumor_radius_mm, brainstem_gap_mm, seed }
    }
}

/// What the generated geometry should measure as.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomExpectation {
    pub grade: Grade,
    pub side: Side,
    /// Analytic sphere volume (mm³).
    pub vs_volume: f64,
    /// Surface-voxel count of the tumour times the voxel volume.
    pub vs_volume_tolerance: f64,
    /// Centre-to-centre tumour/brainstem distance: the smallest in-plane
    /// spacing for touching grades, the surface gap otherwise.
    pub dist_brainstem: f64,
    /// Zero for touching grades; otherwise two voxel diagonals.
    pub dist_brainstem_tolerance: f64,
    /// Tumour centre in world mm.
    pub vs_center: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: LabelVolume,
    pub expected: PhantomExpectation,
}

pub fn phantom_atlas() -> AtlasConfig {
    load_atlas(PHANTOM_ATLAS_TEXT).expect("bundled phantom atlas parses")
}

struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    center: [f64; 3],
    labels: Vec<u16>,
}

impl Grid {
    fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let center = std::array::from_fn(|k| (dims[k] - 1) as f64 * spacing[k] / 2.0);
        Self { dims, spacing, center, labels: vec![0; dims.iter().product()] }
    }

    fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Offset of a voxel centre from the grid centre (mm).
    fn offset(&self, v: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|k| v[k] as f64 * self.spacing[k] - self.center[k])
    }

    /// Index range along axis `k` of voxel centres with offsets in `[lo, hi]`.
    fn span(&self, k: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let first = ((lo + self.center[k]) / self.spacing[k]).ceil().max(0.0);
        let last = ((hi + self.center[k]) / self.spacing[k]).floor();
        if last < first {
            return 0..0;
        }
        first as usize..(last as usize + 1).min(self.dims[k])
    }

    /// Voxel indices with centres in the box `[lo, hi]` (offsets) satisfying `inside`.
    fn select(&self, lo: [f64; 3], hi: [f64; 3], inside: impl Fn([f64; 3]) -> bool) -> Vec<usize> {
        let mut out = Vec::new();
        for z in self.span(2, lo[2], hi[2]) {
            for y in self.span(1, lo[1], hi[1]) {
                for x in self.span(0, lo[0], hi[0]) {
                    if inside(self.offset([x, y, z])) {
                        out.push(self.index([x, y, z]));
                    }
                }
            }
        }
        out
    }

    fn paint(&mut self, label: u16, lo: [f64; 3], hi: [f64; 3], inside: impl Fn([f64; 3]) -> bool) {
        for i in self.select(lo, hi, inside) {
            self.labels[i] = label;
        }
    }

    /// Voxels whose centres lie within `r` of `c` (offsets from the grid centre).
    fn sphere(&self, c: [f64; 3], r: f64) -> Vec<usize> {
        let lo = c.map(|v| v - r);
        let hi = c.map(|v| v + r);
        self.select(lo, hi, |o| (0..3).map(|k| (o[k] - c[k]).powi(2)).sum::<f64>() <= r * r)
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let [nx, ny, nz] = self.dims;
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let slab = nx * ny;
        [
            (x > 0).then(|| i - 1),
            (x + 1 < nx).then(|| i + 1),
            (y > 0).then(|| i - nx),
            (y + 1 < ny).then(|| i + nx),
            (z > 0).then(|| i - slab),
            (z + 1 < nz).then(|| i + slab),
        ]
        .into_iter()
        .flatten()
    }

    /// True when some voxel of `set` (not itself labelled `label`) has a
    /// face neighbour labelled `label`.
    fn touches(&self, set: &[usize], label: u16) -> bool {
        set.iter().any(|&i| self.labels[i] != label && self.neighbours(i).any(|n| self.labels[n] == label))
    }
}

/// Schematic anatomy; every shape is disjoint from the others.
fn paint_template(g: &mut Grid) {
    let ellipsoid = |g: &mut Grid, label: u16, c: [f64; 3], s: [f64; 3]| {
        let lo = std::array::from_fn(|k| c[k] - s[k]);
        let hi = std::array::from_fn(|k| c[k] + s[k]);
        g.paint(label, lo, hi, |o| (0..3).map(|k| ((o[k] - c[k]) / s[k]).powi(2)).sum::<f64>() <= 1.0);
    };

    // Cerebellar hemispheres, posterolateral; superior and inferior labels.
    for (x0, x1, superior, inferior) in [(-14.0, -4.0, 7, 8), (4.0, 14.0, 9, 10)] {
        g.paint(superior, [x0, -14.5, -4.0], [x1, -5.0, 6.0], |_| true);
        g.paint(inferior, [x0, -14.5, -14.0], [x1, -5.0, -4.01], |_| true);
    }
    // Vermis, posterior midline, superior to inferior.
    for (label, z) in [(4, 3.0), (5, -4.0), (6, -11.0)] {
        ellipsoid(g, label, [0.0, -9.0, z], [2.5, 3.0, 3.0]);
    }
    ellipsoid(g, PONS, [0.0, 6.0, 11.5], [4.0, 2.5, 3.5]);
    let r = BRAINSTEM_RADIUS;
    g.paint(BRAINSTEM, [-r, -r, -15.0], [r, r, 15.0], |o| o[0] * o[0] + o[1] * o[1] <= r * r);
}

/// Half-extent (mm) the template needs around the grid centre.
const TEMPLATE_HALF_EXTENT: [f64; 3] = [14.0, 14.5, 15.0];

fn validate(spec: &PhantomSpec) -> Result<(), PhantomError> {
    if spec.dims.iter().any(|&n| n == 0 || n > i16::MAX as usize) {
        return Err(invalid(format!("dims {:?} out of range", spec.dims)));
    }
    if spec.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(invalid(format!("spacing {:?} must be positive", spec.spacing)));
    }
    for (k, extent) in TEMPLATE_HALF_EXTENT.iter().enumerate() {
        if (spec.dims[k] - 1) as f64 * spec.spacing[k] / 2.0 < *extent {
            return Err(invalid("grid too small for the template anatomy"));
        }
    }
    let (r, gap) = (spec.tumor_radius_mm, spec.brainstem_gap_mm);
    if !(r.is_finite() && r > 0.0) || !gap.is_finite() {
        return Err(invalid("radius must be positive and gap finite"));
    }
    let ok = match spec.grade.get() {
        1 => r <= R1 && gap >= G_FAR,
        2 => r > R1 && (G_NEAR..G_FAR).contains(&gap),
        3 => true,
        _ => gap < 0.0 && -gap < r && -gap <= BRAINSTEM_RADIUS,
    };
    if !ok {
        return Err(invalid(format!("radius {r} mm and gap {gap} mm do not make a grade {} tumour", spec.grade)));
    }
    Ok(())
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    validate(spec)?;
    let mut g = Grid::new(spec.dims, spec.spacing);
    paint_template(&mut g);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta = rng.gen_range(42.0f64..48.0).to_radians();
    let z = VS_Z + rng.gen_range(-0.5..0.5);
    let sign = match spec.side {
        Side::Right => 1.0,
        Side::Left => -1.0,
    };
    let r = spec.tumor_radius_mm;
    let at = |d: f64| [sign * d * theta.cos(), d * theta.sin(), z];

    let (center, voxels) = if spec.grade.get() == 3 {
        // Move inward from well clear of the brainstem until the part of the
        // sphere outside it has a face neighbour inside it.
        let mut d = BRAINSTEM_RADIUS + r + 2.0;
        loop {
            let c = at(d);
            let s: Vec<usize> = g.sphere(c, r).into_iter().filter(|&i| g.labels[i] != BRAINSTEM).collect();
            if g.touches(&s, BRAINSTEM) {
                break (c, s);
            }
            d -= TOUCH_STEP;
            if d < BRAINSTEM_RADIUS {
                return Err(invalid("tumour never touched the brainstem"));
            }
        }
    } else {
        let c = at(BRAINSTEM_RADIUS + spec.brainstem_gap_mm + r);
        (c, g.sphere(c, r))
    };

    for (k, c) in center.iter().enumerate() {
        let margin = 2.0 * spec.spacing[k];
        let lo = c - r + g.center[k];
        let hi = c + r + g.center[k];
        if lo < margin || hi > (spec.dims[k] - 1) as f64 * spec.spacing[k] - margin {
            return Err(invalid("tumour does not fit inside the grid with a 2-voxel margin"));
        }
    }
    if voxels.is_empty() {
        return Err(invalid("tumour covers no voxel centre"));
    }
    if let Some(&i) = voxels.iter().find(|&&i| !matches!(g.labels[i], 0 | BRAINSTEM)) {
        return Err(invalid(format!("tumour overlaps label {}", g.labels[i])));
    }
    for &i in &voxels {
        g.labels[i] = VS;
    }

    let touching = matches!(spec.grade.get(), 3 | 4);
    let mut surface = 0usize;
    let mut neighbour_labels = std::collections::BTreeSet::new();
    for &i in &voxels {
        let mut on_surface = false;
        for n in g.neighbours(i) {
            if g.labels[n] != VS {
                on_surface = true;
                neighbour_labels.insert(g.labels[n]);
            }
        }
        surface += usize::from(on_surface);
    }
    let allowed: &[u16] = if touching { &[0, BRAINSTEM] } else { &[0] };
    if let Some(l) = neighbour_labels.iter().find(|l| !allowed.contains(l)) {
        return Err(invalid(format!("tumour touches label {l}")));
    }
    if touching != neighbour_labels.contains(&BRAINSTEM) {
        return Err(invalid("tumour/brainstem contact does not match the grade"));
    }
    if !g.labels.contains(&BRAINSTEM) {
        return Err(invalid("tumour consumed the brainstem"));
    }

    let [sx, sy, sz] = spec.spacing;
    let voxel_volume = sx * sy * sz;
    let diagonal = (sx * sx + sy * sy + sz * sz).sqrt();
    let expected = PhantomExpectation {
        grade: spec.grade,
        side: spec.side,
        vs_volume: 4.0 / 3.0 * std::f64::consts::PI * r.powi(3),
        vs_volume_tolerance: surface as f64 * voxel_volume,
        dist_brainstem: if touching { sx.min(sy) } else { spec.brainstem_gap_mm },
        dist_brainstem_tolerance: if touching { 0.0 } else { 2.0 * diagonal },
        vs_center: std::array::from_fn(|k| center[k] + g.center[k]),
    };
    let volume = LabelVolume::new(spec.dims, spec.spacing, affine::diagonal(spec.spacing), g.labels)
        .map_err(|e| invalid(e.to_string()))?;
    Ok(Phantom { volume, expected })
}

/// Grade implied by the features of a phantom, using the generator's own
/// regime constants: contact is a brainstem distance under `G_NEAR`; apart
/// tumours split on the volume of an `R1` sphere; touching ones on how much
/// of their surface still faces background.
pub fn recover_grade(f: &FeatureVector) -> Grade {
    let grade = if f.dist_brainstem < 0.0 || f.dist_brainstem >= G_NEAR {
        if f.vs_volume <= 4.0 / 3.0 * std::f64::consts::PI * R1.powi(3) {
            1
        } else {
            2
        }
    } else if compactness(f) >= COMPACTNESS_SPLIT {
        3
    } else {
        4
    };
    Grade::new(grade).expect("grade in 1..=4")
}

/// Background-facing surface over the surface of a sphere of equal volume.
pub fn compactness(f: &FeatureVector) -> f64 {
    let sphere_area = (36.0 * std::f64::consts::PI * f.vs_volume * f.vs_volume).cbrt();
    f.surf_background / sphere_area
}

/// The spec `generate_dataset` uses for case `index`: grade from the
/// balanced layout, everything else drawn from `mix(seed, index)`.
pub fn case_spec(per_grade: usize, seed: u64, index: usize) -> PhantomSpec {
    let grade = Grade::from_index(index / per_grade).expect("index below 4 * per_grade");
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, index as u64));
    let side = if rng.gen_bool(0.5) { Side::Right } else { Side::Left };
    let (r, gap) = match grade.get() {
        1 => (rng.gen_range(2.5..=3.5), rng.gen_range(6.5..=7.5)),
        2 => (rng.gen_range(4.5..=5.0), rng.gen_range(1.5..=4.0)),
        3 => (rng.gen_range(4.5..=5.0), 0.0),
        _ => (rng.gen_range(4.5..=5.0), -rng.gen_range(1.5..=3.0)),
    };
    PhantomSpec::new(grade, side, r, gap, rng.gen())
}

/// `4 * per_grade` cases named `case_0000`, ..., grades in blocks
/// `1,1,..,2,2,..`, with extracted features and true grades.
pub fn generate_dataset(per_grade: usize, seed: u64) -> Result<Vec<(LabelVolume, CaseRecord)>, PhantomError> {
    if per_grade == 0 {
        return Err(invalid("per_grade must be at least 1"));
    }
    let atlas = phantom_atlas();
    (0..4 * per_grade)
        .into_par_iter()
        .map(|i| {
            let spec = case_spec(per_grade, seed, i);
            let p = generate_phantom(&spec)?;
            let features = extract_case(&p.volume, &atlas).map_err(|e| invalid(e.to_string()))?;
            let record = CaseRecord { case_id: format!("case_{i:04}"), features, grade: Some(spec.grade) };
            Ok((p.volume, record))
        })
        .collect()
}

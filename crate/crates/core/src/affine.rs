//! 4×4 voxel-to-world transforms.

/// Row-major homogeneous transform mapping voxel indices to world millimetres.
pub type Affine = [[f64; 4]; 4];

pub fn diagonal(spacing: [f64; 3]) -> Affine {
    let mut a = [[0.0; 4]; 4];
    for (axis, &s) in spacing.iter().enumerate() {
        a[axis][axis] = s;
    }
    a[3][3] = 1.0;
    a
}

pub fn apply(a: &Affine, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (row, o) in a.iter().zip(out.iter_mut()) {
        *o = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    out
}

/// Determinant of the linear (upper-left 3×3) part.
pub fn linear_det(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// True when every entry is finite, the bottom row is `[0, 0, 0, 1]` and the
/// linear part is non-singular.
pub fn is_invertible(a: &Affine) -> bool {
    a.iter().flatten().all(|v| v.is_finite()) && a[3] == [0.0, 0.0, 0.0, 1.0] && linear_det(a).abs() > f64::MIN_POSITIVE
}

//! Homography algebra.
//!
//! A [`Homography`] is a 3×3 invertible matrix in canonical form (bottom-right
//! element 1). [`CornerOffsets`] is the 4-point parameterization: the
//! displacements of the four canonical patch corners, converted to a matrix by
//! an 8×8 linear solve with partial pivoting. The solve is differentiable:
//! [`offsets_to_homography_backward`] propagates an upstream gradient on the
//! matrix entries back to the 8 offset values through the adjoint system.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};
#[allow(unused_imports)]
use num_traits::Float; // float methods under no_std

/// Magnitude floor under which the bottom-right element cannot normalize.
pub const NORMALIZATION_FLOOR: f64 = 1e-12;
/// Determinant magnitude floor for invertibility.
pub const DETERMINANT_FLOOR: f64 = 1e-12;
/// Homogeneous-coordinate floor for point transfer.
pub const HOMOGENEOUS_FLOOR: f64 = 1e-12;
/// Relative triangle-area floor for the general-position check.
const COLLINEAR_FLOOR: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate corner configuration: corners {indices:?} are collinear")]
    CollinearCorners { indices: [usize; 3] },
    #[error("singular linear system while solving for the homography")]
    SingularSystem,
    #[error("matrix is not invertible (|det| = {det:.3e})")]
    NotInvertible { det: f64 },
    #[error("bottom-right element magnitude {value:.3e} is below the normalization floor")]
    DegenerateScale { value: f64 },
    #[error("point transfer hit the plane at infinity (|w| = {w:.3e})")]
    PointAtInfinity { w: f64 },
    #[error("need at least 4 correspondences, got {got}")]
    TooFewPoints { got: usize },
    #[error("coincident points cannot be normalized")]
    CoincidentPoints,
    #[error("expected 9 row-major numbers, got {0}")]
    Parse(String),
}

/// Patch extents anchoring the four canonical corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    /// Canonical corners: top-left, top-right, bottom-left, bottom-right.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let w = (self.width - 1) as f64;
        let h = (self.height - 1) as f64;
        [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]]
    }
}

/// Four 2-d corner displacements in pixels of the patch frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerOffsets {
    pub offsets: [[f64; 2]; 4],
    pub frame: Frame,
}

impl CornerOffsets {
    pub fn new(offsets: [[f64; 2]; 4], frame: Frame) -> Self {
        Self { offsets, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Self { offsets: [[0.0; 2]; 4], frame }
    }

    /// Corners displaced by the offsets.
    pub fn displaced_corners(&self) -> [[f64; 2]; 4] {
        let mut out = self.frame.corners();
        for (c, o) in out.iter_mut().zip(&self.offsets) {
            c[0] += o[0];
            c[1] += o[1];
        }
        out
    }

    /// The offsets as a flat `[x0, y0, x1, y1, x2, y2, x3, y3]` buffer.
    pub fn flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, o) in self.offsets.iter().enumerate() {
            out[2 * i] = o[0];
            out[2 * i + 1] = o[1];
        }
        out
    }

    pub fn from_flat(values: &[f64; 8], frame: Frame) -> Self {
        let mut offsets = [[0.0; 2]; 4];
        for (i, o) in offsets.iter_mut().enumerate() {
            o[0] = values[2 * i];
            o[1] = values[2 * i + 1];
        }
        Self { offsets, frame }
    }
}

/// A 3×3 projective transform in canonical form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Canonicalizes (divides by the bottom-right element) and checks
    /// invertibility. Idempotent on already-canonical matrices.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let scale = m[(2, 2)];
        if scale.abs() < NORMALIZATION_FLOOR {
            return Err(GeometryError::DegenerateScale { value: scale });
        }
        let m = m / scale;
        let det = m.determinant();
        if det.abs() < DETERMINANT_FLOOR {
            return Err(GeometryError::NotInvertible { det });
        }
        Ok(Self { m })
    }

    pub fn from_entries_row_major(e: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::new(
            e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8],
        ))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Row-major entries; the last one is 1 by construction.
    pub fn entries_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let det = self.m.determinant();
        if det.abs() < DETERMINANT_FLOOR {
            return Err(GeometryError::NotInvertible { det });
        }
        let inv = self.m.try_inverse().ok_or(GeometryError::SingularSystem)?;
        Self::from_matrix(inv)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self, GeometryError> {
        Self::from_matrix(self.m * other.m)
    }

    /// Projective transfer of one point.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let v = self.m * nalgebra::Vector3::new(p[0], p[1], 1.0);
        if v[2].abs() < HOMOGENEOUS_FLOOR {
            return Err(GeometryError::PointAtInfinity { w: v[2] });
        }
        Ok([v[0] / v[2], v[1] / v[2]])
    }

    pub fn apply_points(&self, pts: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, GeometryError> {
        pts.iter().map(|&p| self.apply(p)).collect()
    }

    /// Frobenius norm of the difference to another homography.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (self.m - other.m).norm()
    }
}

/// Prints 9 decimal numbers, row-major, space-separated; parses back exactly.
impl fmt::Display for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.entries_row_major();
        for (i, v) in e.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for Homography {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let values: Result<Vec<f64>, _> = s.split_whitespace().map(f64::from_str).collect();
        let values = values.map_err(|e| GeometryError::Parse(format!("{e}")))?;
        let e: [f64; 9] = values
            .try_into()
            .map_err(|v: Vec<f64>| GeometryError::Parse(format!("{} numbers", v.len())))?;
        Self::from_entries_row_major(&e)
    }
}

/// General-position check: errs with the first collinear triple found.
fn check_general_position(pts: &[[f64; 2]; 4]) -> Result<(), GeometryError> {
    let mut scale: f64 = 1.0;
    for p in pts {
        scale = scale.max(p[0].abs()).max(p[1].abs());
    }
    let floor = COLLINEAR_FLOOR * scale * scale;
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    for t in TRIPLES {
        let [a, b, c] = [pts[t[0]], pts[t[1]], pts[t[2]]];
        let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if cross.abs() <= floor {
            return Err(GeometryError::CollinearCorners { indices: t });
        }
    }
    Ok(())
}

/// Builds the 8×8 system `A·h = b` for 4 exact correspondences, with
/// `h = (h00..h21)` and `h22 = 1`.
fn h4_system(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> (SMatrix<f64, 8, 8>, SVector<f64, 8>) {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [sx, sy] = src[i];
        let [dx, dy] = dst[i];
        a[(2 * i, 0)] = sx;
        a[(2 * i, 1)] = sy;
        a[(2 * i, 2)] = 1.0;
        a[(2 * i, 6)] = -dx * sx;
        a[(2 * i, 7)] = -dx * sy;
        b[2 * i] = dx;
        a[(2 * i + 1, 3)] = sx;
        a[(2 * i + 1, 4)] = sy;
        a[(2 * i + 1, 5)] = 1.0;
        a[(2 * i + 1, 6)] = -dy * sx;
        a[(2 * i + 1, 7)] = -dy * sy;
        b[2 * i + 1] = dy;
    }
    (a, b)
}

/// Exact homography through 4 correspondences, as the first 8 canonical
/// entries (`h22 = 1`). LU with partial pivoting.
pub fn solve_h4(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<[f64; 8], GeometryError> {
    check_general_position(src)?;
    check_general_position(dst)?;
    let (a, b) = h4_system(src, dst);
    let h = a.lu().solve(&b).ok_or(GeometryError::SingularSystem)?;
    Ok(core::array::from_fn(|i| h[i]))
}

/// Vector-Jacobian product of [`solve_h4`]: given the upstream gradient on
/// the 8 solved entries, returns gradients with respect to the source and
/// destination points via the adjoint system `Aᵀu = g`.
pub fn solve_h4_vjp(
    src: &[[f64; 2]; 4],
    dst: &[[f64; 2]; 4],
    h: &[f64; 8],
    grad_h: &[f64; 8],
) -> Result<([[f64; 2]; 4], [[f64; 2]; 4]), GeometryError> {
    let (a, _) = h4_system(src, dst);
    let g = SVector::<f64, 8>::from_row_slice(grad_h);
    let u = a
        .transpose()
        .lu()
        .solve(&g)
        .ok_or(GeometryError::SingularSystem)?;
    let mut g_src = [[0.0; 2]; 4];
    let mut g_dst = [[0.0; 2]; 4];
    for i in 0..4 {
        let [sx, sy] = src[i];
        let [dx, dy] = dst[i];
        let (ux, uy) = (u[2 * i], u[2 * i + 1]);
        // d/d(dst): rows scale by the homogeneous denominator at the source.
        let w = h[6] * sx + h[7] * sy + 1.0;
        g_dst[i] = [ux * w, uy * w];
        // d/d(src): both rows of the pair touch the source coordinates.
        g_src[i] = [
            -ux * (h[0] - dx * h[6]) - uy * (h[3] - dy * h[6]),
            -ux * (h[1] - dx * h[7]) - uy * (h[4] - dy * h[7]),
        ];
    }
    Ok((g_src, g_dst))
}

fn entries8_to_homography(h: &[f64; 8]) -> Result<Homography, GeometryError> {
    Homography::from_entries_row_major(&[h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])
}

/// Homography mapping each canonical corner to its displaced position.
pub fn offsets_to_homography(offsets: &CornerOffsets) -> Result<Homography, GeometryError> {
    let h = solve_h4(&offsets.frame.corners(), &offsets.displaced_corners())?;
    entries8_to_homography(&h)
}

/// Homography mapping displaced corners back to the canonical ones; the
/// exact inverse of [`offsets_to_homography`] without a matrix inversion.
pub fn offsets_to_inverse_homography(offsets: &CornerOffsets) -> Result<Homography, GeometryError> {
    let h = solve_h4(&offsets.displaced_corners(), &offsets.frame.corners())?;
    entries8_to_homography(&h)
}

/// Gradient of [`offsets_to_homography`]: maps an upstream gradient on the
/// 3×3 entries (row-major; the constant `h22` slot is ignored) to the
/// gradient on the 8 offset values, flat `[x0, y0, .., x3, y3]`.
pub fn offsets_to_homography_backward(
    offsets: &CornerOffsets,
    upstream: &[f64; 9],
) -> Result<[f64; 8], GeometryError> {
    let src = offsets.frame.corners();
    let dst = offsets.displaced_corners();
    let h = solve_h4(&src, &dst)?;
    let g8: [f64; 8] = core::array::from_fn(|i| upstream[i]);
    let (_, g_dst) = solve_h4_vjp(&src, &dst, &h, &g8)?;
    let mut out = [0.0; 8];
    for i in 0..4 {
        out[2 * i] = g_dst[i][0];
        out[2 * i + 1] = g_dst[i][1];
    }
    Ok(out)
}

/// Similarity transform taking the centroid to the origin and the mean
/// distance to √2 (Hartley normalization), plus the transformed points.
fn hartley_normalize(pts: &[[f64; 2]]) -> Result<(Matrix3<f64>, Vec<[f64; 2]>), GeometryError> {
    let n = pts.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in pts {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mut mean_dist = 0.0;
    for p in pts {
        mean_dist += ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
    }
    mean_dist /= n;
    if mean_dist < 1e-12 {
        return Err(GeometryError::CoincidentPoints);
    }
    let s = core::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let mapped = pts
        .iter()
        .map(|p| [s * (p[0] - cx), s * (p[1] - cy)])
        .collect();
    Ok((t, mapped))
}

/// Least-squares homography from ≥4 correspondences (exact for 4 noiseless
/// pairs). Hartley normalization is always applied internally; 4 pairs solve
/// the 8×8 system, more use the 2n×9 homogeneous system via SVD.
pub fn dlt_from_correspondences(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
) -> Result<Homography, GeometryError> {
    if src.len() < 4 || src.len() != dst.len() {
        return Err(GeometryError::TooFewPoints {
            got: src.len().min(dst.len()),
        });
    }
    let (t_src, ns) = hartley_normalize(src)?;
    let (t_dst, nd) = hartley_normalize(dst)?;

    let h_norm = if src.len() == 4 {
        let s4: [[f64; 2]; 4] = core::array::from_fn(|i| ns[i]);
        let d4: [[f64; 2]; 4] = core::array::from_fn(|i| nd[i]);
        let h = solve_h4(&s4, &d4)?;
        Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0)
    } else {
        let n = src.len();
        let mut a = DMatrix::<f64>::zeros(2 * n, 9);
        for i in 0..n {
            let [x, y] = ns[i];
            let [xp, yp] = nd[i];
            let r = 2 * i;
            a[(r, 0)] = x;
            a[(r, 1)] = y;
            a[(r, 2)] = 1.0;
            a[(r, 6)] = -xp * x;
            a[(r, 7)] = -xp * y;
            a[(r, 8)] = -xp;
            a[(r + 1, 3)] = x;
            a[(r + 1, 4)] = y;
            a[(r + 1, 5)] = 1.0;
            a[(r + 1, 6)] = -yp * x;
            a[(r + 1, 7)] = -yp * y;
            a[(r + 1, 8)] = -yp;
        }
        let svd = a.svd(false, true);
        let vt = svd.v_t.ok_or(GeometryError::SingularSystem)?;
        // Right singular vector of the smallest singular value.
        let mut min_idx = 0;
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < svd.singular_values[min_idx] {
                min_idx = i;
            }
        }
        let h = vt.row(min_idx);
        Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8])
    };

    let t_dst_inv = t_dst.try_inverse().ok_or(GeometryError::SingularSystem)?;
    Homography::from_matrix(t_dst_inv * h_norm * t_src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_offsets(rng: &mut ChaCha8Rng, frame: Frame, range: f64) -> CornerOffsets {
        let offsets =
            core::array::from_fn(|_| [rng.random_range(-range..range), rng.random_range(-range..range)]);
        CornerOffsets::new(offsets, frame)
    }

    #[test]
    fn zero_offsets_give_identity() {
        let h = offsets_to_homography(&CornerOffsets::zero(Frame::new(128, 128))).unwrap();
        assert!(h.frobenius_distance(&Homography::identity()) < 1e-12);
    }

    #[test]
    fn uniform_offsets_give_translation() {
        let offsets = CornerOffsets::new([[5.0, -3.0]; 4], Frame::new(128, 128));
        let h = offsets_to_homography(&offsets).unwrap();
        assert!(h.frobenius_distance(&Homography::translation(5.0, -3.0)) < 1e-12);
    }

    #[test]
    fn corner_reprojection_is_exact_over_1000_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let frame = Frame::new(128, 128);
        for _ in 0..1000 {
            let off = random_offsets(&mut rng, frame, 8.0);
            let h = offsets_to_homography(&off).unwrap();
            let displaced = off.displaced_corners();
            for (corner, expect) in frame.corners().iter().zip(&displaced) {
                let got = h.apply(*corner).unwrap();
                let err = ((got[0] - expect[0]).powi(2) + (got[1] - expect[1]).powi(2)).sqrt();
                assert!(err < 1e-9, "reprojection error {err}");
            }
        }
    }

    #[test]
    fn inverse_solve_matches_matrix_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let frame = Frame::new(64, 64);
        for _ in 0..100 {
            let off = random_offsets(&mut rng, frame, 5.0);
            let h = offsets_to_homography(&off).unwrap();
            let hi = offsets_to_inverse_homography(&off).unwrap();
            assert!(h.inverse().unwrap().frobenius_distance(&hi) < 1e-9);
        }
    }

    #[test]
    fn apply_translation_moves_origin() {
        let h = Homography::translation(5.0, -3.0);
        assert_eq!(h.apply([0.0, 0.0]).unwrap(), [5.0, -3.0]);
        let id = Homography::identity();
        assert_eq!(id.apply([2.5, 7.0]).unwrap(), [2.5, 7.0]);
    }

    #[test]
    fn apply_then_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let frame = Frame::new(128, 96);
        for _ in 0..100 {
            let off = random_offsets(&mut rng, frame, 8.0);
            let h = offsets_to_homography(&off).unwrap();
            let hi = h.inverse().unwrap();
            let p = [rng.random_range(0.0..127.0), rng.random_range(0.0..95.0)];
            let q = hi.apply(h.apply(p).unwrap()).unwrap();
            assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_translations_adds() {
        let a = Homography::translation(2.0, 3.0);
        let b = Homography::translation(-5.0, 1.5);
        let c = a.compose(&b).unwrap();
        assert!(c.frobenius_distance(&Homography::translation(-3.0, 4.5)) < 1e-12);
        assert!(Homography::identity()
            .inverse()
            .unwrap()
            .frobenius_distance(&Homography::identity())
            < 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let off = random_offsets(&mut rng, Frame::new(128, 128), 8.0);
            let h = offsets_to_homography(&off).unwrap();
            let prod = h.compose(&h.inverse().unwrap()).unwrap();
            assert!(prod.frobenius_distance(&Homography::identity()) < 1e-9);
        }
    }

    #[test]
    fn canonical_normalization_is_idempotent() {
        let m = Matrix3::new(2.0, 0.0, 4.0, 0.0, 2.0, -6.0, 0.0, 0.0, 2.0);
        let h1 = Homography::from_matrix(m).unwrap();
        let h2 = Homography::from_matrix(*h1.matrix()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.entries_row_major()[8], 1.0);
    }

    #[test]
    fn degenerate_scale_is_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1e-14);
        assert!(matches!(
            Homography::from_matrix(m),
            Err(GeometryError::DegenerateScale { .. })
        ));
    }

    #[test]
    fn collinear_corners_are_named() {
        // Push corner 3 onto the segment between corners 1 and 2.
        let frame = Frame::new(4, 4);
        let c = frame.corners();
        let mid = [(c[1][0] + c[2][0]) / 2.0, (c[1][1] + c[2][1]) / 2.0];
        let off = CornerOffsets::new(
            [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [mid[0] - c[3][0], mid[1] - c[3][1]]],
            frame,
        );
        match offsets_to_homography(&off) {
            Err(GeometryError::CollinearCorners { indices }) => {
                assert!(indices.contains(&3), "triple {indices:?} should involve corner 3");
            }
            other => panic!("expected collinear error, got {other:?}"),
        }
    }

    #[test]
    fn dlt_recovers_translation_from_unit_square() {
        let src = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let dst: Vec<[f64; 2]> = src.iter().map(|p| [p[0] + 3.0, p[1] - 2.0]).collect();
        let h = dlt_from_correspondences(&src, &dst).unwrap();
        assert!(h.frobenius_distance(&Homography::translation(3.0, -2.0)) < 1e-12);
    }

    #[test]
    fn dlt_exactly_recovers_random_h_from_4_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let frame = Frame::new(100, 100);
        for _ in 0..200 {
            let off = random_offsets(&mut rng, frame, 8.0);
            let h = offsets_to_homography(&off).unwrap();
            let src: Vec<[f64; 2]> = (0..4)
                .map(|_| [rng.random_range(5.0..95.0), rng.random_range(5.0..95.0)])
                .collect();
            let Ok(dst) = h.apply_points(&src) else { continue };
            let Ok(rec) = dlt_from_correspondences(&src, &dst) else { continue };
            let rel = rec.frobenius_distance(&h) / h.matrix().norm();
            assert!(rel < 1e-8, "relative error {rel}");
        }
    }

    #[test]
    fn dlt_least_squares_handles_noise() {
        // 20 pairs with σ = 0.5 px noise: mean corner re-projection below 3σ,
        // averaged over 100 trials.
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let frame = Frame::new(100, 100);
        let sigma = 0.5;
        let mut total = 0.0;
        for _ in 0..100 {
            let off = random_offsets(&mut rng, frame, 6.0);
            let h = offsets_to_homography(&off).unwrap();
            let mut src = Vec::new();
            let mut dst = Vec::new();
            for _ in 0..20 {
                let p = [rng.random_range(0.0..99.0), rng.random_range(0.0..99.0)];
                let q = h.apply(p).unwrap();
                // Box-Muller keeps the noise Gaussian without extra deps.
                let (u1, u2): (f64, f64) = (rng.random_range(1e-9..1.0), rng.random_range(0.0..1.0));
                let r = (-2.0 * u1.ln()).sqrt() * sigma;
                let (n1, n2) = (
                    r * (2.0 * core::f64::consts::PI * u2).cos(),
                    r * (2.0 * core::f64::consts::PI * u2).sin(),
                );
                src.push(p);
                dst.push([q[0] + n1, q[1] + n2]);
            }
            let rec = dlt_from_correspondences(&src, &dst).unwrap();
            let mut err = 0.0;
            for (c, d) in frame.corners().iter().zip(h.apply_points(&frame.corners()).unwrap()) {
                let r = rec.apply(*c).unwrap();
                err += ((r[0] - d[0]).powi(2) + (r[1] - d[1]).powi(2)).sqrt();
            }
            total += err / 4.0;
        }
        let mean = total / 100.0;
        assert!(mean < 3.0 * sigma, "mean corner error over trials {mean}");
    }

    #[test]
    fn dlt_is_invariant_to_external_similarity_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let frame = Frame::new(100, 100);
        for _ in 0..50 {
            let off = random_offsets(&mut rng, frame, 6.0);
            let h = offsets_to_homography(&off).unwrap();
            let src: Vec<[f64; 2]> = (0..8)
                .map(|_| [rng.random_range(0.0..99.0), rng.random_range(0.0..99.0)])
                .collect();
            let dst = h.apply_points(&src).unwrap();
            let rec = dlt_from_correspondences(&src, &dst).unwrap();

            // Externally rescale the coordinates, solve, and undo the scale.
            let s = 37.5;
            let src_s: Vec<[f64; 2]> = src.iter().map(|p| [p[0] * s, p[1] * s]).collect();
            let dst_s: Vec<[f64; 2]> = dst.iter().map(|p| [p[0] * s, p[1] * s]).collect();
            let rec_s = dlt_from_correspondences(&src_s, &dst_s).unwrap();
            let scale = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
            let undone = Homography::from_matrix(
                scale.try_inverse().unwrap() * rec_s.matrix() * scale,
            )
            .unwrap();
            assert!(rec.frobenius_distance(&undone) < 1e-8);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            dlt_from_correspondences(&pts, &pts),
            Err(GeometryError::TooFewPoints { got: 3 })
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradient() {
        let off = CornerOffsets::new([[1.0, 2.0], [0.5, -1.0], [-2.0, 0.0], [1.5, 1.5]], Frame::new(64, 64));
        let g = offsets_to_homography_backward(&off, &[0.0; 9]).unwrap();
        assert_eq!(g, [0.0; 8]);
    }

    #[test]
    fn backward_translation_last_column_pins_to_corner_zero() {
        // Pure translation, upstream gradient only on the last column
        // (entries h02 and h12). The solve interpolates the corners exactly,
        // and H(0,0) = (h02, h12), so the last column is pinned to corner 0's
        // displacement: the gradient lands entirely on corner 0's offsets.
        // Frozen from the finite-difference oracle below.
        let off = CornerOffsets::new([[3.0, -2.0]; 4], Frame::new(64, 64));
        let mut upstream = [0.0; 9];
        upstream[2] = 1.0; // d/d h02
        upstream[5] = 1.0; // d/d h12
        let g = offsets_to_homography_backward(&off, &upstream).unwrap();
        let num = central_difference_offsets(&off, &upstream);
        for i in 0..8 {
            assert!((g[i] - num[i]).abs() < 1e-6, "component {i}: {} vs {}", g[i], num[i]);
        }
        let expected = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..8 {
            assert!((g[i] - expected[i]).abs() < 1e-9, "component {i}: {}", g[i]);
        }
    }

    fn central_difference_offsets(off: &CornerOffsets, upstream: &[f64; 9]) -> [f64; 8] {
        let step = 1e-6;
        let mut out = [0.0; 8];
        let eval = |flat: &[f64; 8]| -> f64 {
            let o = CornerOffsets::from_flat(flat, off.frame);
            let h = offsets_to_homography(&o).unwrap();
            h.entries_row_major()
                .iter()
                .zip(upstream)
                .map(|(e, u)| e * u)
                .sum()
        };
        let base = off.flat();
        for i in 0..8 {
            let mut plus = base;
            plus[i] += step;
            let mut minus = base;
            minus[i] -= step;
            out[i] = (eval(&plus) - eval(&minus)) / (2.0 * step);
        }
        out
    }

    #[test]
    fn backward_matches_finite_differences_on_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..100 {
            let off = random_offsets(&mut rng, Frame::new(64, 64), 6.0);
            let upstream: [f64; 9] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let g = offsets_to_homography_backward(&off, &upstream).unwrap();
            let num = central_difference_offsets(&off, &upstream);
            for i in 0..8 {
                let denom = g[i].abs().max(num[i].abs()).max(1.0);
                assert!(
                    (g[i] - num[i]).abs() / denom < 1e-4,
                    "component {i}: {} vs {}",
                    g[i],
                    num[i]
                );
            }
        }
    }

    #[test]
    fn display_round_trips_through_from_str() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let off = random_offsets(&mut rng, Frame::new(128, 128), 8.0);
        let h = offsets_to_homography(&off).unwrap();
        let s = alloc::format!("{h}");
        let parsed: Homography = s.parse().unwrap();
        assert_eq!(h.entries_row_major(), parsed.entries_row_major());
    }

    #[test]
    fn point_at_infinity_is_an_error() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        assert!(matches!(
            h.apply([1.0, 0.0]),
            Err(GeometryError::PointAtInfinity { .. })
        ));
    }
}

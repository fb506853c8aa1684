//! Projective transforms of the plane, used for perspective augmentation.

use super::skeleton::SkeletonSequence;
use super::{GeomError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Nonsingular 3x3 matrix acting projectively on 2-D points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

const MIN_DET: f64 = 1e-12;
const MIN_W: f64 = 1e-8;

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let det = det3(&m);
        if det.abs() < MIN_DET {
            return Err(GeomError::SingularHomography { det });
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]] }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Applies `(x, y, 1) -> H · , divided by the third coordinate`.
    pub fn apply_point(&self, p: (f64, f64)) -> Result<(f64, f64)> {
        let x = self.m[0][0] * p.0 + self.m[0][1] * p.1 + self.m[0][2];
        let y = self.m[1][0] * p.0 + self.m[1][1] * p.1 + self.m[1][2];
        let w = self.m[2][0] * p.0 + self.m[2][1] * p.1 + self.m[2][2];
        if w.abs() < MIN_W {
            return Err(GeomError::PointAtInfinity { w });
        }
        Ok((x / w, y / w))
    }

    /// Homography taking the unit-square corners (0,0),(1,0),(1,1),(0,1)
    /// onto the four given corners, solved by a direct linear transform.
    pub fn from_unit_square(corners: [(f64, f64); 4]) -> Result<Self> {
        let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        // Eight equations in h11..h32 with h33 = 1.
        let mut a = [[0.0f64; 9]; 8];
        for (i, (&(sx, sy), &(dx, dy))) in src.iter().zip(&corners).enumerate() {
            a[2 * i] = [sx, sy, 1.0, 0.0, 0.0, 0.0, -dx * sx, -dx * sy, dx];
            a[2 * i + 1] = [0.0, 0.0, 0.0, sx, sy, 1.0, -dy * sx, -dy * sy, dy];
        }
        let h = solve8(&mut a)?;
        Self::new([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    }

    /// Identity-plus-corner-jitter sampling: each unit-square corner moves
    /// uniformly within `±jitter` on both axes before solving for H.
    pub fn sample_jittered(rng: &mut ChaCha8Rng, jitter: f64) -> Result<Self> {
        let base = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut corners = base;
        for c in corners.iter_mut() {
            c.0 += rng.gen_range(-jitter..=jitter);
            c.1 += rng.gen_range(-jitter..=jitter);
        }
        Self::from_unit_square(corners)
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Gaussian elimination with partial pivoting on an 8x9 augmented system.
fn solve8(a: &mut [[f64; 9]; 8]) -> Result<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(GeomError::UnsolvableHomography);
        }
        a.swap(col, pivot);
        let inv = 1.0 / a[col][col];
        for k in col..9 {
            a[col][k] *= inv;
        }
        for row in 0..8 {
            if row != col && a[row][col] != 0.0 {
                let factor = a[row][col];
                for k in col..9 {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    let mut out = [0.0; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i][8];
    }
    Ok(out)
}

/// Maps every visible joint of every frame projectively; visibility is
/// preserved and invisible joints stay pinned at the origin.
pub fn apply_homography(seq: &SkeletonSequence, h: &Homography) -> Result<SkeletonSequence> {
    let mut out = seq.clone();
    for frame in out.frames_mut() {
        for idx in 0..super::skeleton::JOINT_COUNT {
            if frame.is_visible(idx) {
                let mapped = h.apply_point(frame.joint(idx))?;
                frame.set_joint(idx, mapped, true);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::skeleton::{Skeleton, JOINT_COUNT};
    use rand::SeedableRng;

    fn test_sequence() -> SkeletonSequence {
        let mut frames = Vec::new();
        for t in 0..3 {
            let mut joints = [(0.0, 0.0); JOINT_COUNT];
            for (i, j) in joints.iter_mut().enumerate() {
                *j = (0.1 + 0.04 * i as f64, 0.2 + 0.03 * i as f64 + 0.05 * t as f64);
            }
            frames.push(Skeleton::all_visible(joints));
        }
        SkeletonSequence::new(frames, 64, 64).unwrap()
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let seq = test_sequence();
        let out = apply_homography(&seq, &Homography::identity()).unwrap();
        assert_eq!(seq, out);
    }

    #[test]
    fn pure_translation_shifts_all_joints_equally() {
        let seq = test_sequence();
        let h = Homography::translation(0.07, -0.03);
        let out = apply_homography(&seq, &h).unwrap();
        for (orig, moved) in seq.frames().iter().zip(out.frames()) {
            for i in 0..JOINT_COUNT {
                let (ox, oy) = orig.joint(i);
                let (mx, my) = moved.joint(i);
                assert!((mx - ox - 0.07).abs() < 1e-12);
                assert!((my - oy + 0.03).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        assert!(matches!(Homography::new(m), Err(GeomError::SingularHomography { .. })));
    }

    #[test]
    fn unit_square_solver_hits_all_four_corners() {
        let corners = [(0.05, -0.1), (1.1, 0.02), (0.94, 1.08), (-0.03, 0.97)];
        let h = Homography::from_unit_square(corners).unwrap();
        let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        for (s, d) in src.iter().zip(&corners) {
            let got = h.apply_point(*s).unwrap();
            assert!((got.0 - d.0).abs() < 1e-9 && (got.1 - d.1).abs() < 1e-9);
        }
    }

    /// Collinearity oracle: projective maps preserve collinearity; check the
    /// cross-product residual of mapped collinear triples.
    #[test]
    fn collinear_triples_stay_collinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let h = Homography::sample_jittered(&mut rng, 0.15).unwrap();
            let a = (rng.gen::<f64>(), rng.gen::<f64>());
            let d = (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let b = (a.0 + 0.37 * d.0, a.1 + 0.37 * d.1);
            let c = (a.0 + 0.81 * d.0, a.1 + 0.81 * d.1);
            let (pa, pb, pc) = (
                h.apply_point(a).unwrap(),
                h.apply_point(b).unwrap(),
                h.apply_point(c).unwrap(),
            );
            let cross = (pb.0 - pa.0) * (pc.1 - pa.1) - (pb.1 - pa.1) * (pc.0 - pa.0);
            assert!(cross.abs() < 1e-6, "collinearity broken, cross = {cross}");
        }
    }

    #[test]
    fn jitter_zero_samples_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Homography::sample_jittered(&mut rng, 0.0).unwrap();
        let p = (0.3, 0.7);
        let q = h.apply_point(p).unwrap();
        assert!((q.0 - p.0).abs() < 1e-9 && (q.1 - p.1).abs() < 1e-9);
    }
}

//! Per-limb appearance transfer: similarity transforms between limb
//! endpoint pairs and inverse-mapped bilinear patch warps.

use super::limbs::{segment_distance, Limb};
use super::morph::BinaryMask;
use super::raster::ImageBuf;
use super::skeleton::Skeleton;
use super::{GeomError, Result};

/// 2x3 affine transform, row-major: `p' = M[..2] * p + M[col 2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 3]; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.m[0][0] * p.0 + self.m[0][1] * p.1 + self.m[0][2],
            self.m[1][0] * p.0 + self.m[1][1] * p.1 + self.m[1][2],
        )
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0];
        if det.abs() < 1e-12 {
            return None;
        }
        let inv = 1.0 / det;
        let a = self.m[1][1] * inv;
        let b = -self.m[0][1] * inv;
        let c = -self.m[1][0] * inv;
        let d = self.m[0][0] * inv;
        let tx = -(a * self.m[0][2] + b * self.m[1][2]);
        let ty = -(c * self.m[0][2] + d * self.m[1][2]);
        Some(Self { m: [[a, b, tx], [c, d, ty]] })
    }

    /// Uniform scale factor of a similarity transform.
    pub fn scale(&self) -> f64 {
        (self.m[0][0] * self.m[0][0] + self.m[1][0] * self.m[1][0]).sqrt()
    }
}

/// Similarity (rotation + uniform scale + translation) mapping one endpoint
/// pair exactly onto another. Solved as a complex ratio of the two segment
/// vectors.
fn similarity_from_pairs(
    p0: (f64, f64),
    p1: (f64, f64),
    q0: (f64, f64),
    q1: (f64, f64),
    limb_name: &'static str,
) -> Result<Affine2> {
    let dp = (p1.0 - p0.0, p1.1 - p0.1);
    let dq = (q1.0 - q0.0, q1.1 - q0.1);
    let len2 = dp.0 * dp.0 + dp.1 * dp.1;
    if len2 < 1e-18 {
        return Err(GeomError::DegenerateLimb { limb: limb_name });
    }
    let a = (dq.0 * dp.0 + dq.1 * dp.1) / len2;
    let b = (dq.1 * dp.0 - dq.0 * dp.1) / len2;
    let tx = q0.0 - (a * p0.0 - b * p0.1);
    let ty = q0.1 - (b * p0.0 + a * p0.1);
    Ok(Affine2 { m: [[a, -b, tx], [b, a, ty]] })
}

fn limb_endpoints(sk: &Skeleton, limb: &Limb) -> Result<((f64, f64), (f64, f64))> {
    for &joint in &[limb.a, limb.b] {
        if !sk.is_visible(joint) {
            return Err(GeomError::InvisibleJoint { limb: limb.name, joint });
        }
    }
    Ok((sk.joint(limb.a), sk.joint(limb.b)))
}

/// Similarity mapping the limb's source endpoints exactly onto its
/// destination endpoints, in normalized coordinates.
pub fn limb_transform(src: &Skeleton, dst: &Skeleton, limb: &Limb) -> Result<Affine2> {
    let (p0, p1) = limb_endpoints(src, limb)?;
    let (q0, q1) = limb_endpoints(dst, limb)?;
    similarity_from_pairs(p0, p1, q0, q1, limb.name)
}

fn to_px(p: (f64, f64), w: usize, h: usize) -> (f64, f64) {
    (p.0 * w as f64 - 0.5, p.1 * h as f64 - 0.5)
}

/// Warps the source limb capsule into an `out_size` raster.
///
/// The transform maps source-image pixel coordinates to output pixel
/// coordinates; each output pixel inside the destination capsule is
/// inverse-mapped and bilinearly sampled if it lands inside the source
/// capsule and the image bounds. The mask marks exactly the written pixels.
pub fn warp_limb_patch(
    image: &ImageBuf,
    src_sk: &Skeleton,
    dst_sk: &Skeleton,
    limb: &Limb,
    out_size: (usize, usize),
) -> Result<(ImageBuf, BinaryMask)> {
    let (out_h, out_w) = out_size;
    let (sp0, sp1) = limb_endpoints(src_sk, limb)?;
    let (dp0, dp1) = limb_endpoints(dst_sk, limb)?;
    let s0 = to_px(sp0, image.width, image.height);
    let s1 = to_px(sp1, image.width, image.height);
    let d0 = to_px(dp0, out_w, out_h);
    let d1 = to_px(dp1, out_w, out_h);
    let forward = similarity_from_pairs(s0, s1, d0, d1, limb.name)?;
    let inverse = forward.inverse().ok_or(GeomError::DegenerateLimb { limb: limb.name })?;

    let src_len = ((s1.0 - s0.0).powi(2) + (s1.1 - s0.1).powi(2)).sqrt();
    let dst_len = ((d1.0 - d0.0).powi(2) + (d1.1 - d0.1).powi(2)).sqrt();
    let src_half = limb.width_ratio * src_len;
    let dst_half = limb.width_ratio * dst_len;

    let mut patch = ImageBuf::new(out_h, out_w, image.channels);
    let mut mask = BinaryMask::new(out_h, out_w);
    if dst_half <= 0.0 {
        return Ok((patch, mask));
    }

    let x_min = (d0.0.min(d1.0) - dst_half).floor().max(0.0) as usize;
    let x_max = (d0.0.max(d1.0) + dst_half).ceil().min((out_w - 1) as f64) as usize;
    let y_min = (d0.1.min(d1.1) - dst_half).floor().max(0.0) as usize;
    let y_max = (d0.1.max(d1.1) + dst_half).ceil().min((out_h - 1) as f64) as usize;

    let mut sample = vec![0.0f32; image.channels];
    for y in y_min..=y_max {
        for x in x_min..=x_max {
            let q = (x as f64, y as f64);
            if segment_distance(q, d0, d1) > dst_half {
                continue;
            }
            let p = inverse.apply(q);
            if segment_distance(p, s0, s1) > src_half + 1e-9 {
                continue;
            }
            if image.sample_bilinear(p.0, p.1, &mut sample) {
                patch.pixel_mut(y, x).copy_from_slice(&sample);
                mask.set(y, x, true);
            }
        }
    }
    Ok((patch, mask))
}

//! COCO-18 skeletons and fixed-length trajectories.

use super::{GeomError, Result};

pub const JOINT_COUNT: usize = 18;

/// Joint indices in the OpenPose COCO-18 layout. External pose extractors
/// emit this order, so ingested skeleton files line up without remapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    Nose = 0,
    Neck = 1,
    RShoulder = 2,
    RElbow = 3,
    RWrist = 4,
    LShoulder = 5,
    LElbow = 6,
    LWrist = 7,
    RHip = 8,
    RKnee = 9,
    RAnkle = 10,
    LHip = 11,
    LKnee = 12,
    LAnkle = 13,
    REye = 14,
    LEye = 15,
    REar = 16,
    LEar = 17,
}

impl From<Joint> for usize {
    fn from(j: Joint) -> usize {
        j as usize
    }
}

/// One pose: 18 ordered joints in normalized `[0,1]` image coordinates plus
/// per-joint visibility. Invisible joints are pinned at `(0,0)` and excluded
/// from every raster, mask and warp.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: [(f64, f64); JOINT_COUNT],
    visible: [bool; JOINT_COUNT],
}

impl Skeleton {
    pub fn new(joints: [(f64, f64); JOINT_COUNT], visible: [bool; JOINT_COUNT]) -> Self {
        let mut joints = joints;
        for (p, &v) in joints.iter_mut().zip(&visible) {
            if !v {
                *p = (0.0, 0.0);
            }
        }
        Self { joints, visible }
    }

    pub fn from_slice(joints: &[(f64, f64)], visible: &[bool]) -> Result<Self> {
        if joints.len() != JOINT_COUNT || visible.len() != JOINT_COUNT {
            return Err(GeomError::WrongJointCount(joints.len()));
        }
        let mut j = [(0.0, 0.0); JOINT_COUNT];
        let mut v = [false; JOINT_COUNT];
        j.copy_from_slice(joints);
        v.copy_from_slice(visible);
        Ok(Self::new(j, v))
    }

    pub fn all_visible(joints: [(f64, f64); JOINT_COUNT]) -> Self {
        Self::new(joints, [true; JOINT_COUNT])
    }

    pub fn joint(&self, idx: usize) -> (f64, f64) {
        self.joints[idx]
    }

    pub fn set_joint(&mut self, idx: usize, pos: (f64, f64), visible: bool) {
        self.visible[idx] = visible;
        self.joints[idx] = if visible { pos } else { (0.0, 0.0) };
    }

    pub fn is_visible(&self, idx: usize) -> bool {
        self.visible[idx]
    }

    pub fn joints(&self) -> &[(f64, f64); JOINT_COUNT] {
        &self.joints
    }

    pub fn visibility(&self) -> &[bool; JOINT_COUNT] {
        &self.visible
    }

    pub fn any_visible(&self) -> bool {
        self.visible.iter().any(|&v| v)
    }

    /// Mean position of the visible joints; `None` when nothing is visible.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for (p, &v) in self.joints.iter().zip(&self.visible) {
            if v {
                sx += p.0;
                sy += p.1;
                n += 1;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Pixel coordinates -> normalized: x/width, y/height per axis.
    pub fn normalize(&self, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GeomError::NonPositiveDimensions {
                width: width as usize,
                height: height as usize,
            });
        }
        let (w, h) = (f64::from(width), f64::from(height));
        let mut out = self.clone();
        for (p, &v) in out.joints.iter_mut().zip(&self.visible) {
            if v {
                *p = (p.0 / w, p.1 / h);
            }
        }
        Ok(out)
    }

    /// Normalized -> pixel coordinates.
    pub fn denormalize(&self, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GeomError::NonPositiveDimensions {
                width: width as usize,
                height: height as usize,
            });
        }
        let (w, h) = (f64::from(width), f64::from(height));
        let mut out = self.clone();
        for (p, &v) in out.joints.iter_mut().zip(&self.visible) {
            if v {
                *p = (p.0 * w, p.1 * h);
            }
        }
        Ok(out)
    }

    /// Flat `[x0,y0,x1,y1,..]` view of the 18 joints (36 values).
    pub fn flatten(&self) -> [f64; 2 * JOINT_COUNT] {
        let mut out = [0.0; 2 * JOINT_COUNT];
        for (i, p) in self.joints.iter().enumerate() {
            out[2 * i] = p.0;
            out[2 * i + 1] = p.1;
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten); all joints marked visible.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 2 * JOINT_COUNT {
            return Err(GeomError::WrongJointCount(values.len() / 2));
        }
        let mut joints = [(0.0, 0.0); JOINT_COUNT];
        for (i, j) in joints.iter_mut().enumerate() {
            *j = (values[2 * i], values[2 * i + 1]);
        }
        Ok(Self::all_visible(joints))
    }
}

/// A trajectory of skeletons plus the pixel size of the originating frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<Skeleton>,
    pub source_width: u32,
    pub source_height: u32,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<Skeleton>, source_width: u32, source_height: u32) -> Result<Self> {
        if frames.is_empty() {
            return Err(GeomError::EmptySequence);
        }
        Ok(Self { frames, source_width, source_height })
    }

    pub fn frames(&self) -> &[Skeleton] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Skeleton] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least one frame
    }

    /// Row-major `T x 36` flattening of the whole trajectory.
    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|s| s.flatten()).collect()
    }

    /// Rebuilds a sequence from `T x 36` values; every joint visible.
    pub fn from_flat(values: &[f64], width: u32, height: u32) -> Result<Self> {
        if values.is_empty() || values.len() % (2 * JOINT_COUNT) != 0 {
            return Err(GeomError::EmptySequence);
        }
        let frames = values
            .chunks(2 * JOINT_COUNT)
            .map(Skeleton::from_flat)
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, width, height)
    }

    /// Uniform temporal subsampling down (or up, by repetition) to `target`
    /// frames. Identity when lengths already match.
    pub fn subsample_to(&self, target: usize) -> Result<Self> {
        if target == 0 {
            return Err(GeomError::EmptySequence);
        }
        if target == self.frames.len() {
            return Ok(self.clone());
        }
        let t = self.frames.len();
        let frames = (0..target)
            .map(|j| {
                let idx = if target == 1 {
                    0
                } else {
                    ((j as f64) * (t - 1) as f64 / (target - 1) as f64).round() as usize
                };
                self.frames[idx.min(t - 1)].clone()
            })
            .collect();
        Self::new(frames, self.source_width, self.source_height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_skeleton() -> Skeleton {
        let mut joints = [(0.0, 0.0); JOINT_COUNT];
        for (i, j) in joints.iter_mut().enumerate() {
            *j = (0.05 * (i + 1) as f64, 0.04 * (i + 1) as f64);
        }
        Skeleton::all_visible(joints)
    }

    #[test]
    fn normalize_by_unit_dims_is_identity() {
        let sk = grid_skeleton();
        let normalized = sk.normalize(1, 1).unwrap();
        assert_eq!(sk, normalized);
    }

    #[test]
    fn normalize_halves_a_centered_point() {
        let mut joints = [(0.0, 0.0); JOINT_COUNT];
        joints[0] = (160.0, 120.0);
        let sk = Skeleton::all_visible(joints);
        let n = sk.normalize(320, 240).unwrap();
        assert_eq!(n.joint(0), (0.5, 0.5));
    }

    #[test]
    fn normalize_rejects_zero_dims() {
        assert!(grid_skeleton().normalize(0, 10).is_err());
        assert!(grid_skeleton().denormalize(10, 0).is_err());
    }

    #[test]
    fn normalize_denormalize_round_trip() {
        // Deterministic pseudo-random skeletons over several dim pairs.
        let mut state = 0x1234_5678u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        for &(w, h) in &[(320u32, 240u32), (64, 64), (1921, 1087)] {
            let mut joints = [(0.0, 0.0); JOINT_COUNT];
            for j in joints.iter_mut() {
                *j = (next() * f64::from(w), next() * f64::from(h));
            }
            let sk = Skeleton::all_visible(joints);
            let rt = sk.normalize(w, h).unwrap().denormalize(w, h).unwrap();
            for i in 0..JOINT_COUNT {
                let (ax, ay) = sk.joint(i);
                let (bx, by) = rt.joint(i);
                assert!((ax - bx).abs() < 1e-6 && (ay - by).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invisible_joints_are_pinned_to_origin() {
        let mut vis = [true; JOINT_COUNT];
        vis[4] = false;
        let mut joints = [(0.5, 0.5); JOINT_COUNT];
        joints[4] = (0.9, 0.9);
        let sk = Skeleton::new(joints, vis);
        assert_eq!(sk.joint(4), (0.0, 0.0));
        assert!(!sk.is_visible(4));
    }

    #[test]
    fn flatten_unflatten_is_identity() {
        let sk = grid_skeleton();
        let rt = Skeleton::from_flat(&sk.flatten()).unwrap();
        assert_eq!(sk, rt);

        let seq = SkeletonSequence::new(vec![sk.clone(), grid_skeleton()], 320, 240).unwrap();
        let flat = seq.flatten();
        assert_eq!(flat.len(), 2 * 36);
        let rt = SkeletonSequence::from_flat(&flat, 320, 240).unwrap();
        assert_eq!(seq, rt);
    }

    #[test]
    fn subsample_keeps_endpoints() {
        let frames: Vec<Skeleton> = (0..20)
            .map(|i| {
                let mut joints = [(0.0, 0.0); JOINT_COUNT];
                joints[0] = (i as f64 / 20.0, 0.5);
                Skeleton::all_visible(joints)
            })
            .collect();
        let seq = SkeletonSequence::new(frames, 100, 100).unwrap();
        let sub = seq.subsample_to(8).unwrap();
        assert_eq!(sub.len(), 8);
        assert_eq!(sub.frames()[0], seq.frames()[0]);
        assert_eq!(sub.frames()[7], seq.frames()[19]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert!(SkeletonSequence::new(Vec::new(), 10, 10).is_err());
    }
}

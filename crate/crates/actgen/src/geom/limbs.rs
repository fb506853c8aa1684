//! Body-part decomposition: limbs as capsules between joint pairs.

use super::skeleton::{Joint, Skeleton};

/// Compositing group; later groups overwrite earlier ones when appearance
/// patches overlap (torso first, then limbs, head last).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LimbGroup {
    Torso,
    Limb,
    Head,
}

/// One body part: a joint pair plus the capsule half-width expressed as a
/// fraction of the limb length.
#[derive(Debug, Clone, Copy)]
pub struct Limb {
    pub name: &'static str,
    pub a: usize,
    pub b: usize,
    pub width_ratio: f64,
    pub group: LimbGroup,
}

impl Limb {
    const fn new(name: &'static str, a: Joint, b: Joint, width_ratio: f64, group: LimbGroup) -> Self {
        Self { name, a: a as usize, b: b as usize, width_ratio, group }
    }

    pub fn endpoints(&self, sk: &Skeleton) -> Option<((f64, f64), (f64, f64))> {
        (sk.is_visible(self.a) && sk.is_visible(self.b))
            .then(|| (sk.joint(self.a), sk.joint(self.b)))
    }
}

/// Fixed body-part list. Order doubles as the compositing order and as the
/// channel order of skeleton rasters.
#[derive(Debug, Clone)]
pub struct LimbSet {
    limbs: Vec<Limb>,
}

const BODY_RATIO: f64 = 0.25;
const HEAD_RATIO: f64 = 0.5;

impl Default for LimbSet {
    fn default() -> Self {
        use Joint::*;
        use LimbGroup::{Head, Torso};
        const ARM_LEG: LimbGroup = LimbGroup::Limb;
        Self {
            limbs: vec![
                Limb::new("neck_r_hip", Neck, RHip, BODY_RATIO, Torso),
                Limb::new("neck_l_hip", Neck, LHip, BODY_RATIO, Torso),
                Limb::new("neck_r_shoulder", Neck, RShoulder, BODY_RATIO, Torso),
                Limb::new("neck_l_shoulder", Neck, LShoulder, BODY_RATIO, Torso),
                Limb::new("r_upper_arm", RShoulder, RElbow, BODY_RATIO, ARM_LEG),
                Limb::new("r_forearm", RElbow, RWrist, BODY_RATIO, ARM_LEG),
                Limb::new("l_upper_arm", LShoulder, LElbow, BODY_RATIO, ARM_LEG),
                Limb::new("l_forearm", LElbow, LWrist, BODY_RATIO, ARM_LEG),
                Limb::new("r_thigh", RHip, RKnee, BODY_RATIO, ARM_LEG),
                Limb::new("r_shin", RKnee, RAnkle, BODY_RATIO, ARM_LEG),
                Limb::new("l_thigh", LHip, LKnee, BODY_RATIO, ARM_LEG),
                Limb::new("l_shin", LKnee, LAnkle, BODY_RATIO, ARM_LEG),
                Limb::new("neck_nose", Neck, Nose, HEAD_RATIO, Head),
                Limb::new("nose_r_eye", Nose, REye, HEAD_RATIO, Head),
                Limb::new("nose_l_eye", Nose, LEye, HEAD_RATIO, Head),
                Limb::new("r_eye_ear", REye, REar, HEAD_RATIO, Head),
                Limb::new("l_eye_ear", LEye, LEar, HEAD_RATIO, Head),
            ],
        }
    }
}

impl LimbSet {
    pub fn limbs(&self) -> &[Limb] {
        &self.limbs
    }

    /// Number of limb channels, `L`.
    pub fn len(&self) -> usize {
        self.limbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.limbs.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Limb {
        &self.limbs[idx]
    }
}

/// Point-to-segment distance; the capsule test is `distance <= half_width`.
pub fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let (px, py) = (p.0 - a.0, p.1 - a.1);
    if len2 <= f64::EPSILON {
        return (px * px + py * py).sqrt();
    }
    let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (px - t * dx, py - t * dy);
    (cx * cx + cy * cy).sqrt()
}

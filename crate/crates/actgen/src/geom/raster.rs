//! Float rasters, skeleton rasterization and person masks.

use super::limbs::{segment_distance, LimbSet};
use super::morph::{dilate, BinaryMask};
use super::skeleton::Skeleton;
use crate::tensor::Tensor;

/// H x W x C float image, row-major channel-last, values nominally in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        Self { height, width, channels, data }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        &self.data[(y * self.width + x) * self.channels..][..self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        &mut self.data[(y * self.width + x) * self.channels..][..self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Bilinear sample at continuous pixel-center coordinates. `None` when
    /// the sample point falls outside the valid interpolation domain.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return false;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        for c in 0..self.channels {
            let v00 = self.get(y0, x0, c);
            let v01 = self.get(y0, x1, c);
            let v10 = self.get(y1, x0, c);
            let v11 = self.get(y1, x1, c);
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out[c] = top + (bot - top) * fy;
        }
        true
    }

    /// View as a `[H, W, C]` tensor (single-image, no batch axis).
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.height, self.width, self.channels], self.data.clone())
            .expect("raster data is finite by construction")
    }

    pub fn from_tensor_hwc(t: &Tensor<f32>) -> Self {
        let shape = t.shape();
        assert_eq!(shape.len(), 3, "expected [H,W,C], got {shape:?}");
        Self::from_data(shape[0], shape[1], shape[2], t.data().to_vec())
    }
}

/// Maps a normalized point into continuous pixel-center coordinates.
fn to_pixel_coords(p: (f64, f64), width: usize, height: usize) -> (f64, f64) {
    // Pixel (i,j) has center (j + 0.5, i + 0.5) in continuous coordinates;
    // normalized x in [0,1] spans [0, width].
    (p.0 * width as f64 - 0.5, p.1 * height as f64 - 0.5)
}

/// Renders one anti-aliased unit-intensity channel per limb. Limbs with an
/// invisible endpoint leave their channel all-zero.
pub fn rasterize_skeleton(sk: &Skeleton, height: usize, width: usize, limbs: &LimbSet) -> ImageBuf {
    let mut out = ImageBuf::new(height, width, limbs.len());
    for (ch, limb) in limbs.limbs().iter().enumerate() {
        let Some((a, b)) = limb.endpoints(sk) else { continue };
        let pa = to_pixel_coords(a, width, height);
        let pb = to_pixel_coords(b, width, height);
        // Coverage falls off linearly within one pixel of the segment.
        let x_min = (pa.0.min(pb.0) - 1.5).floor().max(0.0) as usize;
        let x_max = (pa.0.max(pb.0) + 1.5).ceil().min((width - 1) as f64) as usize;
        let y_min = (pa.1.min(pb.1) - 1.5).floor().max(0.0) as usize;
        let y_max = (pa.1.max(pb.1) + 1.5).ceil().min((height - 1) as f64) as usize;
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let d = segment_distance((x as f64, y as f64), pa, pb);
                let cover = (1.0 - d).max(0.0);
                if cover > 0.0 {
                    out.set(y, x, ch, cover as f32);
                }
            }
        }
    }
    out
}

/// Union of the limb capsules, dilated by a disk of `radius` pixels.
/// Capsule half-widths scale with limb pixel length via each limb's ratio.
pub fn person_mask(
    sk: &Skeleton,
    height: usize,
    width: usize,
    radius: usize,
    limbs: &LimbSet,
) -> BinaryMask {
    let mut mask = BinaryMask::new(height, width);
    for limb in limbs.limbs() {
        let Some((a, b)) = limb.endpoints(sk) else { continue };
        let pa = to_pixel_coords(a, width, height);
        let pb = to_pixel_coords(b, width, height);
        let len = ((pb.0 - pa.0).powi(2) + (pb.1 - pa.1).powi(2)).sqrt();
        let half_width = limb.width_ratio * len;
        if half_width <= 0.0 {
            continue;
        }
        let x_min = (pa.0.min(pb.0) - half_width).floor().max(0.0) as usize;
        let x_max = (pa.0.max(pb.0) + half_width).ceil().min((width - 1) as f64) as usize;
        let y_min = (pa.1.min(pb.1) - half_width).floor().max(0.0) as usize;
        let y_max = (pa.1.max(pb.1) + half_width).ceil().min((height - 1) as f64) as usize;
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                if segment_distance((x as f64, y as f64), pa, pb) <= half_width {
                    mask.set(y, x, true);
                }
            }
        }
    }
    dilate(&mask, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::morph::erode;
    use crate::geom::skeleton::{Joint, JOINT_COUNT};

    fn invisible_skeleton() -> Skeleton {
        Skeleton::new([(0.0, 0.0); JOINT_COUNT], [false; JOINT_COUNT])
    }

    #[test]
    fn all_invisible_rasterizes_to_zero() {
        let limbs = LimbSet::default();
        let raster = rasterize_skeleton(&invisible_skeleton(), 8, 8, &limbs);
        assert!(raster.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_limb_hits_only_middle_rows() {
        let limbs = LimbSet::default();
        // Place the right upper arm horizontally at y = 0.5.
        let mut sk = invisible_skeleton();
        sk.set_joint(Joint::RShoulder as usize, (0.2, 0.5), true);
        sk.set_joint(Joint::RElbow as usize, (0.8, 0.5), true);
        let raster = rasterize_skeleton(&sk, 8, 8, &limbs);
        let ch = limbs
            .limbs()
            .iter()
            .position(|l| l.name == "r_upper_arm")
            .unwrap();
        for y in 0..8 {
            let row_sum: f32 = (0..8).map(|x| raster.get(y, x, ch)).sum();
            if y == 3 || y == 4 {
                assert!(row_sum > 0.0, "row {y} should be covered");
            } else {
                assert_eq!(row_sum, 0.0, "row {y} should be empty");
            }
        }
        // Only that limb's channel is populated.
        for c in 0..limbs.len() {
            if c != ch {
                assert!((0..8).all(|y| (0..8).all(|x| raster.get(y, x, c) == 0.0)));
            }
        }
    }

    /// Line-length oracle: the channel sum grows linearly with the limb's
    /// pixel length, so differences of sums track differences of lengths
    /// within a pixel (end caps cancel).
    #[test]
    fn channel_sum_scales_linearly_with_length() {
        let limbs = LimbSet::default();
        let size = 64usize;
        let mut measured = Vec::new();
        for &frac in &[0.2f64, 0.35, 0.5, 0.65, 0.8] {
            let mut sk = invisible_skeleton();
            sk.set_joint(Joint::RShoulder as usize, (0.1, 0.4), true);
            sk.set_joint(Joint::RElbow as usize, (0.1 + frac, 0.4 + frac * 0.3), true);
            let raster = rasterize_skeleton(&sk, size, size, &limbs);
            let ch = limbs.limbs().iter().position(|l| l.name == "r_upper_arm").unwrap();
            let sum: f32 = (0..size)
                .flat_map(|y| (0..size).map(move |x| (y, x)))
                .map(|(y, x)| raster.get(y, x, ch))
                .sum();
            // Independent length computation in pixel units.
            let len = (frac * size as f64) * (1.0 + 0.3f64 * 0.3).sqrt();
            measured.push((len, f64::from(sum)));
        }
        for pair in measured.windows(2) {
            let (len_a, sum_a) = pair[0];
            let (len_b, sum_b) = pair[1];
            let d_sum = sum_b - sum_a;
            let d_len = len_b - len_a;
            assert!(
                (d_sum - d_len).abs() <= 1.0,
                "sum delta {d_sum:.3} vs length delta {d_len:.3}"
            );
        }
    }

    #[test]
    fn person_mask_radius_zero_is_capsule_union() {
        let limbs = LimbSet::default();
        let mut sk = invisible_skeleton();
        sk.set_joint(Joint::Neck as usize, (0.5, 0.3), true);
        sk.set_joint(Joint::RHip as usize, (0.5, 0.7), true);
        let m0 = person_mask(&sk, 16, 16, 0, &limbs);
        assert!(m0.count() > 0);
        // Every set pixel is inside the capsule by definition of the test.
        let pa = to_pixel_coords((0.5, 0.3), 16, 16);
        let pb = to_pixel_coords((0.5, 0.7), 16, 16);
        let len = ((pb.0 - pa.0).powi(2) + (pb.1 - pa.1).powi(2)).sqrt();
        for y in 0..16 {
            for x in 0..16 {
                let inside = segment_distance((x as f64, y as f64), pa, pb) <= 0.25 * len;
                assert_eq!(m0.get(y, x), inside);
            }
        }
    }

    #[test]
    fn person_mask_is_monotone_in_radius() {
        let limbs = LimbSet::default();
        let mut sk = invisible_skeleton();
        sk.set_joint(Joint::Neck as usize, (0.4, 0.2), true);
        sk.set_joint(Joint::RHip as usize, (0.6, 0.8), true);
        sk.set_joint(Joint::Nose as usize, (0.4, 0.1), true);
        let m1 = person_mask(&sk, 32, 32, 1, &limbs);
        let m2 = person_mask(&sk, 32, 32, 2, &limbs);
        let m3 = person_mask(&sk, 32, 32, 3, &limbs);
        assert!(m1.subset_of(&m2));
        assert!(m2.subset_of(&m3));
    }

    /// Brute-force morphology oracle on the real mask: opening never grows.
    #[test]
    fn mask_opening_shrinks() {
        let limbs = LimbSet::default();
        let mut sk = invisible_skeleton();
        sk.set_joint(Joint::Neck as usize, (0.3, 0.3), true);
        sk.set_joint(Joint::LHip as usize, (0.7, 0.7), true);
        let m = person_mask(&sk, 16, 16, 1, &limbs);
        let opened = dilate(&erode(&m, 1), 1);
        assert!(opened.count() <= m.count());
    }

    #[test]
    fn bilinear_sampling_interpolates() {
        let mut img = ImageBuf::new(2, 2, 1);
        img.set(0, 0, 0, 0.0);
        img.set(0, 1, 0, 1.0);
        img.set(1, 0, 0, 1.0);
        img.set(1, 1, 0, 2.0);
        let mut out = [0.0f32];
        assert!(img.sample_bilinear(0.5, 0.5, &mut out));
        assert!((out[0] - 1.0).abs() < 1e-6);
        assert!(!img.sample_bilinear(-0.1, 0.0, &mut out));
        assert!(!img.sample_bilinear(0.0, 1.1, &mut out));
    }
}

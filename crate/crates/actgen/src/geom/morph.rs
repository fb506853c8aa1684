//! Binary masks and disk morphology.

/// H x W boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn complement(&self) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|v| !v).collect() }
    }

    /// Set-union with another mask of the same dimensions.
    pub fn union_with(&mut self, other: &Self) {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a || b;
        }
    }

    /// True when `self` is a subset of `other`.
    pub fn subset_of(&self, other: &Self) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Integer offsets of the discrete disk `dx^2 + dy^2 <= r^2`.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = r * r;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Minkowski sum with the discrete disk: a pixel is set when any disk
/// neighbour was set. Radius 0 is the identity.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let mut out = BinaryMask::new(mask.height, mask.width);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(y, x) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny >= 0 && nx >= 0 && (ny as usize) < mask.height && (nx as usize) < mask.width {
                    out.set(ny as usize, nx as usize, true);
                }
            }
        }
    }
    out
}

/// Morphological erosion: a pixel survives when every disk neighbour is set.
/// Pixels beyond the border count as unset.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let mut out = BinaryMask::new(mask.height, mask.width);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let keep = offsets.iter().all(|&(dy, dx)| {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                ny >= 0
                    && nx >= 0
                    && (ny as usize) < mask.height
                    && (nx as usize) < mask.width
                    && mask.get(ny as usize, nx as usize)
            });
            if keep {
                out.set(y, x, true);
            }
        }
    }
    out
}

//! Ground-truth boxes and their rasterization.

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// Axis-aligned integer rectangle in world cells: columns `x0..x0+w`, rows
/// `y0..y0+h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoxCells {
    pub x0: i64,
    pub y0: i64,
    pub w: i64,
    pub h: i64,
}

impl BoxCells {
    pub fn new(x0: i64, y0: i64, w: i64, h: i64) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn x1(&self) -> i64 {
        self.x0 + self.w
    }

    pub fn y1(&self) -> i64 {
        self.y0 + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x0 as f64 + self.w as f64 / 2.0, self.y0 as f64 + self.h as f64 / 2.0)
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    pub fn intersection(&self, o: &BoxCells) -> i64 {
        let w = (self.x1().min(o.x1()) - self.x0.max(o.x0)).max(0);
        let h = (self.y1().min(o.y1()) - self.y0.max(o.y0)).max(0);
        w * h
    }

    pub fn iou(&self, o: &BoxCells) -> f64 {
        let i = self.intersection(o);
        let u = self.area() + o.area() - i;
        if u == 0 {
            0.0
        } else {
            i as f64 / u as f64
        }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        Self { x0: self.x0 + dx, y0: self.y0 + dy, ..*self }
    }

    /// Intersection with `0..w x 0..h`, or `None` if empty.
    pub fn clipped(&self, w: i64, h: i64) -> Option<Self> {
        let x0 = self.x0.max(0);
        let y0 = self.y0.max(0);
        let x1 = self.x1().min(w);
        let y1 = self.y1().min(h);
        (x1 > x0 && y1 > y0).then(|| Self::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// Truth boxes over a `height x width` world grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectionTruth {
    pub height: usize,
    pub width: usize,
    pub boxes: Vec<BoxCells>,
}

impl DetectionTruth {
    pub fn new(height: usize, width: usize, boxes: Vec<BoxCells>) -> Result<Self> {
        for b in &boxes {
            if b.w <= 0 || b.h <= 0 || b.x0 < 0 || b.y0 < 0 || b.x1() > width as i64 || b.y1() > height as i64 {
                return Err(Error::Geometry(format!("box {b:?} outside {height}x{width} world")));
            }
        }
        Ok(Self { height, width, boxes })
    }

    /// Target mask on a grid downsampled by `stride`: a cell is positive when
    /// its `stride x stride` block overlaps any box.
    pub fn mask(&self, stride: usize) -> Result<Tensor> {
        if stride == 0 || self.height % stride != 0 || self.width % stride != 0 {
            return Err(Error::shape(format!("{}x{} world is not divisible by {stride}", self.height, self.width)));
        }
        let (h, w) = (self.height / stride, self.width / stride);
        let s = stride as i64;
        let mut m = Tensor::zeros(&[1, h, w]);
        for b in &self.boxes {
            let r0 = b.y0 / s;
            let r1 = (b.y1() + s - 1) / s;
            let c0 = b.x0 / s;
            let c1 = (b.x1() + s - 1) / s;
            for r in r0..r1 {
                for c in c0..c1 {
                    m.set3(0, r as usize, c as usize, 1.0);
                }
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_by_hand() {
        let a = BoxCells::new(0, 0, 4, 4);
        let b = BoxCells::new(2, 2, 4, 4);
        assert!((a.iou(&b) - 4.0 / 28.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BoxCells::new(4, 0, 2, 2)), 0.0);
    }

    #[test]
    fn mask_covers_touched_blocks() {
        let t = DetectionTruth::new(8, 8, vec![BoxCells::new(1, 2, 3, 2)]).unwrap();
        let m = t.mask(2).unwrap();
        let on: Vec<(usize, usize)> =
            (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).filter(|&(r, c)| m.get3(0, r, c) == 1.0).collect();
        assert_eq!(on, vec![(1, 0), (1, 1)]);
        assert!(t.mask(3).is_err());
        assert!(DetectionTruth::new(8, 8, vec![BoxCells::new(6, 0, 3, 1)]).is_err());
    }

    #[test]
    fn clipping() {
        let b = BoxCells::new(-2, 3, 5, 4);
        assert_eq!(b.clipped(10, 5), Some(BoxCells::new(0, 3, 3, 2)));
        assert_eq!(b.clipped(10, 3), None);
    }
}

//! Normalized bounding-box geometry.
//!
//! Boxes are stored in center format `(cx, cy, w, h)` with every value
//! normalized by the image size. Corner format is a derived view used for
//! overlap computations. Corners may extend past the unit square; areas always
//! use the unclipped extents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A normalized center-format bounding box.
///
/// Invariants: `0 <= cx, cy <= 1` and `0 < w, h <= 1`. Construction through
/// [`BBox::new`] is the only way to obtain one, so every `BBox` has positive
/// area and IoU is always defined.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    cx: f64,
    // 1 - cx, computed once. Flipping swaps the two so a double flip is exact.
    cx_mirror: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl PartialEq for BBox {
    fn eq(&self, other: &Self) -> bool {
        self.cx == other.cx && self.cy == other.cy && self.w == other.w && self.h == other.h
    }
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        BBox::new(r.cx, r.cy, r.w, r.h)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

/// Which box field violated its bound. Used by parsers to report columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxField {
    CenterX,
    CenterY,
    Width,
    Height,
}

impl BoxField {
    pub fn name(self) -> &'static str {
        match self {
            BoxField::CenterX => "cx",
            BoxField::CenterY => "cy",
            BoxField::Width => "w",
            BoxField::Height => "h",
        }
    }
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        match Self::check(cx, cy, w, h) {
            Ok(()) => Ok(BBox {
                cx,
                cx_mirror: 1.0 - cx,
                cy,
                w,
                h,
            }),
            Err((field, value)) => Err(Error::InvalidGeometry(describe_violation(field, value))),
        }
    }

    /// Validate the four values, reporting the first offending field.
    pub fn check(cx: f64, cy: f64, w: f64, h: f64) -> std::result::Result<(), (BoxField, f64)> {
        let centers = [(BoxField::CenterX, cx), (BoxField::CenterY, cy)];
        for (field, v) in centers {
            if !(0.0..=1.0).contains(&v) {
                return Err((field, v));
            }
        }
        for (field, v) in [(BoxField::Width, w), (BoxField::Height, h)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err((field, v));
            }
        }
        Ok(())
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_corners(&self) -> CornerBox {
        CornerBox {
            x_min: self.cx - self.w / 2.0,
            y_min: self.cy - self.h / 2.0,
            x_max: self.cx + self.w / 2.0,
            y_max: self.cy + self.h / 2.0,
        }
    }

    pub fn from_corners(c: CornerBox) -> Result<Self> {
        if !(c.x_min <= c.x_max && c.y_min <= c.y_max) {
            return Err(Error::InvalidGeometry(format!(
                "corners out of order: {c:?}"
            )));
        }
        BBox::new(
            (c.x_min + c.x_max) / 2.0,
            (c.y_min + c.y_max) / 2.0,
            c.x_max - c.x_min,
            c.y_max - c.y_min,
        )
    }

    /// Mirror about the vertical center line of the image.
    ///
    /// Only `cx` changes (to `1 - cx`); `cy`, `w` and `h` are copied untouched
    /// and `flip_horizontal(flip_horizontal(b))` is bit-identical to `b`.
    pub fn flip_horizontal(&self) -> BBox {
        BBox {
            cx: self.cx_mirror,
            cx_mirror: self.cx,
            ..*self
        }
    }

    /// Intersection over union. Symmetric and in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

fn describe_violation(field: BoxField, value: f64) -> String {
    match field {
        BoxField::CenterX | BoxField::CenterY => {
            format!("{} = {value} outside [0, 1]", field.name())
        }
        BoxField::Width | BoxField::Height => {
            format!("{} = {value} outside (0, 1]", field.name())
        }
    }
}

/// Corner-format view of a [`BBox`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl CornerBox {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Area of the overlap. Touching edges contribute zero.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    overlap(&a.to_corners(), &b.to_corners())
}

fn overlap(ca: &CornerBox, cb: &CornerBox) -> f64 {
    let ix = (ca.x_max.min(cb.x_max) - ca.x_min.max(cb.x_min)).max(0.0);
    let iy = (ca.y_max.min(cb.y_max) - ca.y_min.max(cb.y_min)).max(0.0);
    ix * iy
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    // Areas from the same corners as the overlap, so identical boxes give
    // exactly 1.
    let (ca, cb) = (a.to_corners(), b.to_corners());
    let inter = overlap(&ca, &cb);
    let union = ca.area() + cb.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn corners_of_centered_box() {
        let c = bx(0.5, 0.5, 0.4, 0.2).to_corners();
        assert!((c.x_min - 0.3).abs() < 1e-15);
        assert!((c.x_max - 0.7).abs() < 1e-15);
        assert!((c.y_min - 0.4).abs() < 1e-15);
        assert!((c.y_max - 0.6).abs() < 1e-15);

        let full = bx(0.5, 0.5, 1.0, 1.0).to_corners();
        assert_eq!(
            full,
            CornerBox {
                x_min: 0.0,
                y_min: 0.0,
                x_max: 1.0,
                y_max: 1.0
            }
        );
    }

    #[test]
    fn rejects_out_of_range_and_degenerate() {
        assert!(BBox::new(1.5, 0.5, 0.2, 0.1).is_err());
        assert!(BBox::new(0.5, -0.1, 0.2, 0.1).is_err());
        assert!(BBox::new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BBox::new(0.5, 0.5, 0.2, 0.0).is_err());
        assert!(BBox::new(0.5, 0.5, 1.2, 0.1).is_err());
        assert!(BBox::new(f64::NAN, 0.5, 0.2, 0.1).is_err());
        // edges of the allowed ranges
        assert!(BBox::new(0.0, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn from_corners_rejects_zero_area() {
        let c = CornerBox {
            x_min: 0.2,
            y_min: 0.2,
            x_max: 0.2,
            y_max: 0.5,
        };
        assert!(matches!(
            BBox::from_corners(c),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn iou_examples() {
        let b = bx(0.5, 0.5, 0.4, 0.2);
        assert_eq!(iou(&b, &b), 1.0);

        let left = bx(0.2, 0.5, 0.2, 0.2);
        let right = bx(0.8, 0.5, 0.2, 0.2);
        assert_eq!(iou(&left, &right), 0.0);

        // intersection 0.2 x 0.4 = 0.08, union 0.16 + 0.16 - 0.08 = 0.24
        let a = bx(0.5, 0.5, 0.4, 0.4);
        let c = bx(0.7, 0.5, 0.4, 0.4);
        assert!((iou(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_one_third_matches_pixel_count() {
        // Independent check of the 1/3 case on a 1024 grid: count pixel
        // centers inside each box.
        let n = 1024usize;
        let inside = |b: &BBox, px: usize, py: usize| {
            let c = b.to_corners();
            let x = (px as f64 + 0.5) / n as f64;
            let y = (py as f64 + 0.5) / n as f64;
            x >= c.x_min && x <= c.x_max && y >= c.y_min && y <= c.y_max
        };
        let a = bx(0.5, 0.5, 0.4, 0.4);
        let b = bx(0.7, 0.5, 0.4, 0.4);
        let (mut inter, mut union) = (0usize, 0usize);
        for py in 0..n {
            for px in 0..n {
                let (ia, ib) = (inside(&a, px, py), inside(&b, px, py));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        let raster = inter as f64 / union as f64;
        assert!((raster - 1.0 / 3.0).abs() <= 4.0 / n as f64, "{raster}");
    }

    #[test]
    fn touching_boxes_have_zero_intersection() {
        let a = bx(0.25, 0.5, 0.5, 0.5);
        let b = bx(0.75, 0.5, 0.5, 0.5);
        assert_eq!(intersection_area(&a, &b), 0.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn flip_examples() {
        let b = bx(0.3, 0.4, 0.2, 0.1);
        assert!((b.flip_horizontal().cx() - 0.7).abs() < 1e-15);
        let mid = bx(0.5, 0.4, 0.2, 0.1);
        assert_eq!(mid.flip_horizontal(), mid);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..=1.0f64, 0.0..=1.0f64, 1e-3..=1.0f64, 1e-3..=1.0f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab.to_bits(), iou(&b, &a).to_bits());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn flip_is_exact_involution(b in arb_box()) {
            let f = b.flip_horizontal();
            prop_assert_eq!(f.cy().to_bits(), b.cy().to_bits());
            prop_assert_eq!(f.w().to_bits(), b.w().to_bits());
            prop_assert_eq!(f.h().to_bits(), b.h().to_bits());
            prop_assert_eq!(f.flip_horizontal().cx().to_bits(), b.cx().to_bits());
            prop_assert!((f.cx() - (1.0 - b.cx())).abs() == 0.0);
        }

        #[test]
        fn corner_round_trip(b in arb_box()) {
            let r = BBox::from_corners(b.to_corners()).unwrap();
            prop_assert!((r.cx() - b.cx()).abs() < 1e-12);
            prop_assert!((r.cy() - b.cy()).abs() < 1e-12);
            prop_assert!((r.w() - b.w()).abs() < 1e-12);
            prop_assert!((r.h() - b.h()).abs() < 1e-12);
        }
    }
}

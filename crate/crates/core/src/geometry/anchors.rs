use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{ensure_input, Result};

/// Anchor lattice over a feature map.
///
/// Ratios are height/width. Each cell carries `scales.len() * ratios.len()`
/// anchors, ordered scale-major then ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGridSpec {
    pub stride: usize,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub feature_height: usize,
    pub feature_width: usize,
}

impl AnchorGridSpec {
    /// Seedling defaults: scales 8/16/32 px, ratios 0.5/1/2.
    pub fn seedling_default(feature_height: usize, feature_width: usize, stride: usize) -> Self {
        AnchorGridSpec {
            stride,
            scales: vec![8.0, 16.0, 32.0],
            ratios: vec![0.5, 1.0, 2.0],
            feature_height,
            feature_width,
        }
    }

    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    pub fn len(&self) -> usize {
        self.feature_height * self.feature_width * self.per_cell()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        ensure_input!(self.stride >= 1, "anchor stride must be >= 1");
        ensure_input!(
            !self.scales.is_empty() && !self.ratios.is_empty(),
            "anchor scales and ratios must be non-empty"
        );
        ensure_input!(
            self.scales
                .iter()
                .chain(&self.ratios)
                .all(|v| v.is_finite() && *v > 0.0),
            "anchor scales and ratios must be positive"
        );
        Ok(())
    }
}

/// Anchors in row-major cell order, then scale, then ratio.
pub fn generate_anchors(spec: &AnchorGridSpec) -> Result<Vec<BBox>> {
    spec.validate()?;
    let shapes: Vec<(f64, f64)> = spec
        .scales
        .iter()
        .flat_map(|&s| {
            spec.ratios.iter().map(move |&r| {
                let root = r.sqrt();
                (s / root, s * root)
            })
        })
        .collect();
    let stride = spec.stride as f64;
    let mut out = Vec::with_capacity(spec.len());
    for i in 0..spec.feature_height {
        let cy = (i as f64 + 0.5) * stride;
        for j in 0..spec.feature_width {
            let cx = (j as f64 + 0.5) * stride;
            out.extend(shapes.iter().map(|&(w, h)| BBox::from_center(cx, cy, w, h)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: usize, w: usize, stride: usize, scales: &[f64], ratios: &[f64]) -> AnchorGridSpec {
        AnchorGridSpec {
            stride,
            scales: scales.to_vec(),
            ratios: ratios.to_vec(),
            feature_height: h,
            feature_width: w,
        }
    }

    #[test]
    fn single_cell() {
        let a = generate_anchors(&spec(1, 1, 16, &[16.0], &[1.0])).unwrap();
        assert_eq!(a, vec![BBox::new(0.0, 0.0, 16.0, 16.0).unwrap()]);
    }

    #[test]
    fn centers_follow_stride_lattice() {
        let a = generate_anchors(&spec(2, 2, 16, &[16.0], &[1.0])).unwrap();
        let centers: Vec<_> = a.iter().map(|b| b.center()).collect();
        assert_eq!(
            centers,
            vec![(8.0, 8.0), (24.0, 8.0), (8.0, 24.0), (24.0, 24.0)]
        );
    }

    #[test]
    fn nine_per_cell_with_defaults() {
        let s = AnchorGridSpec::seedling_default(3, 5, 8);
        assert_eq!(s.per_cell(), 9);
        let a = generate_anchors(&s).unwrap();
        assert_eq!(a.len(), 3 * 5 * 9);
        for (idx, b) in a.iter().enumerate() {
            let cell = idx / 9;
            let (cx, cy) = b.center();
            assert!((cx - ((cell % 5) as f64 + 0.5) * 8.0).abs() < 1e-9);
            assert!((cy - ((cell / 5) as f64 + 0.5) * 8.0).abs() < 1e-9);
        }
        // ratio is height / width, area is scale squared
        let tall = a[2];
        assert!((tall.height() / tall.width() - 2.0).abs() < 1e-9);
        assert!((tall.area() - 64.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(generate_anchors(&spec(1, 1, 0, &[8.0], &[1.0])).is_err());
        assert!(generate_anchors(&spec(1, 1, 8, &[], &[1.0])).is_err());
        assert!(generate_anchors(&spec(1, 1, 8, &[8.0], &[])).is_err());
    }
}

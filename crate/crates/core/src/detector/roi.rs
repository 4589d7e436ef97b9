use super::Proposal;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::Tensor;

/// Pooled features of one region plus the source index of every output cell.
#[derive(Debug, Clone)]
pub struct RoiPooled {
    /// `[channels, output_size, output_size]` flattened.
    pub values: Vec<f32>,
    /// Flat index into the feature map that produced each value.
    pub argmax: Vec<u32>,
}

/// Integer footprint of a box on a feature map with the given stride:
/// `[floor(x_min / s), ceil(x_max / s))`, clamped, at least one cell wide.
pub fn roi_footprint(
    bbox: &BBox,
    stride: usize,
    height: usize,
    width: usize,
) -> (usize, usize, usize, usize) {
    let s = stride as f64;
    let span = |lo: f64, hi: f64, limit: usize| {
        let start = ((lo / s).floor().max(0.0) as usize).min(limit - 1);
        let end = ((hi / s).ceil().max(0.0) as usize).clamp(start + 1, limit);
        (start, end)
    };
    let (x0, x1) = span(bbox.x_min, bbox.x_max, width);
    let (y0, y1) = span(bbox.y_min, bbox.y_max, height);
    (y0, y1, x0, x1)
}

/// Quantized max pooling of a proposal's footprint into an
/// `output_size x output_size` grid per channel.
///
/// A footprint of length `L` starting at `s` is split into bins
/// `[s + floor(i L / n), s + ceil((i + 1) L / n))`.
pub fn roi_pool(
    features: &Tensor,
    proposal: &Proposal,
    output_size: usize,
    stride: usize,
) -> Result<RoiPooled> {
    let (n, c, h, w) = features.dims4()?;
    if n != 1 {
        return Err(Error::Shape(format!(
            "roi_pool expects a single feature map, got batch {n}"
        )));
    }
    if output_size == 0 {
        return Err(Error::InvalidInput(
            "roi output size must be positive".into(),
        ));
    }
    let (y0, y1, x0, x1) = roi_footprint(&proposal.bbox, stride, h, w);
    let (lh, lw) = (y1 - y0, x1 - x0);
    let bins =
        |len: usize, i: usize| (i * len / output_size, ((i + 1) * len).div_ceil(output_size));
    let data = features.data();
    let cells = output_size * output_size;
    let mut values = vec![0.0f32; c * cells];
    let mut argmax = vec![0u32; c * cells];
    for ch in 0..c {
        let plane = ch * h * w;
        for py in 0..output_size {
            let (by0, by1) = bins(lh, py);
            for px in 0..output_size {
                let (bx0, bx1) = bins(lw, px);
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for y in y0 + by0..y0 + by1 {
                    for x in x0 + bx0..x0 + bx1 {
                        let idx = plane + y * w + x;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = ch * cells + py * output_size + px;
                values[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    Ok(RoiPooled { values, argmax })
}

/// Routes pooled-cell gradients back to their source feature cells.
pub fn roi_pool_backward(pooled: &RoiPooled, upstream: &[f32], feature_grad: &mut [f32]) {
    for (&src, &g) in pooled.argmax.iter().zip(upstream) {
        feature_grad[src as usize] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(x0: f64, y0: f64, x1: f64, y1: f64) -> Proposal {
        Proposal {
            bbox: BBox::new(x0, y0, x1, y1).unwrap(),
            objectness: 1.0,
        }
    }

    #[test]
    fn single_cell_footprint_replicates() {
        let mut f = Tensor::zeros(&[1, 2, 4, 4]);
        f.data_mut()[5] = 3.0; // channel 0, (1, 1)
        f.data_mut()[16 + 5] = -2.0;
        let out = roi_pool(&f, &prop(8.0, 8.0, 16.0, 16.0), 3, 8).unwrap();
        assert_eq!(&out.values[..9], &[3.0; 9]);
        assert_eq!(&out.values[9..], &[-2.0; 9]);
    }

    #[test]
    fn constant_map_gives_constant_output() {
        let f = Tensor::full(&[1, 3, 10, 10], 0.75);
        let out = roi_pool(&f, &prop(3.0, 7.0, 61.0, 44.0), 4, 8).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn sub_cell_proposal_keeps_one_cell() {
        let f = Tensor::full(&[1, 1, 4, 4], 1.0);
        let (y0, y1, x0, x1) = roi_footprint(&BBox::new(9.0, 9.0, 9.5, 9.5).unwrap(), 8, 4, 4);
        assert_eq!((y1 - y0, x1 - x0), (1, 1));
        assert!(roi_pool(&f, &prop(9.0, 9.0, 9.5, 9.5), 2, 8).is_ok());
    }
}

//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seedling_core::detector::{AnchorLabel, AnchorMatch, AnchorTargetAssignment};
use seedling_core::geometry::{BBox, BoxDelta, ScoredBox};
use seedling_core::nn::{self, LayerParams, LayerSpec, Mode, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed)
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let area = |x: &BBox| (x.x_max - x.x_min) * (x.y_max - x.y_min);
    inter / (area(a) + area(b) - inter)
}

pub fn random_box(rng: &mut impl Rng, extent: f64, max_side: f64) -> BBox {
    let w = rng.random_range(1.0..max_side);
    let h = rng.random_range(1.0..max_side);
    let x = rng.random_range(0.0..extent - w);
    let y = rng.random_range(0.0..extent - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}

/// Repeatedly takes the best remaining box and discards everything that
/// overlaps it by more than `threshold`. Returns kept indices in pick order.
pub fn brute_nms(cands: &[ScoredBox], threshold: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; cands.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if alive[i] && best.is_none_or(|b| cands[i].score > cands[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for i in 0..cands.len() {
            if alive[i] && iou_oracle(&cands[i].bbox, &cands[b].bbox) > threshold {
                alive[i] = false;
            }
        }
    }
    kept
}

/// AP by direct enumeration: per image greedy matching, then for every
/// distinct score the dataset precision/recall, then the area under the
/// upper envelope sampled at each recall value.
pub fn brute_ap(images: &[(Vec<ScoredBox>, Vec<BBox>)], iou_thr: f64) -> f64 {
    let mut outcomes: Vec<(f64, bool)> = Vec::new();
    let mut total_gt = 0;
    for (dets, gts) in images {
        total_gt += gts.len();
        let mut idx: Vec<usize> = (0..dets.len()).collect();
        // stable sort keeps input order among equal scores
        idx.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
        let mut used = vec![false; gts.len()];
        for i in idx {
            let mut pick: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let v = iou_oracle(&dets[i].bbox, gt);
                if !used[g] && v >= iou_thr && pick.is_none_or(|(_, pv)| v > pv) {
                    pick = Some((g, v));
                }
            }
            if let Some((g, _)) = pick {
                used[g] = true;
            }
            outcomes.push((dets[i].score, pick.is_some()));
        }
    }
    let mut thresholds: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let tp = outcomes.iter().filter(|o| o.0 >= t && o.1).count() as f64;
            let n = outcomes.iter().filter(|o| o.0 >= t).count() as f64;
            (tp / total_gt as f64, tp / n)
        })
        .collect();
    let mut recalls: Vec<f64> = pts.iter().map(|p| p.0).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = pts
            .iter()
            .filter(|q| q.0 >= r)
            .map(|q| q.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Direct six-loop convolution.
pub fn naive_conv(x: &Tensor, p: &LayerParams, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ws = p.weight.shape();
    let (o, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = p.bias.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((b * c + ic) * h + iy as usize) * w + ix as usize]
                                    as f64;
                                let wv = p.weight.data()[((oc * c + ic) * k + ky) * k + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::new(
        vec![n, o, oh, ow],
        out.into_iter().map(|v| v as f32).collect(),
    )
    .unwrap()
}

/// Largest feature value inside each quantised bin, by scanning every cell.
pub fn roi_pool_oracle(features: &Tensor, bbox: &BBox, n: usize, stride: usize) -> Vec<f32> {
    let s = features.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let st = stride as f64;
    let span = |lo: f64, hi: f64, len: usize| -> (usize, usize) {
        let a = ((lo / st).floor().max(0.0) as usize).min(len - 1);
        let b = ((hi / st).ceil() as usize).min(len).max(a + 1);
        (a, b)
    };
    let (x0, x1) = span(bbox.x_min, bbox.x_max, w);
    let (y0, y1) = span(bbox.y_min, bbox.y_max, h);
    let in_bin = |v: usize, start: usize, len: usize, i: usize| {
        let lo = start + (i * len) / n;
        let hi = start + (((i + 1) * len) as f64 / n as f64).ceil() as usize;
        v >= lo && v < hi.max(lo + 1)
    };
    let mut out = Vec::with_capacity(c * n * n);
    for ch in 0..c {
        for by in 0..n {
            for bx in 0..n {
                let mut m = f32::NEG_INFINITY;
                for y in 0..h {
                    for x in 0..w {
                        if in_bin(y, y0, y1 - y0, by) && in_bin(x, x0, x1 - x0, bx) {
                            m = m.max(features.data()[(ch * h + y) * w + x]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

/// Values in random order with pairwise gaps of at least `gap`, so small
/// perturbations never change which element is the maximum.
pub fn distinct_tensor(rng: &mut impl Rng, shape: &[usize], gap: f32) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * gap).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

/// Objective `sum(forward(x) * r)` evaluated in f64.
fn objective(spec: &LayerSpec, params: Option<&LayerParams>, x: &Tensor, r: &[f32]) -> f64 {
    let (y, _) = nn::forward(spec, params, x, Mode::Inference).unwrap();
    y.data()
        .iter()
        .zip(r)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Central differences of the objective for every element of `target`.
fn numeric(mut eval: impl FnMut(usize, f32) -> f64, len: usize, h: f32) -> Vec<f64> {
    (0..len)
        .map(|i| (eval(i, h) - eval(i, -h)) / (2.0 * h as f64))
        .collect()
}

/// Relative errors (input, weight, bias) between the analytic backward pass
/// and central differences with step `h`.
pub fn gradient_errors(
    spec: &LayerSpec,
    params: Option<&LayerParams>,
    x: &Tensor,
    r: &[f32],
    h: f32,
) -> (f64, f64, f64) {
    let (y, cache) = nn::forward(spec, params, x, Mode::Training).unwrap();
    let upstream = Tensor::new(y.shape().to_vec(), r.to_vec()).unwrap();
    let g = nn::backward(spec, params, &cache, &upstream).unwrap();
    let to64 = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>();

    let num_x = numeric(
        |i, d| {
            let mut xp = x.clone();
            xp.data_mut()[i] += d;
            objective(spec, params, &xp, r)
        },
        x.len(),
        h,
    );
    let ex = rel_err(&to64(&g.input), &num_x);
    let (mut ew, mut eb) = (0.0, 0.0);
    if let (Some(p), Some(gp)) = (params, g.params.as_ref()) {
        let num_w = numeric(
            |i, d| {
                let mut pp = p.clone();
                pp.weight.data_mut()[i] += d;
                objective(spec, Some(&pp), x, r)
            },
            p.weight.len(),
            h,
        );
        let num_b = numeric(
            |i, d| {
                let mut pp = p.clone();
                pp.bias.data_mut()[i] += d;
                objective(spec, Some(&pp), x, r)
            },
            p.bias.len(),
            h,
        );
        ew = rel_err(&to64(&gp.weight), &num_w);
        eb = rel_err(&to64(&gp.bias), &num_b);
    }
    (ex, ew, eb)
}

/// Outcome of tiling one synthetic mosaic and stitching its interior boxes.
pub struct RoundTrip {
    pub originals: usize,
    pub stitched: usize,
    pub worst_iou: f64,
    pub duplicates: usize,
    pub unmatched: usize,
}

/// Renders a `size x size` mosaic, cuts it into tiles, feeds every box that
/// lies entirely inside a tile back as a perfect tile-frame detection, and
/// stitches the result.
pub fn tiling_round_trip(size: usize, seed: u64, tile: usize, overlap: usize) -> RoundTrip {
    use seedling_core::data::{stitch_detections, tile_boxes, tile_image};
    use seedling_core::synth::{render_scene, SceneSpec};

    let layers = render_scene(&SceneSpec::default().with_size(size), seed).unwrap();
    let (tiles, index) = tile_image(&layers.image, "mosaic", tile, overlap).unwrap();
    for (img, origin) in tiles.iter().zip(&index.tiles) {
        assert_eq!(
            img.get_pixel(0, 0),
            layers.image.get_pixel(origin.x as u32, origin.y as u32)
        );
    }
    let per_tile_gt = tile_boxes(&layers.record, &index, 1.0);
    let per_tile: Vec<(String, Vec<ScoredBox>)> = per_tile_gt
        .iter()
        .map(|r| {
            let dets = r
                .boxes()
                .into_iter()
                .map(|b| ScoredBox::new(b, 1.0, 1))
                .collect();
            (r.image_id.clone(), dets)
        })
        .collect();
    let stitched = stitch_detections(&per_tile, &index, 0.5).unwrap();

    // interior boxes: fully contained in at least one tile
    let originals: Vec<BBox> = layers
        .record
        .boxes()
        .into_iter()
        .filter(|b| {
            index.tiles.iter().any(|t| {
                let (x, y, s) = (t.x as f64, t.y as f64, tile as f64);
                b.x_min >= x && b.y_min >= y && b.x_max <= x + s && b.y_max <= y + s
            })
        })
        .collect();
    let mut hits = vec![0usize; originals.len()];
    let mut worst = 1.0f64;
    let mut unmatched = 0;
    for s in &stitched {
        let best = originals
            .iter()
            .enumerate()
            .map(|(i, o)| (i, iou_oracle(o, &s.bbox)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match best {
            Some((i, v)) if v > 0.5 => {
                hits[i] += 1;
                worst = worst.min(v);
            }
            _ => unmatched += 1,
        }
    }
    let missing = hits.iter().filter(|&&h| h == 0).count();
    RoundTrip {
        originals: originals.len(),
        stitched: stitched.len(),
        worst_iou: if missing > 0 { 0.0 } else { worst },
        duplicates: hits.iter().map(|&h| h.saturating_sub(1)).sum(),
        unmatched,
    }
}

pub type Footprint = ([usize; 4], (f64, f64));
type Tally = ([usize; 4], (f64, f64, usize));

/// Bounding box of each instance label found by scanning the mask, along
/// with the pixel centroid.
pub fn mask_scan(mask: &[u32], width: usize, labels: usize) -> Vec<Option<Footprint>> {
    let mut out: Vec<Option<Tally>> = vec![None; labels];
    for (i, &l) in mask.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % width, i / width);
        let e = out[l as usize - 1].get_or_insert(([x, y, x + 1, y + 1], (0.0, 0.0, 0)));
        e.0 = [
            e.0[0].min(x),
            e.0[1].min(y),
            e.0[2].max(x + 1),
            e.0[3].max(y + 1),
        ];
        e.1 .0 += x as f64 + 0.5;
        e.1 .1 += y as f64 + 0.5;
        e.1 .2 += 1;
    }
    out.into_iter()
        .map(|o| o.map(|(b, (sx, sy, n))| (b, (sx / n as f64, sy / n as f64))))
        .collect()
}

/// Random labelled batch with probabilities and deltas.
pub fn random_batch(
    r: &mut impl Rng,
    n: usize,
) -> (AnchorTargetAssignment, Vec<f64>, Vec<BoxDelta>) {
    let mut labels = Vec::with_capacity(n);
    let mut matches = Vec::new();
    for i in 0..n {
        let l = match r.random_range(0..3) {
            0 => AnchorLabel::Positive,
            1 => AnchorLabel::Negative,
            _ => AnchorLabel::Ignore,
        };
        if l == AnchorLabel::Positive {
            matches.push(AnchorMatch {
                anchor: i,
                gt: 0,
                target: BoxDelta::from_array(std::array::from_fn(|_| r.random_range(-2.0..2.0))),
            });
        }
        labels.push(l);
    }
    labels[0] = AnchorLabel::Negative;
    matches.retain(|m| m.anchor != 0);
    let p = (0..n).map(|_| r.random_range(0.01..0.99)).collect();
    let d = (0..n)
        .map(|_| BoxDelta::from_array(std::array::from_fn(|_| r.random_range(-2.0..2.0))))
        .collect();
    (AnchorTargetAssignment { labels, matches }, p, d)
}

/// Random detections scattered near random ground truths, with quantised
/// scores so that ties occur.
pub fn random_instance(r: &mut impl Rng) -> Vec<(Vec<ScoredBox>, Vec<BBox>)> {
    (0..r.random_range(1..6))
        .map(|_| {
            let gts: Vec<BBox> = (0..r.random_range(0..12))
                .map(|_| random_box(r, 200.0, 30.0))
                .collect();
            let mut dets = Vec::new();
            for g in &gts {
                for _ in 0..r.random_range(0..3) {
                    let dx = r.random_range(-6.0..6.0);
                    let dy = r.random_range(-6.0..6.0);
                    let score = (r.random_range(0..20) as f64) / 20.0;
                    dets.push(ScoredBox::new(g.translate(dx, dy), score, 1));
                }
            }
            for _ in 0..r.random_range(0..8) {
                dets.push(ScoredBox::new(random_box(r, 200.0, 30.0), r.random(), 1));
            }
            (dets, gts)
        })
        .collect()
}

mod common;

use common::{iou_oracle, random_batch, random_box, random_tensor, rng, roi_pool_oracle};
use proptest::prelude::*;
use rand::Rng;
use seedling_core::detector::{
    label_anchors, roi_footprint, roi_pool, rpn_loss, sample_anchor_targets, select_proposals,
    AnchorLabel, AnchorMatch, AnchorTargetAssignment, DetectorConfig, Proposal, ProposalParams,
    RpnLossWeights, RpnPredictions,
};
use seedling_core::geometry::{encode, generate_anchors, AnchorGridSpec, BBox, BoxDelta};
use seedling_core::nn::Tensor;

fn single_positive(target: BoxDelta) -> AnchorTargetAssignment {
    AnchorTargetAssignment {
        labels: vec![AnchorLabel::Positive],
        matches: vec![AnchorMatch {
            anchor: 0,
            gt: 0,
            target,
        }],
    }
}

const UNIT: RpnLossWeights = RpnLossWeights {
    lambda: 1.0,
    n_cls: 1.0,
    n_reg: 1.0,
};

fn loss_of(p: f64, t: BoxDelta, t_star: BoxDelta) -> f64 {
    rpn_loss(
        RpnPredictions {
            objectness: &[p],
            deltas: &[t],
        },
        &single_positive(t_star),
        UNIT,
    )
    .unwrap()
    .total
}

#[test]
fn rpn_loss_perfect_prediction_is_zero() {
    let t = BoxDelta::new(0.1, -0.2, 0.3, 0.0);
    assert!(loss_of(1.0, t, t).abs() < 1e-6);
}

#[test]
#[allow(clippy::approx_constant)]
fn rpn_loss_half_probability() {
    let t = BoxDelta::new(0.0, 0.0, 0.0, 0.0);
    assert!((loss_of(0.5, t, t) - 0.693147).abs() < 1e-6);
}

#[test]
fn rpn_loss_smooth_l1_term() {
    let t = BoxDelta::new(0.5, 0.0, 0.0, 0.0);
    let zero = BoxDelta::new(0.0, 0.0, 0.0, 0.0);
    assert!((loss_of(1.0, t, zero) - 0.125).abs() < 1e-6);
}

#[test]
fn rpn_loss_without_sampled_anchors_is_error() {
    let a = AnchorTargetAssignment {
        labels: vec![AnchorLabel::Ignore; 3],
        matches: vec![],
    };
    let d = [BoxDelta::new(0.0, 0.0, 0.0, 0.0); 3];
    assert!(rpn_loss(
        RpnPredictions {
            objectness: &[0.5; 3],
            deltas: &d
        },
        &a,
        UNIT
    )
    .is_err());
}

#[test]
fn rpn_loss_with_zero_lambda_is_pure_classification() {
    let mut r = rng(3);
    for _ in 0..50 {
        let (a, p, d) = random_batch(&mut r, 40);
        let w = RpnLossWeights {
            lambda: 0.0,
            n_cls: 256.0,
            n_reg: 57.0,
        };
        let out = rpn_loss(
            RpnPredictions {
                objectness: &p,
                deltas: &d,
            },
            &a,
            w,
        )
        .unwrap();
        let expected: f64 = a
            .sampled()
            .map(|i| {
                if a.labels[i] == AnchorLabel::Positive {
                    -p[i].ln()
                } else {
                    -(1.0 - p[i]).ln()
                }
            })
            .sum::<f64>()
            / 256.0;
        assert!((out.total - expected).abs() < 1e-9);
        assert_eq!(out.regression, 0.0);
        assert!(out.grad_deltas.iter().all(|g| g == &[0.0; 4]));
    }
}

#[test]
fn rpn_loss_with_perfect_classification_is_pure_regression() {
    let mut r = rng(4);
    for _ in 0..50 {
        let (a, _, d) = random_batch(&mut r, 40);
        let p: Vec<f64> = a
            .labels
            .iter()
            .map(|l| {
                if *l == AnchorLabel::Positive {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let w = RpnLossWeights {
            lambda: 10.0,
            n_cls: 256.0,
            n_reg: 100.0,
        };
        let out = rpn_loss(
            RpnPredictions {
                objectness: &p,
                deltas: &d,
            },
            &a,
            w,
        )
        .unwrap();
        let mut reg = 0.0;
        for m in &a.matches {
            for (t, ts) in d[m.anchor].to_array().iter().zip(m.target.to_array()) {
                let x: f64 = (t - ts).abs();
                reg += if x < 1.0 { 0.5 * x * x } else { x - 0.5 };
            }
        }
        let expected = 10.0 * reg / 100.0;
        assert!(out.classification < 1e-5, "{}", out.classification);
        assert!((out.total - expected).abs() < 1e-5);
        assert!((out.regression - expected).abs() < 1e-12);
    }
}

#[test]
fn negatives_receive_no_regression_gradient() {
    let mut r = rng(5);
    let (a, p, d) = random_batch(&mut r, 64);
    let out = rpn_loss(
        RpnPredictions {
            objectness: &p,
            deltas: &d,
        },
        &a,
        RpnLossWeights {
            lambda: 10.0,
            n_cls: 256.0,
            n_reg: 64.0,
        },
    )
    .unwrap();
    for (i, l) in a.labels.iter().enumerate() {
        if *l != AnchorLabel::Positive {
            assert_eq!(out.grad_deltas[i], [0.0; 4]);
        }
        if *l == AnchorLabel::Ignore {
            assert_eq!(out.grad_logits[i], 0.0);
        }
    }
}

fn small_config() -> DetectorConfig {
    DetectorConfig {
        input_size: 128,
        ..DetectorConfig::default()
    }
}

fn small_anchors(cfg: &DetectorConfig) -> Vec<BBox> {
    generate_anchors(&cfg.anchor_spec()).unwrap()
}

#[test]
fn ground_truth_between_anchor_centres_keeps_its_best_anchor() {
    let cfg = small_config();
    let anchors = small_anchors(&cfg);
    // a thin box that no anchor covers at 0.7
    let gt = BBox::new(30.0, 40.0, 34.0, 70.0).unwrap();
    let labelled = label_anchors(&anchors, &[gt], &cfg).unwrap();
    let best = anchors
        .iter()
        .map(|a| iou_oracle(a, &gt))
        .fold(0.0, f64::max);
    assert!(best < cfg.rpn_positive_iou);
    for (i, a) in anchors.iter().enumerate() {
        if iou_oracle(a, &gt) == best {
            assert_eq!(labelled.labels[i], AnchorLabel::Positive);
            assert_eq!(labelled.matched_gt(i), Some(0));
            assert_eq!(labelled.target(i), Some(encode(a, &gt).unwrap()));
        }
    }
}

#[test]
fn empty_ground_truth_samples_only_negatives() {
    let cfg = small_config();
    let anchors = small_anchors(&cfg);
    let labelled = label_anchors(&anchors, &[], &cfg).unwrap();
    let sampled = sample_anchor_targets(&labelled, &cfg, &mut rng(0));
    assert_eq!(sampled.count(AnchorLabel::Positive), 0);
    assert_eq!(sampled.count(AnchorLabel::Negative), cfg.rpn_batch_size);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn labelling_matches_exhaustive_scan(seed in any::<u64>(), n_gt in 1usize..12) {
        let cfg = small_config();
        let anchors = small_anchors(&cfg);
        let mut r = rng(seed);
        let gts: Vec<BBox> = (0..n_gt).map(|_| random_box(&mut r, 128.0, 60.0)).collect();
        let labelled = label_anchors(&anchors, &gts, &cfg).unwrap();
        let ious: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| iou_oracle(a, g)).collect()).collect();
        let gt_best: Vec<f64> = (0..n_gt).map(|g| ious.iter().map(|row| row[g]).fold(0.0, f64::max)).collect();
        for (i, row) in ious.iter().enumerate() {
            let max = row.iter().cloned().fold(0.0, f64::max);
            let argmax_of_some = (0..n_gt).any(|g| gt_best[g] > 0.0 && row[g] == gt_best[g]);
            let expected = if max >= cfg.rpn_positive_iou || argmax_of_some {
                AnchorLabel::Positive
            } else if max < cfg.rpn_negative_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            };
            prop_assert_eq!(labelled.labels[i], expected, "anchor {}", i);
            if expected == AnchorLabel::Positive {
                let g = labelled.matched_gt(i).unwrap();
                // regression targets always use the anchor's own best overlap
                prop_assert_eq!(row[g], max);
            }
        }
        // every ground truth with any overlap owns at least one positive
        for g in 0..n_gt {
            if gt_best[g] > 0.0 {
                prop_assert!((0..anchors.len()).any(|i| labelled.labels[i] == AnchorLabel::Positive && ious[i][g] == gt_best[g]));
            }
        }
        let sampled = sample_anchor_targets(&labelled, &cfg, &mut r);
        let pos = sampled.count(AnchorLabel::Positive);
        let neg = sampled.count(AnchorLabel::Negative);
        prop_assert!(pos <= cfg.rpn_batch_size / 2);
        prop_assert!(pos + neg <= cfg.rpn_batch_size);
        prop_assert_eq!(sampled.matches.len(), pos);
        for m in &sampled.matches {
            prop_assert_eq!(sampled.labels[m.anchor], AnchorLabel::Positive);
        }
    }
}

fn params(post: usize) -> ProposalParams {
    ProposalParams {
        pre_nms_top_n: 2000,
        post_nms_top_n: post,
        nms_iou: 0.7,
        image_size: 128.0,
    }
}

#[test]
fn proposal_count_is_capped() {
    let cfg = small_config();
    let anchors = small_anchors(&cfg);
    let mut r = rng(9);
    let scores: Vec<f64> = (0..anchors.len()).map(|_| r.random()).collect();
    let deltas: Vec<BoxDelta> = (0..anchors.len())
        .map(|_| BoxDelta::from_array(std::array::from_fn(|_| r.random_range(-0.5..0.5))))
        .collect();
    for post in [1, 10, 300] {
        let p = select_proposals(&anchors, &scores, &deltas, &params(post)).unwrap();
        assert!(p.len() <= post);
        assert!(!p.is_empty());
        for w in p.windows(2) {
            assert!(w[0].objectness >= w[1].objectness);
        }
        for (i, a) in p.iter().enumerate() {
            for b in &p[i + 1..] {
                assert!(iou_oracle(&a.bbox, &b.bbox) <= 0.7);
            }
            assert!(a.bbox.x_min >= 0.0 && a.bbox.x_max <= 128.0);
        }
    }
}

#[test]
fn equal_objectness_breaks_ties_by_anchor_index() {
    let cfg = small_config();
    let anchors = small_anchors(&cfg);
    let scores = vec![0.5; anchors.len()];
    let deltas = vec![BoxDelta::new(0.0, 0.0, 0.0, 0.0); anchors.len()];
    let a = select_proposals(&anchors, &scores, &deltas, &params(300)).unwrap();
    let b = select_proposals(&anchors, &scores, &deltas, &params(300)).unwrap();
    assert_eq!(a, b);
    // the first anchor survives clipping, so it is picked first
    let first = anchors
        .iter()
        .find_map(|x| seedling_core::geometry::clip_to_bounds(x, 128.0, 128.0))
        .unwrap();
    let (p, q) = (a[0].bbox, first);
    let d = [
        p.x_min - q.x_min,
        p.y_min - q.y_min,
        p.x_max - q.x_max,
        p.y_max - q.y_max,
    ]
    .iter()
    .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(d < 1e-9, "{:?} vs {first:?}", a[0].bbox);
}

#[test]
fn roi_pool_matches_nested_loop_oracle() {
    let mut r = rng(11);
    for case in 0..100 {
        let c = r.random_range(1..4);
        let h = r.random_range(3..14);
        let w = r.random_range(3..14);
        let stride = [1, 4, 8][case % 3];
        let fm = random_tensor(&mut r, &[1, c, h, w]);
        let extent = (h.min(w) * stride) as f64;
        let bbox = random_box(&mut r, extent, extent * 0.9);
        let n = r.random_range(1..6);
        let pooled = roi_pool(
            &fm,
            &Proposal {
                bbox,
                objectness: 1.0,
            },
            n,
            stride,
        )
        .unwrap();
        assert_eq!(
            pooled.values,
            roi_pool_oracle(&fm, &bbox, n, stride),
            "case {case}"
        );
        for (v, &src) in pooled.values.iter().zip(&pooled.argmax) {
            assert_eq!(*v, fm.data()[src as usize]);
        }
    }
}

#[test]
fn single_cell_proposal_replicates_the_cell() {
    let mut fm = Tensor::zeros(&[1, 2, 6, 6]);
    fm.data_mut()[2 * 6 + 3] = 7.0;
    fm.data_mut()[36 + 2 * 6 + 3] = -4.0;
    let bbox = BBox::new(24.5, 16.2, 25.0, 16.4).unwrap();
    assert_eq!(roi_footprint(&bbox, 8, 6, 6), (2, 3, 3, 4));
    let pooled = roi_pool(
        &fm,
        &Proposal {
            bbox,
            objectness: 1.0,
        },
        4,
        8,
    )
    .unwrap();
    assert_eq!(&pooled.values[..16], &[7.0; 16]);
    assert_eq!(&pooled.values[16..], &[-4.0; 16]);
}

#[test]
fn anchor_grid_matches_declared_length() {
    let spec = AnchorGridSpec::seedling_default(5, 7, 8);
    let anchors = generate_anchors(&spec).unwrap();
    assert_eq!(anchors.len(), spec.len());
    assert_eq!(anchors.len(), 5 * 7 * 9);
}

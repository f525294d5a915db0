//! SoftNMS properties: scores only decay, segments are untouched, disjoint
//! inputs pass through, exact duplicate rescoring, and the hard-NMS limit.

use proptest::prelude::*;
use talkit_core::decode::{cap_predictions, soft_nms};
use talkit_core::reference::hard_nms_any_overlap;
use talkit_core::segment::detection_order;
use talkit_core::{DecodeConfig, Detection, Segment};

fn detection() -> impl Strategy<Value = Detection> {
    (0usize..3, 1u32..1000, 0u32..50, 1u32..20).prop_map(|(label, score, s, l)| {
        Detection::new(label, score as f64 / 1000.0, Segment::new(s as f64, (s + l) as f64).unwrap()).unwrap()
    })
}

fn cfg(sigma: f64) -> DecodeConfig {
    DecodeConfig {
        softnms_sigma: sigma,
        ..Default::default()
    }
}

/// Match each output to the input it came from (same label and segment,
/// highest original score not yet taken).
fn originals(input: &[Detection], output: &[Detection]) -> Option<Vec<Detection>> {
    let mut pool = input.to_vec();
    pool.sort_by(detection_order);
    let mut taken = vec![false; pool.len()];
    let mut out = Vec::new();
    for d in output {
        let j = (0..pool.len()).find(|&j| {
            !taken[j] && pool[j].label_id == d.label_id && pool[j].segment == d.segment && pool[j].score >= d.score
        })?;
        taken[j] = true;
        out.push(pool[j]);
    }
    Some(out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn scores_never_increase_and_segments_fixed(
        dets in prop::collection::vec(detection(), 0..40),
        sigma in 0.05f64..2.0,
    ) {
        let out = soft_nms(&dets, &cfg(sigma));
        prop_assert!(out.len() <= dets.len());
        let orig = originals(&dets, &out);
        prop_assert!(orig.is_some(), "an output does not trace back to an input");
        for (o, i) in out.iter().zip(orig.unwrap()) {
            prop_assert!(o.score <= i.score);
            prop_assert_eq!(o.segment, i.segment);
            prop_assert!(o.score >= DecodeConfig::default().softnms_floor);
        }
        prop_assert!(out.windows(2).all(|w| detection_order(&w[0], &w[1]).is_le()));
    }

    #[test]
    fn disjoint_detections_unchanged(
        scores in prop::collection::vec(1u32..1000, 1..20),
        label in 0usize..3,
    ) {
        let dets: Vec<Detection> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Detection::new(label, s as f64 / 1000.0, Segment::new(3.0 * i as f64, 3.0 * i as f64 + 2.0).unwrap()).unwrap())
            .collect();
        let mut want = dets.clone();
        want.sort_by(detection_order);
        prop_assert_eq!(soft_nms(&dets, &cfg(0.9)), want);
    }

    #[test]
    fn tiny_sigma_is_hard_nms(dets in prop::collection::vec(detection(), 0..40)) {
        // integer endpoints: any overlap has tIoU >= 1/69, so the decay
        // exp(-iou^2 / 1e-6) underflows the floor
        prop_assert_eq!(soft_nms(&dets, &cfg(1e-6)), hard_nms_any_overlap(&dets));
    }

    #[test]
    fn cap_keeps_top_scores(dets in prop::collection::vec(detection(), 0..60), cap in 1usize..30) {
        let out = cap_predictions(dets.clone(), cap);
        prop_assert_eq!(out.len(), dets.len().min(cap));
        let mut sorted = dets;
        sorted.sort_by(detection_order);
        prop_assert_eq!(&out[..], &sorted[..out.len()]);
    }
}

#[test]
fn identical_duplicate_hand_value() {
    let seg = Segment::new(1.0, 4.0).unwrap();
    for sigma in [0.3, 0.9, 1.7] {
        let dets = vec![
            Detection::new(0, 0.9, seg).unwrap(),
            Detection::new(0, 0.8, seg).unwrap(),
        ];
        let out = soft_nms(&dets, &cfg(sigma));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-1.0 / sigma).exp()).abs() < 1e-9);
    }
}

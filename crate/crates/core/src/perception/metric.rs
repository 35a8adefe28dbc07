//! Objectness loss, connected-component box decoding and average precision.

use std::collections::VecDeque;

use super::truth::{BoxCells, DetectionTruth};
use crate::error::Result;
use crate::tensorcore::{sigmoid, Tensor};

/// Default IoU thresholds.
pub const IOU_THRESHOLDS: [f64; 2] = [0.3, 0.5];

/// Number of score thresholds swept when decoding boxes.
pub const SCORE_STEPS: usize = 50;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy with logits; positives weighted by
/// `pos_weight`. Returns the loss and its gradient.
pub fn detection_loss(logits: &Tensor, target: &Tensor, pos_weight: f64) -> Result<(f64, Tensor)> {
    logits.same_shape(target, "detection_loss")?;
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros_like(logits);
    for ((g, &z), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(target.data()) {
        // skip zero-weight terms so saturated logits do not produce 0 * inf
        if y > 0.0 {
            total += pos_weight * y * softplus(-z);
        }
        if y < 1.0 {
            total += (1.0 - y) * softplus(z);
        }
        let p = sigmoid(z);
        *g = (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / n;
    }
    Ok((total / n, grad))
}

/// A decoded detection: world-cell box and mean probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoxCells,
    pub score: f64,
}

/// 4-connected components of `prob >= threshold` on a `1 x H x W` map,
/// as boxes scaled by `stride` into world cells. Components are listed in
/// raster order of their first cell.
pub fn components(prob: &Tensor, threshold: f64, stride: usize) -> Result<Vec<Detection>> {
    let (_, h, w) = prob.dims3()?;
    let p = prob.channel(0);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || p[start] < threshold {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut r0, mut r1, mut c0, mut c1) = (h, 0, w, 0);
        let (mut sum, mut count) = (0.0, 0usize);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            sum += p[i];
            count += 1;
            let mut visit = |j: usize| {
                if !seen[j] && p[j] >= threshold {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        let s = stride as i64;
        let bbox = BoxCells::new(c0 as i64 * s, r0 as i64 * s, (c1 - c0 + 1) as i64 * s, (r1 - r0 + 1) as i64 * s);
        out.push(Detection { bbox, score: sum / count as f64 });
    }
    Ok(out)
}

/// True positives from greedy matching: detections in descending score,
/// each taking the unmatched truth box of highest IoU if it reaches
/// `iou_threshold`.
pub fn match_count(dets: &[Detection], truth: &[BoxCells], iou_threshold: f64) -> usize {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; truth.len()];
    let mut tp = 0;
    for i in order {
        let best = truth
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, t)| (j, dets[i].bbox.iou(t)))
            .filter(|&(_, iou)| iou >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
    }
    tp
}

/// All-point interpolated area under a set of `(recall, precision)` points.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        if r <= prev_recall {
            continue;
        }
        let envelope = pts[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev_recall) * envelope;
        prev_recall = r;
    }
    ap
}

/// AP per IoU threshold for one frame, or `None` when there is no truth
/// (the frame is skipped).
pub fn detection_metric(
    logits: &Tensor,
    truth: &DetectionTruth,
    stride: usize,
    iou_thresholds: &[f64],
) -> Result<Option<Vec<f64>>> {
    if truth.boxes.is_empty() {
        return Ok(None);
    }
    let prob = logits.map(sigmoid);
    let n_truth = truth.boxes.len() as f64;
    let mut points = vec![Vec::new(); iou_thresholds.len()];
    for k in 1..=SCORE_STEPS {
        let t = k as f64 / (SCORE_STEPS + 1) as f64;
        let dets = components(&prob, t, stride)?;
        if dets.is_empty() {
            continue;
        }
        for (pts, &iou) in points.iter_mut().zip(iou_thresholds) {
            let tp = match_count(&dets, &truth.boxes, iou) as f64;
            pts.push((tp / n_truth, tp / dets.len() as f64));
        }
    }
    Ok(Some(points.iter().map(|p| average_precision(p)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::gradcheck::check_function;
    use crate::tensorcore::seeded_rng;

    fn logits_for(truth: &DetectionTruth, stride: usize) -> Tensor {
        truth.mask(stride).unwrap().map(|m| if m > 0.0 { 8.0 } else { -8.0 })
    }

    #[test]
    fn loss_limits() {
        let y = Tensor::new(vec![1, 1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let z = y.map(|v| if v > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY });
        let z = Tensor::from_parts(vec![1, 1, 4], z.into_data()).unwrap();
        assert_eq!(detection_loss(&z, &y, 1.0).unwrap().0, 0.0);
        let zero = Tensor::zeros(&[1, 1, 4]);
        assert!((detection_loss(&zero, &y, 1.0).unwrap().0 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_oracle_and_gradient() {
        let mut rng = seeded_rng(1);
        let z = Tensor::randn(&[1, 5, 6], &mut rng).scale(3.0);
        let y = Tensor::from_fn(&[1, 5, 6], |i| (i % 3 == 0) as u8 as f64);
        let pw = 2.5;
        let mut oracle = 0.0;
        for i in 0..30 {
            let p = 1.0 / (1.0 + (-z.data()[i]).exp());
            let t = y.data()[i];
            oracle -= pw * t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        oracle /= 30.0;
        let (l, g) = detection_loss(&z, &y, pw).unwrap();
        assert!((l - oracle).abs() <= 1e-12, "{l} vs {oracle}");
        let err = check_function(|t| Ok(detection_loss(t, &y, pw)?.0), &z, &g, 30, &mut rng).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let truth = DetectionTruth::new(16, 16, vec![BoxCells::new(2, 2, 4, 4), BoxCells::new(10, 8, 4, 6)]).unwrap();
        let ap = detection_metric(&logits_for(&truth, 2), &truth, 2, &IOU_THRESHOLDS).unwrap().unwrap();
        assert_eq!(ap, vec![1.0, 1.0]);
    }

    #[test]
    fn no_components_score_zero() {
        let truth = DetectionTruth::new(16, 16, vec![BoxCells::new(2, 2, 4, 4)]).unwrap();
        let z = Tensor::full(&[1, 8, 8], -10.0);
        assert_eq!(detection_metric(&z, &truth, 2, &IOU_THRESHOLDS).unwrap().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn half_of_the_truth_found() {
        let found = BoxCells::new(2, 2, 4, 4);
        let truth = DetectionTruth::new(16, 16, vec![found, BoxCells::new(10, 8, 4, 6)]).unwrap();
        let only = DetectionTruth::new(16, 16, vec![found]).unwrap();
        let ap = detection_metric(&logits_for(&only, 2), &truth, 2, &IOU_THRESHOLDS).unwrap().unwrap();
        assert_eq!(ap, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_truth_is_skipped() {
        let truth = DetectionTruth::new(8, 8, vec![]).unwrap();
        assert_eq!(detection_metric(&Tensor::zeros(&[1, 4, 4]), &truth, 2, &IOU_THRESHOLDS).unwrap(), None);
    }

    #[test]
    fn components_are_four_connected() {
        let p = Tensor::new(vec![1, 3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let d = components(&p, 0.5, 1).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].bbox, BoxCells::new(0, 0, 1, 1));
        assert_eq!(d[1].bbox, BoxCells::new(1, 1, 2, 2));
    }

    #[test]
    fn ap_interpolation_by_hand() {
        // envelope: recall 0.5 at precision 1.0, recall 1.0 at precision 0.5
        let ap = average_precision(&[(0.5, 1.0), (1.0, 0.5), (0.5, 0.6)]);
        assert!((ap - 0.75).abs() < 1e-15);
        assert_eq!(average_precision(&[]), 0.0);
    }
}

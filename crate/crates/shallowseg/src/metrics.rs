//! Evaluation harness: Dice, IoU, threshold curves, size statistics.

use serde::{Deserialize, Serialize};

use crate::colorimetry::ImageRGB;
use crate::dataio::Sample;
use crate::pcs::{self, LogitMap};

/// Strictly binary H×W ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGT {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskGT {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width, "mask length mismatch");
        assert!(data.iter().all(|&v| v <= 1), "mask must be binary");
        Self { height, width, data }
    }

    pub fn foreground_fraction(&self) -> f64 {
        let fg: usize = self.data.iter().map(|&v| v as usize).sum();
        fg as f64 / self.data.len() as f64
    }
}

/// Dice coefficient 2|P∩G|/(|P|+|G|); 1 when both masks are empty.
pub fn dice(pred: &[u8], gt: &[u8]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "dice: shape mismatch");
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (&a, &b) in pred.iter().zip(gt) {
        inter += (a & b) as usize;
        p += a as usize;
        g += b as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(pred: &[u8], gt: &[u8]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "iou: shape mismatch");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in pred.iter().zip(gt) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Soft Dice on probabilities, (2Σpg + ε)/(Σp + Σg + ε) with a tiny ε so the
/// both-empty case scores 1.
pub fn soft_dice(prob: &[f64], gt: &[u8]) -> f64 {
    assert_eq!(prob.len(), gt.len(), "soft_dice: shape mismatch");
    let eps = 1e-12;
    let mut s_pg = 0.0;
    let mut s_p = 0.0;
    let mut s_g = 0.0;
    for (&p, &g) in prob.iter().zip(gt) {
        s_pg += p * f64::from(g);
        s_p += p;
        s_g += f64::from(g);
    }
    (2.0 * s_pg + eps) / (s_p + s_g + eps)
}

/// Binarize with strict '>' at the threshold.
pub fn binarize(prob: &[f64], threshold: f64) -> Vec<u8> {
    prob.iter().map(|&p| u8::from(p > threshold)).collect()
}

/// Dice after binarizing at each threshold.
pub fn dice_curve(prob: &[f64], gt: &[u8], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| (t, dice(&binarize(prob, t), gt)))
        .collect()
}

/// Default curve grid t = 0.00, 0.01, ..., 0.99.
pub fn default_thresholds() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 100.0).collect()
}

/// Foreground-area fractions binned into 10 equal bins on [0,1], normalized
/// to fractions of the dataset.
pub fn size_histogram<'a, I: IntoIterator<Item = &'a MaskGT>>(masks: I) -> [f64; 10] {
    let mut counts = [0usize; 10];
    let mut total = 0usize;
    for m in masks {
        let frac = m.foreground_fraction();
        let bin = ((frac * 10.0) as usize).min(9);
        counts[bin] += 1;
        total += 1;
    }
    let mut out = [0.0; 10];
    if total > 0 {
        for (o, &c) in out.iter_mut().zip(&counts) {
            *o = c as f64 / total as f64;
        }
    }
    out
}

/// Anything that maps an image to a per-pixel logit map at the image's own
/// resolution.
pub trait Predictor {
    fn predict_logits(&self, image: &ImageRGB) -> Result<LogitMap, String>;
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PerImageScore {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub soft_dice: f64,
}

/// Per-dataset metric record.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub schema_version: u32,
    pub dataset_id: String,
    pub pcs: bool,
    pub threshold: f64,
    pub per_image: Vec<PerImageScore>,
    pub m_dice: f64,
    pub m_iou: f64,
    pub m_soft_dice: f64,
    /// (threshold, mean dice) pairs averaged over images.
    pub curve: Vec<(f64, f64)>,
    /// Best mean dice over the threshold grid, and where it occurs.
    pub best_threshold: f64,
    pub m_dice_best_threshold: f64,
    pub size_histogram: [f64; 10],
    /// Per-item failures (dimension mismatches, predictor errors).
    pub errors: Vec<String>,
}

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Run a predictor over a dataset: hard dice/iou at threshold 0.5, soft dice,
/// mean curve over the default grid, size histogram. Items that fail are
/// reported in `errors` and skipped.
pub fn evaluate<P: Predictor>(
    samples: &[Sample],
    model: &P,
    pcs_on: bool,
    dataset_id: &str,
) -> EvalReport {
    let threshold = 0.5;
    let grid = default_thresholds();
    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    let mut curve_acc = vec![0.0f64; grid.len()];
    let mut masks = Vec::new();
    for s in samples {
        masks.push(&s.mask);
        let logits = match model.predict_logits(&s.image) {
            Ok(l) => l,
            Err(e) => {
                errors.push(format!("{}: {}", s.id, e));
                continue;
            }
        };
        if logits.height != s.mask.height || logits.width != s.mask.width {
            errors.push(format!(
                "{}: prediction {}x{} does not match mask {}x{}",
                s.id, logits.height, logits.width, s.mask.height, s.mask.width
            ));
            continue;
        }
        let logits = if pcs_on { pcs::correct(&logits) } else { logits };
        let prob = pcs::to_probability(&logits);
        let pred = binarize(&prob, threshold);
        per_image.push(PerImageScore {
            id: s.id.clone(),
            dice: dice(&pred, &s.mask.data),
            iou: iou(&pred, &s.mask.data),
            soft_dice: soft_dice(&prob, &s.mask.data),
        });
        for (acc, &(_, d)) in curve_acc.iter_mut().zip(dice_curve(&prob, &s.mask.data, &grid).iter())
        {
            *acc += d;
        }
    }
    let n = per_image.len().max(1) as f64;
    let curve: Vec<(f64, f64)> = grid.iter().zip(&curve_acc).map(|(&t, &a)| (t, a / n)).collect();
    let (best_threshold, m_dice_best_threshold) = curve
        .iter()
        .copied()
        .fold((threshold, f64::NEG_INFINITY), |acc, (t, d)| if d > acc.1 { (t, d) } else { acc });
    EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        dataset_id: dataset_id.to_string(),
        pcs: pcs_on,
        threshold,
        m_dice: per_image.iter().map(|s| s.dice).sum::<f64>() / n,
        m_iou: per_image.iter().map(|s| s.iou).sum::<f64>() / n,
        m_soft_dice: per_image.iter().map(|s| s.soft_dice).sum::<f64>() / n,
        per_image,
        curve,
        best_threshold,
        m_dice_best_threshold,
        size_histogram: size_histogram(masks),
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dice_perfect_and_disjoint() {
        assert_eq!(dice(&[1, 1, 0, 0], &[1, 1, 0, 0]), 1.0);
        assert_eq!(dice(&[1, 0, 0, 0], &[0, 1, 0, 0]), 0.0);
    }

    #[test]
    fn dice_hand_count() {
        // |P|=|G|=4, overlap 2.
        let pred = [1, 1, 1, 1, 0, 0, 0, 0];
        let gt = [1, 1, 0, 0, 1, 1, 0, 0];
        assert_eq!(dice(&pred, &gt), 0.5);
    }

    #[test]
    fn both_empty_scores_one() {
        assert_eq!(dice(&[0, 0], &[0, 0]), 1.0);
        assert_eq!(iou(&[0, 0], &[0, 0]), 1.0);
    }

    #[test]
    fn iou_from_dice_identity() {
        let pred = [1, 1, 1, 1, 0, 0, 0, 0];
        let gt = [1, 1, 0, 0, 1, 1, 0, 0];
        let d = dice(&pred, &gt);
        let i = iou(&pred, &gt);
        assert!((i - d / (2.0 - d)).abs() < 1e-12);
        assert!((i - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dice_iou_symmetric_and_bounded() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a: Vec<u8> = (0..64).map(|_| u8::from(r.gen_bool(0.3))).collect();
            let b: Vec<u8> = (0..64).map(|_| u8::from(r.gen_bool(0.3))).collect();
            let d = dice(&a, &b);
            let i = iou(&a, &b);
            assert_eq!(d, dice(&b, &a));
            assert_eq!(i, iou(&b, &a));
            assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&i));
            assert!(i <= d + 1e-15);
            assert!((i - d / (2.0 - d)).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_of_exact_prediction() {
        let gt = [1u8, 0, 1, 0];
        let prob = [1.0, 0.0, 1.0, 0.0];
        let ts: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for (_, d) in dice_curve(&prob, &gt, &ts) {
            assert_eq!(d, 1.0);
        }
    }

    #[test]
    fn curve_steps_at_half_for_uniform_prob() {
        let gt = [1u8, 1, 0, 0];
        let prob = [0.5; 4];
        let c = dice_curve(&prob, &gt, &[0.49, 0.5, 0.51]);
        // p > t: all-ones prediction below 0.5, empty at and above.
        assert!((c[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c[1].1, 0.0); // strict '>' at the threshold
        assert_eq!(c[2].1, 0.0);
    }

    #[test]
    fn curve_matches_brute_force_recount() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let gt: Vec<u8> = (0..100).map(|_| u8::from(r.gen_bool(0.2))).collect();
        let prob: Vec<f64> = (0..100).map(|_| r.gen_range(0.0..1.0)).collect();
        let ts = default_thresholds();
        let fast = dice_curve(&prob, &gt, &ts);
        for &(t, d) in &fast {
            // Independent recount.
            let mut inter = 0usize;
            let mut p = 0usize;
            let mut g = 0usize;
            for (&pv, &gv) in prob.iter().zip(&gt) {
                let pb = usize::from(pv > t);
                p += pb;
                g += gv as usize;
                inter += pb * gv as usize;
            }
            let expect = if p + g == 0 { 1.0 } else { 2.0 * inter as f64 / (p + g) as f64 };
            assert_eq!(d, expect);
        }
    }

    #[test]
    fn histogram_all_empty() {
        let masks: Vec<MaskGT> = (0..4).map(|_| MaskGT::new(4, 4, vec![0; 16])).collect();
        let h = size_histogram(masks.iter());
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histogram_full_mask() {
        let m = MaskGT::new(2, 2, vec![1; 4]);
        let h = size_histogram(std::iter::once(&m));
        assert_eq!(h[9], 1.0);
    }

    #[test]
    fn histogram_known_areas() {
        // Fractions 0.25, 0.25, 0.5 over a 2x2 grid -> bins 2, 2, 5.
        let masks = [
            MaskGT::new(2, 2, vec![1, 0, 0, 0]),
            MaskGT::new(2, 2, vec![0, 1, 0, 0]),
            MaskGT::new(2, 2, vec![1, 1, 0, 0]),
        ];
        let h = size_histogram(masks.iter());
        assert!((h[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((h[5] - 1.0 / 3.0).abs() < 1e-12);
    }

    /// Emits fixed logit maps keyed by image size; the pixels are ignored.
    struct TableOracle {
        by_size: std::collections::HashMap<(usize, usize), Vec<f64>>,
    }

    impl Predictor for TableOracle {
        fn predict_logits(&self, image: &ImageRGB) -> Result<LogitMap, String> {
            let key = (image.height, image.width);
            match self.by_size.get(&key) {
                Some(l) => Ok(LogitMap::new(image.height, image.width, l.clone())),
                None => Err("no prediction for this size".to_string()),
            }
        }
    }

    fn sample_from_mask(id: &str, height: usize, width: usize, mask: Vec<u8>) -> Sample {
        Sample {
            image: ImageRGB::constant(width, height, [0.5, 0.5, 0.5]),
            mask: MaskGT::new(height, width, mask),
            id: id.to_string(),
        }
    }

    /// A predictor that reads the ground truth back out of a lookup is a
    /// perfect oracle; every mean score must be exactly 1.
    #[test]
    fn evaluate_perfect_oracle_scores_one() {
        let mask = vec![1u8, 0, 0, 1];
        let logits: Vec<f64> = mask.iter().map(|&m| if m == 1 { 10.0 } else { -10.0 }).collect();
        let samples = vec![sample_from_mask("a", 2, 2, mask)];
        let oracle = TableOracle {
            by_size: [((2, 2), logits)].into_iter().collect(),
        };
        let report = evaluate(&samples, &oracle, false, "unit");
        assert!((report.m_dice - 1.0).abs() < 1e-12);
        assert!((report.m_iou - 1.0).abs() < 1e-12);
        assert!(report.m_soft_dice > 0.999);
        assert!(report.errors.is_empty());
    }

    #[test]
    fn evaluate_means_match_hand_average() {
        // Image 1: pred {1,1,0,0} vs gt {1,0,0,0} -> dice 2/3.
        // Image 2 (3x1): pred {1,0,0} vs gt {1,0,0} -> dice 1.
        let s1 = sample_from_mask("a", 2, 2, vec![1, 0, 0, 0]);
        let s2 = sample_from_mask("b", 1, 3, vec![1, 0, 0]);
        let oracle = TableOracle {
            by_size: [
                ((2, 2), vec![5.0, 5.0, -5.0, -5.0]),
                ((1, 3), vec![5.0, -5.0, -5.0]),
            ]
            .into_iter()
            .collect(),
        };
        let report = evaluate(&[s1, s2], &oracle, false, "unit");
        assert!((report.m_dice - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(report.per_image.len(), 2);
    }

    /// The logit correction rescales within sign groups, so hard masks at the
    /// 0.5 threshold — and therefore hard dice/iou — are identical on and off.
    #[test]
    fn evaluate_pcs_preserves_hard_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mask: Vec<u8> = (0..16).map(|i| u8::from(i % 3 == 0)).collect();
        let samples = vec![sample_from_mask("a", 4, 4, mask)];
        let oracle = TableOracle {
            by_size: [((4, 4), logits)].into_iter().collect(),
        };
        let on = evaluate(&samples, &oracle, true, "unit");
        let off = evaluate(&samples, &oracle, false, "unit");
        assert_eq!(on.per_image[0].dice, off.per_image[0].dice);
        assert_eq!(on.per_image[0].iou, off.per_image[0].iou);
        // Soft scores are allowed to move.
        assert!(on.pcs && !off.pcs);
    }

    #[test]
    fn evaluate_skips_and_reports_broken_items() {
        let good = sample_from_mask("good", 2, 2, vec![1, 0, 0, 1]);
        let bad = sample_from_mask("bad", 5, 5, vec![0; 25]);
        let oracle = TableOracle {
            by_size: [((2, 2), vec![10.0, -10.0, -10.0, 10.0])].into_iter().collect(),
        };
        let report = evaluate(&[good, bad], &oracle, false, "unit");
        assert_eq!(report.per_image.len(), 1);
        assert_eq!(report.errors.len(), 1);
        assert!(report.errors[0].starts_with("bad:"));
        // The mean is over scored images only.
        assert!((report.m_dice - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips_through_json() {
        let samples = vec![sample_from_mask("a", 2, 2, vec![1, 0, 0, 0])];
        let oracle = TableOracle {
            by_size: [((2, 2), vec![1.0, -1.0, 0.5, -2.0])].into_iter().collect(),
        };
        let report = evaluate(&samples, &oracle, true, "unit");
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        // Serializing twice yields identical bytes.
        assert_eq!(json, serde_json::to_string_pretty(&back).unwrap());
    }
}

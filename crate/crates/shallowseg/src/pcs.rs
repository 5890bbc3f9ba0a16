//! Probability correction: inference-time logit renormalization.
//!
//! Positive logits are divided by the fraction of positive pixels, negative
//! logits by the fraction of the rest. Applied per image, only at inference.

/// H×W map of pre-sigmoid predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMap {
    pub height: usize,
    pub width: usize,
    pub logits: Vec<f64>,
}

/// Occupancy rates of the two logit groups. `rate_p + rate_n == 1`; a zero
/// logit counts as negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcsRates {
    pub rate_p: f64,
    pub rate_n: f64,
}

impl LogitMap {
    pub fn new(height: usize, width: usize, logits: Vec<f64>) -> Self {
        assert!(height > 0 && width > 0, "empty logit map");
        assert_eq!(logits.len(), height * width, "logit length mismatch");
        assert!(logits.iter().all(|v| v.is_finite()), "logits must be finite");
        Self { height, width, logits }
    }
}

/// Fraction of strictly positive logits and its complement.
pub fn compute_rates(m: &LogitMap) -> PcsRates {
    let n = m.logits.len();
    let pos = m.logits.iter().filter(|&&v| v > 0.0).count();
    let rate_p = pos as f64 / n as f64;
    PcsRates { rate_p, rate_n: 1.0 - rate_p }
}

/// Divide each logit by the occupancy rate of its group. Rates are computed
/// once from the input; reapplying `correct` is not idempotent in general.
pub fn correct(m: &LogitMap) -> LogitMap {
    let rates = compute_rates(m);
    let logits = m
        .logits
        .iter()
        .map(|&v| {
            if v > 0.0 {
                // rate_p > 0 whenever a positive logit exists.
                v / rates.rate_p
            } else if v < 0.0 {
                v / rates.rate_n
            } else {
                0.0
            }
        })
        .collect();
    LogitMap { height: m.height, width: m.width, logits }
}

/// Elementwise stable sigmoid of the logit map.
pub fn to_probability(m: &LogitMap) -> Vec<f64> {
    m.logits.iter().map(|&v| sigmoid(v)).collect()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map2x2(vals: [f64; 4]) -> LogitMap {
        LogitMap::new(2, 2, vals.to_vec())
    }

    #[test]
    fn rates_all_positive() {
        let r = compute_rates(&map2x2([1.0, 2.0, 0.5, 3.0]));
        assert_eq!(r.rate_p, 1.0);
        assert_eq!(r.rate_n, 0.0);
    }

    #[test]
    fn rates_worked_example() {
        let r = compute_rates(&map2x2([2.0, -1.0, -1.0, -1.0]));
        assert_eq!(r.rate_p, 0.25);
        assert_eq!(r.rate_n, 0.75);
    }

    #[test]
    fn rates_all_zero_counted_negative() {
        let r = compute_rates(&map2x2([0.0; 4]));
        assert_eq!(r.rate_p, 0.0);
        assert_eq!(r.rate_n, 1.0);
    }

    #[test]
    fn correct_worked_example() {
        let out = correct(&map2x2([2.0, -1.0, -1.0, -1.0]));
        assert_eq!(out.logits[0], 8.0);
        for &v in &out.logits[1..] {
            assert_eq!(v, -1.0 / 0.75);
        }
    }

    #[test]
    fn correct_all_positive_is_identity() {
        let m = map2x2([1.0, 0.5, 2.0, 3.0]);
        assert_eq!(correct(&m).logits, m.logits);
    }

    #[test]
    fn correct_all_nonpositive_is_identity() {
        let m = map2x2([0.0, -0.5, -2.0, -3.0]);
        assert_eq!(correct(&m).logits, m.logits);
    }

    #[test]
    fn correct_half_split_doubles_both_groups() {
        let out = correct(&map2x2([1.0, 3.0, -2.0, -4.0]));
        assert_eq!(out.logits, vec![2.0, 6.0, -4.0, -8.0]);
    }

    #[test]
    fn probability_of_zero_is_half() {
        let p = to_probability(&map2x2([0.0, 8.0, -8.0, 1.0]));
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.9996646498695336).abs() < 1e-12);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn probability_is_monotone() {
        let p = to_probability(&LogitMap::new(1, 5, vec![-3.0, -1.0, 0.0, 1.0, 3.0]));
        for w in p.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    proptest! {
        #[test]
        fn sign_preserved_and_groups_monotone(
            vals in proptest::collection::vec(-10.0f64..10.0, 16)
        ) {
            let m = LogitMap::new(4, 4, vals);
            let out = correct(&m);
            for (a, b) in m.logits.iter().zip(&out.logits) {
                prop_assert_eq!(a.signum() * f64::from(u8::from(*a != 0.0)),
                                b.signum() * f64::from(u8::from(*b != 0.0)));
            }
            // Within-group ordering is preserved (positive scaling).
            let mut pos: Vec<(f64, f64)> = m.logits.iter().zip(&out.logits)
                .filter(|(a, _)| **a > 0.0).map(|(a, b)| (*a, *b)).collect();
            pos.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            for w in pos.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }
    }
}

//! Weighted isotonic regression and calibration of outcome predictions.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IsotonicError {
    #[error("x, y and w must have equal lengths ({x}, {y}, {w})")]
    LengthMismatch { x: usize, y: usize, w: usize },
    #[error("non-finite input at position {0}")]
    NonFinite(usize),
    #[error("weight at position {0} is not positive")]
    NonPositiveWeight(usize),
    #[error("x must be non-decreasing (position {0})")]
    Unsorted(usize),
    #[error("empty input")]
    Empty,
    #[error("clamp bounds [{lo}, {hi}] are inverted")]
    InvertedBounds { lo: f64, hi: f64 },
}

/// Non-decreasing, right-continuous step function.
///
/// Below the first knot the first value applies; above the last knot the
/// last value applies.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn constant(value: f64) -> Self {
        StepFunction {
            knots: vec![f64::NEG_INFINITY],
            values: vec![value],
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn evaluate(&self, v: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x <= v);
        self.values[k.saturating_sub(1)]
    }
}

/// Weighted pool-adjacent-violators fit of `y` on sorted `x`, clamped to `[lo, hi]`.
///
/// Points with equal `x` are pooled to their weighted mean first, so the
/// result is a function of `x`.
pub fn pava(x: &[f64], y: &[f64], w: &[f64], lo: f64, hi: f64) -> Result<StepFunction, IsotonicError> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(IsotonicError::LengthMismatch {
            x: x.len(),
            y: y.len(),
            w: w.len(),
        });
    }
    if x.is_empty() {
        return Err(IsotonicError::Empty);
    }
    if lo > hi {
        return Err(IsotonicError::InvertedBounds { lo, hi });
    }
    for i in 0..x.len() {
        if !x[i].is_finite() || !y[i].is_finite() || !w[i].is_finite() {
            return Err(IsotonicError::NonFinite(i));
        }
        if w[i] <= 0.0 {
            return Err(IsotonicError::NonPositiveWeight(i));
        }
        if i > 0 && x[i] < x[i - 1] {
            return Err(IsotonicError::Unsorted(i));
        }
    }

    // Blocks of (first x, weighted sum, weight).
    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(x.len());
    let mut i = 0;
    while i < x.len() {
        let (mut sy, mut sw) = (0.0, 0.0);
        let start = x[i];
        while i < x.len() && x[i] == start {
            sy += w[i] * y[i];
            sw += w[i];
            i += 1;
        }
        blocks.push((start, sy, sw));
        while blocks.len() >= 2 {
            let (_, sy2, sw2) = blocks[blocks.len() - 1];
            let (x1, sy1, sw1) = blocks[blocks.len() - 2];
            if sy1 / sw1 > sy2 / sw2 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (x1, sy1 + sy2, sw1 + sw2);
            } else {
                break;
            }
        }
    }
    Ok(StepFunction {
        knots: blocks.iter().map(|b| b.0).collect(),
        values: blocks.iter().map(|b| (b.1 / b.2).clamp(lo, hi)).collect(),
    })
}

/// Isotonic map from predictions `m_hat` to targets `phi`, with unit weights.
///
/// Fewer than two points give a constant at the clamped mean.
pub fn calibrate(m_hat: &[f64], phi: &[f64], lo: f64, hi: f64) -> Result<StepFunction, IsotonicError> {
    if m_hat.len() != phi.len() {
        return Err(IsotonicError::LengthMismatch {
            x: m_hat.len(),
            y: phi.len(),
            w: m_hat.len(),
        });
    }
    if m_hat.is_empty() {
        return Err(IsotonicError::Empty);
    }
    if m_hat.len() < 2 {
        return Ok(StepFunction::constant(phi[0].clamp(lo, hi)));
    }
    let mut order: Vec<usize> = (0..m_hat.len()).collect();
    order.sort_by(|&a, &b| m_hat[a].total_cmp(&m_hat[b]));
    let x: Vec<f64> = order.iter().map(|&i| m_hat[i]).collect();
    let y: Vec<f64> = order.iter().map(|&i| phi[i]).collect();
    pava(&x, &y, &vec![1.0; x.len()], lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fitted(x: &[f64], y: &[f64], w: &[f64], lo: f64, hi: f64) -> Vec<f64> {
        let f = pava(x, y, w, lo, hi).unwrap();
        x.iter().map(|&v| f.evaluate(v)).collect()
    }

    #[test]
    fn pools_a_violating_triple() {
        let out = fitted(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0], &[1.0; 3], f64::MIN, f64::MAX);
        assert_eq!(out, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn clamps_after_pooling() {
        let out = fitted(&[0.0, 1.0], &[0.9, -0.2], &[1.0; 2], 0.0, 1.0);
        assert!((out[0] - 0.35).abs() < 1e-15 && (out[1] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn ties_in_x_are_pooled_first() {
        let out = fitted(&[1.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &[1.0, 3.0, 1.0], -9.0, 9.0);
        assert_eq!(out, vec![0.75, 0.75, 2.0]);
    }

    #[test]
    fn step_lookup_is_right_continuous() {
        let f = pava(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &[1.0; 3], -9.0, 9.0).unwrap();
        assert_eq!(f.evaluate(-5.0), 0.0);
        assert_eq!(f.evaluate(0.999), 0.0);
        assert_eq!(f.evaluate(1.0), 1.0);
        assert_eq!(f.evaluate(7.0), 2.0);
    }

    #[test]
    fn short_input_gives_clamped_constant() {
        let f = calibrate(&[0.3], &[1.7], 0.0, 1.0).unwrap();
        assert_eq!(f.evaluate(0.0), 1.0);
        assert_eq!(f.evaluate(5.0), 1.0);
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(pava(&[], &[], &[], 0.0, 1.0), Err(IsotonicError::Empty));
        assert!(matches!(
            pava(&[0.0, 1.0], &[0.0], &[1.0], 0.0, 1.0),
            Err(IsotonicError::LengthMismatch { .. })
        ));
        assert_eq!(
            pava(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], 0.0, 1.0),
            Err(IsotonicError::NonPositiveWeight(1))
        );
        assert_eq!(
            pava(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], 0.0, 1.0),
            Err(IsotonicError::Unsorted(1))
        );
        assert_eq!(
            pava(&[0.0], &[f64::NAN], &[1.0], 0.0, 1.0),
            Err(IsotonicError::NonFinite(0))
        );
    }

    fn sorted_input() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(0.1f64..3.0, n),
            )
                .prop_map(|(mut x, y, w)| {
                    x.sort_by(f64::total_cmp);
                    (x, y, w)
                })
        })
    }

    fn sse(f: &[f64], y: &[f64], w: &[f64]) -> f64 {
        f.iter().zip(y).zip(w).map(|((f, y), w)| w * (f - y).powi(2)).sum()
    }

    proptest! {
        #[test]
        fn output_is_monotone_and_bounded((x, y, w) in sorted_input(), lo in -3.0f64..0.0, width in 0.0f64..4.0) {
            let hi = lo + width;
            let f = fitted(&x, &y, &w, lo, hi);
            for k in 1..f.len() {
                prop_assert!(f[k] >= f[k - 1]);
            }
            prop_assert!(f.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn fit_is_idempotent((x, y, w) in sorted_input()) {
            let once = fitted(&x, &y, &w, f64::MIN, f64::MAX);
            let twice = fitted(&x, &once, &w, f64::MIN, f64::MAX);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn fit_is_a_projection((x, y, w) in sorted_input(), bump in proptest::collection::vec(0.0f64..1.0, 30)) {
            // Any other non-decreasing candidate has no smaller weighted error.
            let f = fitted(&x, &y, &w, f64::MIN, f64::MAX);
            let mut other = Vec::with_capacity(x.len());
            let mut acc = y.iter().cloned().fold(f64::INFINITY, f64::min);
            for (k, xv) in x.iter().enumerate() {
                if k > 0 && *xv > x[k - 1] {
                    acc += bump[k];
                }
                other.push(acc);
            }
            prop_assert!(sse(&f, &y, &w) <= sse(&other, &y, &w) + 1e-9);
            // Residuals are orthogonal to the fit.
            let dot: f64 = f.iter().zip(&y).zip(&w).map(|((f, y), w)| w * (y - f) * f).sum();
            prop_assert!(dot.abs() < 1e-8 * (1.0 + sse(&f, &y, &w)));
        }

        #[test]
        fn calibration_preserves_rank_ties(m in proptest::collection::vec(0.0f64..1.0, 2..40), seed in 0u64..100) {
            let phi: Vec<f64> = m.iter().enumerate().map(|(i, v)| v + ((i as u64 * 31 + seed) % 7) as f64 * 0.1 - 0.3).collect();
            let f = calibrate(&m, &phi, 0.0, 1.0).unwrap();
            for i in 0..m.len() {
                for j in 0..m.len() {
                    if m[i] <= m[j] {
                        prop_assert!(f.evaluate(m[i]) <= f.evaluate(m[j]));
                    }
                }
            }
        }
    }
}

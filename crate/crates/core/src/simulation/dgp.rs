//! Conditional laws of the two simulation studies and trajectory sampling.
//!
//! Time indices follow the long-data convention: `Y[t]` below is the outcome
//! measured after treatment `A_t`, i.e. `Y_{t+1}`, and `R_t` flags whether it
//! was measured.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use super::{Study, HORIZON};
use crate::learners::expit;
use crate::policy::{NoHistory, Policy, PolicyError};
use crate::rng;

/// Study 1 treatments are counts out of this many trials.
pub const TRIALS: u64 = 5;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Values and probabilities of `L_1` in study 1.
pub const S1_BASELINE_LEVELS: [(f64, f64); 3] = [(1.0, 0.5), (2.0, 0.25), (3.0, 0.25)];

/// Success probability of the binomial treatment at time `t`.
pub fn s1_treatment_p(t: usize, l: f64, a_prev: f64) -> f64 {
    match t {
        1 => 0.5 * (l > 1.0) as u8 as f64 + 0.1 * (l > 2.0) as u8 as f64,
        2 | 3 => expit(-2.0 + 1.0 / (1.0 + 2.0 * l + a_prev)),
        _ => expit(1.0 + l - 3.0 * a_prev),
    }
}

/// `P(L_t = 1)` for `t ≥ 2`.
pub fn s1_covariate_p(l_prev: f64, a_prev: f64) -> f64 {
    expit(-0.3 * l_prev + 0.5 * a_prev)
}

/// `P(Y = 1 | A_t = a, L_t = l)`; the linear predictor is clamped to ±30.
pub fn s1_outcome_p(a: f64, l: f64) -> f64 {
    expit((-2.0 + 1.0 / (1.0 - 1.2 * a - 0.3 * l)).clamp(-30.0, 30.0))
}

/// `P(R_t = 1 | L_t = l)`; `alpha = 0` means always measured.
pub fn s1_measurement_p(alpha: f64, l: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0;
    }
    1.0 - expit(logit(alpha) + 2.0 * (l == 1.0) as u8 as f64 - 1.0)
}

pub fn binomial_pmf(k: u64, trials: u64, p: f64) -> f64 {
    if k > trials {
        return 0.0;
    }
    let mut c = 1.0;
    for j in 0..k {
        c *= (trials - j) as f64 / (j + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((trials - k) as i32)
}

pub fn s2_treatment_p(alpha: f64, w: f64, x: f64) -> f64 {
    expit(alpha * (w + x))
}

pub fn s2_outcome_p(w: f64, x: f64, a: f64) -> f64 {
    expit(-3.0 + w + a * x)
}

/// One unit's draws. `y[t-1]` is the outcome after treatment `t`, missing
/// when unmeasured.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub baseline: Vec<f64>,
    pub covariate: [f64; HORIZON],
    pub treatment: [f64; HORIZON],
    pub measured: [f64; HORIZON],
    pub outcome: [f64; HORIZON],
}

/// Intervention applied while sampling a counterfactual trajectory.
pub struct Intervention<'a> {
    pub policy: &'a Policy,
    pub noise: rand_chacha::ChaCha8Rng,
}

impl Intervention<'_> {
    fn apply(&mut self, z: f64, t: usize) -> Result<f64, PolicyError> {
        let eps: f64 = self.noise.random();
        self.policy.apply(z, t, &NoHistory, eps)
    }
}

fn binomial(r: &mut impl Rng, p: f64) -> f64 {
    Binomial::new(TRIALS, p.clamp(0.0, 1.0)).expect("valid binomial").sample(r) as f64
}

fn bernoulli(r: &mut impl Rng, p: f64) -> f64 {
    r.random_bool(p.clamp(0.0, 1.0)) as u8 as f64
}

/// Draws one unit. Under an intervention every treatment is replaced by its
/// policy value before it feeds forward, and every outcome is measured.
pub fn sample_unit(
    study: Study,
    alpha: f64,
    r: &mut impl Rng,
    mut intervention: Option<&mut Intervention>,
) -> Result<Trajectory, PolicyError> {
    let mut tr = Trajectory {
        baseline: Vec::new(),
        covariate: [0.0; HORIZON],
        treatment: [0.0; HORIZON],
        measured: [1.0; HORIZON],
        outcome: [0.0; HORIZON],
    };
    let counterfactual = intervention.is_some();
    let mut act = |z: f64, t: usize| -> Result<f64, PolicyError> {
        match intervention.as_deref_mut() {
            Some(iv) => iv.apply(z, t),
            None => Ok(z),
        }
    };
    match study {
        Study::Study1 => {
            let mut a_prev = 0.0;
            let mut l_prev = 0.0;
            for t in 1..=HORIZON {
                let l = if t == 1 {
                    let u: f64 = r.random();
                    if u < 0.5 {
                        1.0
                    } else if u < 0.75 {
                        2.0
                    } else {
                        3.0
                    }
                } else {
                    bernoulli(r, s1_covariate_p(l_prev, a_prev))
                };
                let a = act(binomial(r, s1_treatment_p(t, l, a_prev)), t)?;
                let y = bernoulli(r, s1_outcome_p(a, l));
                let m = if counterfactual {
                    1.0
                } else {
                    bernoulli(r, s1_measurement_p(alpha, l))
                };
                tr.covariate[t - 1] = l;
                tr.treatment[t - 1] = a;
                tr.measured[t - 1] = m;
                tr.outcome[t - 1] = if m == 1.0 { y } else { f64::NAN };
                l_prev = l;
                a_prev = a;
            }
        }
        Study::Study2 => {
            let w: f64 = r.sample(StandardNormal);
            let x: f64 = r.sample(StandardNormal);
            tr.baseline = vec![w, x];
            for t in 1..=HORIZON {
                let l = bernoulli(r, 0.5);
                let a = act(bernoulli(r, s2_treatment_p(alpha, w, x)), t)?;
                tr.covariate[t - 1] = l;
                tr.treatment[t - 1] = a;
                tr.outcome[t - 1] = bernoulli(r, s2_outcome_p(w, x, a));
            }
        }
    }
    Ok(tr)
}

/// Per-unit generator: unit `i` always draws from the same stream.
pub fn unit_stream(seed: u64, unit: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, unit as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_pmf_sums_to_one() {
        for p in [0.0, 0.1, 0.5, 0.93, 1.0] {
            let total: f64 = (0..=TRIALS).map(|k| binomial_pmf(k, TRIALS, p)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!((binomial_pmf(2, 5, 0.5) - 10.0 / 32.0).abs() < 1e-15);
        assert_eq!(binomial_pmf(6, 5, 0.5), 0.0);
    }

    #[test]
    fn study1_outcome_denominator_stays_finite() {
        for a in 0..=5 {
            for l in [0.0, 1.0, 2.0, 3.0] {
                let p = s1_outcome_p(a as f64, l);
                assert!(p > 0.0 && p < 1.0);
            }
        }
        assert!((s1_outcome_p(0.0, 0.0) - expit(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn missingness_probability_closed_form() {
        // L ≠ 1: P(R = 0) = expit(logit(α) - 1).
        let alpha: f64 = 0.8;
        let expected = expit((alpha / (1.0 - alpha)).ln() - 1.0);
        assert!((1.0 - s1_measurement_p(alpha, 0.0) - expected).abs() < 1e-15);
        assert_eq!(s1_measurement_p(0.0, 1.0), 1.0);
    }
}

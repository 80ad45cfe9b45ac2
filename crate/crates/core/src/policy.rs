//! Modified treatment policies `d(z, h, ε)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy maps {from} to {to}, which is outside the treatment support")]
    OutsideSupport { from: f64, to: f64 },
    #[error("policy condition refers to `{0}`, which is not observed by that time")]
    UnavailableHistory(String),
    #[error("stochastic application probability {0} must lie in [0, 1]")]
    InvalidProbability(f64),
    #[error("shift floor {floor} exceeds cap {cap}")]
    InvalidBounds { floor: f64, cap: f64 },
}

/// Read access to a unit's observed history at a given time.
pub trait History {
    /// Value of `column` if it is observed at or before the current time.
    fn lookup(&self, column: &str) -> Option<f64>;
}

/// History that exposes nothing; enough for policies without conditions.
pub struct NoHistory;

impl History for NoHistory {
    fn lookup(&self, _column: &str) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl Comparison {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Eq => (lhs - rhs).abs() <= VALUE_TOL,
            Comparison::Ne => (lhs - rhs).abs() > VALUE_TOL,
            Comparison::Ge => lhs >= rhs,
            Comparison::Gt => lhs > rhs,
        }
    }
}

/// Predicate on one history column.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Condition {
    pub column: String,
    pub op: Comparison,
    pub value: f64,
}

/// One row of a custom policy table. The first matching rule applies.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyRule {
    /// Natural treatment value this rule applies to; `None` matches any value.
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub when: Option<Condition>,
    pub to: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Identity,
    /// `z + delta`, then clamped to `[floor, cap]` where given.
    Shift {
        delta: f64,
        #[serde(default)]
        floor: Option<f64>,
        #[serde(default)]
        cap: Option<f64>,
    },
    Static {
        value: f64,
    },
    Table {
        rules: Vec<PolicyRule>,
    },
}

/// Applies the policy to each unit independently with probability
/// `probability`, driven by one uniform draw per unit and time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Stochastic {
    pub probability: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Policy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Times (1-based) at which the policy intervenes; all times when absent.
    #[serde(default)]
    pub times: Option<Vec<usize>>,
    #[serde(default)]
    pub stochastic: Option<Stochastic>,
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Policy {
            kind,
            times: None,
            stochastic: None,
        }
    }

    pub fn identity() -> Self {
        Policy::new(PolicyKind::Identity)
    }

    /// `max(z - 1, 0)`.
    pub fn shift_down() -> Self {
        Policy::new(PolicyKind::Shift {
            delta: -1.0,
            floor: Some(0.0),
            cap: None,
        })
    }

    pub fn constant(value: f64) -> Self {
        Policy::new(PolicyKind::Static { value })
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if let Some(s) = &self.stochastic {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(PolicyError::InvalidProbability(s.probability));
            }
        }
        if let PolicyKind::Shift {
            floor: Some(floor),
            cap: Some(cap),
            ..
        } = self.kind
        {
            if floor > cap {
                return Err(PolicyError::InvalidBounds { floor, cap });
            }
        }
        Ok(())
    }

    pub fn intervenes_at(&self, t: usize) -> bool {
        self.times.as_ref().is_none_or(|ts| ts.contains(&t))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, PolicyKind::Identity)
            || self.times.as_ref().is_some_and(|ts| ts.is_empty())
            || self.stochastic.as_ref().is_some_and(|s| s.probability == 0.0)
    }

    /// Deterministic part of the policy, ignoring `times` and `stochastic`.
    fn map(&self, z: f64, history: &dyn History) -> Result<f64, PolicyError> {
        match &self.kind {
            PolicyKind::Identity => Ok(z),
            PolicyKind::Shift { delta, floor, cap } => {
                let mut out = z + delta;
                if let Some(f) = floor {
                    out = out.max(*f);
                }
                if let Some(c) = cap {
                    out = out.min(*c);
                }
                Ok(out)
            }
            PolicyKind::Static { value } => Ok(*value),
            PolicyKind::Table { rules } => {
                for rule in rules {
                    if rule.from.is_some_and(|f| (f - z).abs() > VALUE_TOL) {
                        continue;
                    }
                    if let Some(cond) = &rule.when {
                        let v = history
                            .lookup(&cond.column)
                            .ok_or_else(|| PolicyError::UnavailableHistory(cond.column.clone()))?;
                        if !cond.op.holds(v, cond.value) {
                            continue;
                        }
                    }
                    return Ok(rule.to);
                }
                Ok(z)
            }
        }
    }

    /// Post-intervention treatment at time `t` for natural value `z`.
    /// `noise` is the unit's uniform draw at `t`; only stochastic policies read it.
    pub fn apply(
        &self,
        z: f64,
        t: usize,
        history: &dyn History,
        noise: f64,
    ) -> Result<f64, PolicyError> {
        if !self.intervenes_at(t) {
            return Ok(z);
        }
        if let Some(s) = &self.stochastic {
            if noise >= s.probability {
                return Ok(z);
            }
        }
        self.map(z, history)
    }

    /// `P(d(from, h, ε) = to)` over the policy noise.
    pub fn transition_probability(
        &self,
        from: f64,
        to: f64,
        t: usize,
        history: &dyn History,
    ) -> Result<f64, PolicyError> {
        let same = if (from - to).abs() <= VALUE_TOL { 1.0 } else { 0.0 };
        if !self.intervenes_at(t) {
            return Ok(same);
        }
        let mapped = if (self.map(from, history)? - to).abs() <= VALUE_TOL {
            1.0
        } else {
            0.0
        };
        Ok(match &self.stochastic {
            Some(s) => s.probability * mapped + (1.0 - s.probability) * same,
            None => mapped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct OneColumn(&'static str, f64);

    impl History for OneColumn {
        fn lookup(&self, column: &str) -> Option<f64> {
            (column == self.0).then_some(self.1)
        }
    }

    #[test]
    fn shift_down_floors_at_zero() {
        let p = Policy::shift_down();
        let out: Vec<f64> = [0.0, 1.0, 3.0, 5.0]
            .iter()
            .map(|&z| p.apply(z, 1, &NoHistory, 0.0).unwrap())
            .collect();
        assert_eq!(out, vec![0.0, 0.0, 2.0, 4.0]);
    }

    #[test]
    fn times_restrict_intervention() {
        let mut p = Policy::constant(1.0);
        p.times = Some(vec![2]);
        assert_eq!(p.apply(0.0, 1, &NoHistory, 0.0).unwrap(), 0.0);
        assert_eq!(p.apply(0.0, 2, &NoHistory, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn table_rules_use_history() {
        let p = Policy::new(PolicyKind::Table {
            rules: vec![PolicyRule {
                from: Some(0.0),
                when: Some(Condition {
                    column: "age".into(),
                    op: Comparison::Gt,
                    value: 30.0,
                }),
                to: 1.0,
            }],
        });
        assert_eq!(p.apply(0.0, 1, &OneColumn("age", 40.0), 0.0).unwrap(), 1.0);
        assert_eq!(p.apply(0.0, 1, &OneColumn("age", 20.0), 0.0).unwrap(), 0.0);
        assert_eq!(p.apply(2.0, 1, &OneColumn("age", 40.0), 0.0).unwrap(), 2.0);
        assert_eq!(
            p.apply(0.0, 1, &NoHistory, 0.0),
            Err(PolicyError::UnavailableHistory("age".into()))
        );
    }

    #[test]
    fn stochastic_transitions_mix_with_identity() {
        let mut p = Policy::constant(1.0);
        p.stochastic = Some(Stochastic {
            probability: 0.25,
            seed: 0,
        });
        let stay = p.transition_probability(0.0, 0.0, 1, &NoHistory).unwrap();
        let move_ = p.transition_probability(0.0, 1.0, 1, &NoHistory).unwrap();
        assert_eq!((stay, move_), (0.75, 0.25));
        assert_eq!(p.apply(0.0, 1, &NoHistory, 0.2).unwrap(), 1.0);
        assert_eq!(p.apply(0.0, 1, &NoHistory, 0.3).unwrap(), 0.0);
    }
}

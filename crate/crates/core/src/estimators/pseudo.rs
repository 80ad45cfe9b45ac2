//! Sequential doubly robust pseudo-outcome.

/// One summand of the pseudo-outcome at time `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoTerm {
    /// `w_{t,k}`.
    pub weight: f64,
    /// `n_{k+1} m_{t+1,k+1}(z^d_{k+1}, h_{k+1})`, or `Y_{t+1}` when `k = t`.
    pub next: f64,
    /// `m_{t+1,k}(z_k, h_k)`.
    pub current: f64,
}

/// `φ_{t+1,s} = Σ_{k=s..t} (Π_{l=s..k} w_{t,l}) (next_k - current_k) + m_{t+1,s}(z^d_s, h_s)`.
///
/// `start` is `m_{t+1,s}(z^d_s, h_s)` and `terms` runs over `k = s..=t`.
/// Products are accumulated left to right; once a product is zero the
/// remaining terms are skipped, so they may hold placeholders.
pub fn pseudo_outcome(start: f64, terms: &[PseudoTerm]) -> f64 {
    let mut phi = start;
    let mut product = 1.0;
    for term in terms {
        product *= term.weight;
        if product == 0.0 {
            break;
        }
        phi += product * (term.next - term.current);
    }
    phi
}

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Cohen's kappa over any label type. Both maps must cover the same words,
/// at least two of them. When chance agreement is 1 (both sides constant and
/// identical) the result is defined as 1.
pub fn cohen_kappa_by<L: Ord>(a: &BTreeMap<String, L>, b: &BTreeMap<String, L>) -> Result<f64> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Invalid("kappa needs annotations of the same word set".into()));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("kappa needs at least two words".into()));
    }
    let n = a.len() as f64;
    let labels: BTreeSet<&L> = a.values().chain(b.values()).collect();
    let agree = a.values().zip(b.values()).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;
    let p_e: f64 = labels
        .iter()
        .map(|l| {
            let ca = a.values().filter(|v| v == l).count() as f64;
            let cb = b.values().filter(|v| v == l).count() as f64;
            (ca / n) * (cb / n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Kappa on the binary protected / not protected decision.
pub fn cohen_kappa(a: &BTreeMap<String, bool>, b: &BTreeMap<String, bool>) -> Result<f64> {
    cohen_kappa_by(a, b)
}

/// Clamped to [0, 1] for tables that only show non-negative agreement.
pub fn kappa_for_display(kappa: f64) -> f64 {
    kappa.clamp(0.0, 1.0)
}

//! Effective Contrastive Information and the quantities it is compared
//! against.
//!
//! ```text
//! capacity   = ln(1 + |N|)
//! efficiency = 2·S·Δ' / (S + Δ')          (0 when either side is 0)
//! ECI        = capacity · efficiency
//! arithmetic = capacity · (S + Δ') / 2
//! G_est      = |N| · exp(S / τ)
//! σ̂²         = ½ (S_max − S)²
//! ```
//!
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{MethodSummary, PerQueryStats};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

fn finite(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::domain(format!("{name} must be finite, got {x}")))
    }
}

fn non_negative(name: &str, x: f64) -> Result<f64> {
    let x = finite(name, x)?;
    if x < 0.0 {
        return Err(Error::domain(format!("{name} must be >= 0, got {x}")));
    }
    Ok(x)
}

/// `ln(1 + n)`: the logarithmic ceiling on what an InfoNCE objective with
/// `n` negatives can certify.
pub fn information_capacity(n: f64) -> Result<f64> {
    Ok(non_negative("negative count", n)?.ln_1p())
}

/// Harmonic mean of signal and safe margin, extended continuously to 0 when
/// either input is 0.
pub fn harmonic_efficiency(signal: f64, safe_margin: f64) -> Result<f64> {
    let s = non_negative("signal", signal)?;
    let m = non_negative("margin", safe_margin)?;
    if s == 0.0 || m == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * s * m / (s + m))
}

pub fn eci_score(n: f64, signal: f64, safe_margin: f64) -> Result<f64> {
    Ok(information_capacity(n)? * harmonic_efficiency(signal, safe_margin)?)
}

/// Capacity times the arithmetic mean of signal and margin.
pub fn arithmetic_baseline(n: f64, signal: f64, margin: f64) -> Result<f64> {
    let s = non_negative("signal", signal)?;
    let m = non_negative("margin", margin)?;
    Ok(information_capacity(n)? * (s + m) / 2.0)
}

/// `n · exp(signal / τ)`, the summed softmax repulsion of `n` negatives at
/// mean similarity `signal`. Overflow is an error rather than infinity.
pub fn gradient_norm_estimate(n: f64, signal: f64, temperature: f64) -> Result<f64> {
    let n = non_negative("negative count", n)?;
    let signal = finite("signal", signal)?;
    let t = finite("temperature", temperature)?;
    if t <= 0.0 {
        return Err(Error::domain(format!("temperature must be > 0, got {t}")));
    }
    let g = n * (signal / t).exp();
    if !g.is_finite() {
        return Err(Error::Overflow(format!(
            "{n} * exp({signal} / {t}) exceeds f64 range"
        )));
    }
    Ok(g)
}

/// `½ (s_max − signal)²`.
pub fn score_variance_estimate(s_max: f64, signal: f64) -> Result<f64> {
    let d = finite("s_max", s_max)? - finite("signal", signal)?;
    Ok(0.5 * d * d)
}

/// Lower bound on query/positive mutual information certified by an
/// InfoNCE loss over `n` negatives: `ln(n + 1) − loss`. Can be negative.
pub fn info_nce_mi_bound(loss: f64, n: u64) -> Result<f64> {
    let loss = non_negative("loss", loss)?;
    Ok((n as f64).ln_1p() - loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EciReport {
    pub method: String,
    pub n_effective: f64,
    pub signal: f64,
    pub margin: f64,
    pub capacity: f64,
    pub harmonic_eff: f64,
    pub eci: f64,
    pub arithmetic_score: f64,
    pub grad_norm_est: f64,
    pub temperature: f64,
    /// Absent when the summary carries no hardest-negative mean.
    pub score_var_est: Option<f64>,
    #[serde(default)]
    pub model_tag: Option<String>,
}

/// Assembles every metric for one method. A negative mean signal (possible
/// with cosine similarity) contributes as 0 to the efficiency terms; the raw
/// value is kept in the report and used for `G_est` and `σ̂²`.
pub fn build_report(summary: &MethodSummary, temperature: f64, model_tag: Option<&str>) -> Result<EciReport> {
    let n = summary.mean_n;
    let s = finite("signal", summary.mean_signal)?;
    let m = summary.mean_margin;
    let capacity = information_capacity(n)?;
    let harmonic_eff = harmonic_efficiency(s.max(0.0), m)?;
    Ok(EciReport {
        method: summary.method.clone(),
        n_effective: n,
        signal: s,
        margin: m,
        capacity,
        harmonic_eff,
        eci: capacity * harmonic_eff,
        arithmetic_score: arithmetic_baseline(n, s.max(0.0), m)?,
        grad_norm_est: gradient_norm_estimate(n, s, temperature)?,
        temperature,
        score_var_est: summary
            .s_max
            .map(|smax| score_variance_estimate(smax, s))
            .transpose()?,
        model_tag: model_tag.map(str::to_string),
    })
}

/// ECI of a single query, for diagnostics. Zero for queries without
/// negatives. Negative signals (possible with cosine) are clamped to 0.
pub fn per_query_eci(stats: &PerQueryStats) -> Result<f64> {
    match (stats.signal, stats.safe_margin) {
        (Some(s), Some(m)) => eci_score(stats.n_count as f64, s.max(0.0), m),
        _ => Ok(0.0),
    }
}

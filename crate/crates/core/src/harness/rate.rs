use crate::error::{Error, Result};
use crate::fit::{log_log_fit, LogLogFit};

/// Power-law fit `value ≈ C n^slope`. Nonpositive values are dropped with a
/// warning; at least three usable pairs are required.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<LogLogFit> {
    let usable = pairs.iter().filter(|(n, v)| *n > 0.0 && *v > 0.0).count();
    if usable < pairs.len() {
        log::warn!("rate fit: excluding {} nonpositive pairs", pairs.len() - usable);
    }
    if usable < 3 {
        return Err(Error::invalid(format!("rate fit needs three positive pairs, got {usable}")));
    }
    log_log_fit(pairs)
}

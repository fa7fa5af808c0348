use super::{ReprError, Result};

/// Glasberg & Moore ERB-rate (ERB number) of a frequency in Hz.
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (0.00437 * f + 1.0).log10()
}

/// Inverse of [`erb_rate`].
pub fn erb_rate_to_hz(rate: f64) -> f64 {
    (10f64.powf(rate / 21.4) - 1.0) / 0.00437
}

/// `n_bands + 1` edges equally spaced on the ERB-rate scale between `lo` and
/// `hi`. The end points are returned exactly.
pub fn erb_band_edges(lo: f64, hi: f64, n_bands: usize) -> Result<Vec<f64>> {
    if !(lo >= 0.0 && lo < hi) || n_bands == 0 {
        return Err(ReprError::InvalidBandRange { lo, hi });
    }
    let (r_lo, r_hi) = (erb_rate(lo), erb_rate(hi));
    let step = (r_hi - r_lo) / n_bands as f64;
    let mut edges: Vec<f64> = (0..=n_bands)
        .map(|i| erb_rate_to_hz(r_lo + step * i as f64))
        .collect();
    edges[0] = lo;
    edges[n_bands] = hi;
    Ok(edges)
}

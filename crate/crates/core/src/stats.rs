//! Order statistics used by the thresholds and the ranking.

/// Scale factor that makes the MAD a consistent estimator of the standard
/// deviation under normally distributed errors.
pub const NORMAL_CONSISTENCY: f64 = 1.4826;

/// Median of a slice; the mean of the two middle values for even lengths.
/// Returns `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    median_in_place(&mut sorted)
}

fn median_in_place(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    })
}

/// Median and raw median absolute deviation about the median.
pub fn median_and_mad(values: &[f64]) -> Option<(f64, f64)> {
    let med = median(values)?;
    let mut deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median_in_place(&mut deviations)?;
    Some((med, mad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_examples() {
        assert_eq!(median_and_mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]), Some((2.0, 1.0)));
        assert_eq!(median_and_mad(&[0.0, 0.0, 0.0, 0.0, 100.0]), Some((0.0, 0.0)));
        assert_eq!(median_and_mad(&[5.0]), Some((5.0, 0.0)));
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn mad_of_symmetric_residuals() {
        let (med, mad) = median_and_mad(&[0.1, -0.1, 0.1, -0.1, 0.0]).unwrap();
        assert_eq!(med, 0.0);
        assert!((mad - 0.1).abs() < 1e-15);
    }
}

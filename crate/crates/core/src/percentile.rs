//! Nearest-rank percentiles.

/// Nearest-rank percentile of an ascending slice: the value at 1-based rank
/// `max(1, ⌈p·n/100⌉)`. Returns `None` for an empty slice.
pub fn nearest_rank_sorted(sorted: &[f64], p: u32) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let p = p.min(100) as usize;
    let rank = (p * n).div_ceil(100).max(1);
    Some(sorted[rank - 1])
}

/// Sorts a copy of `values` and takes the nearest-rank percentile.
pub fn nearest_rank(values: &[f64], p: u32) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    nearest_rank_sorted(&v, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tenths() {
        let v: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        assert_eq!(nearest_rank(&v, 95), Some(1.0));
        assert_eq!(nearest_rank(&v, 20), Some(0.2));
        assert_eq!(nearest_rank(&v, 5), Some(0.1));
        assert_eq!(nearest_rank(&v, 0), Some(0.1));
        assert_eq!(nearest_rank(&v, 100), Some(1.0));
        assert_eq!(nearest_rank(&[], 50), None);
    }

    #[test]
    fn unsorted_input() {
        assert_eq!(nearest_rank(&[3.0, 1.0, 2.0], 50), Some(2.0));
    }
}

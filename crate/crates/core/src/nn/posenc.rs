//! Fixed sinusoidal positional encodings.

use ndarray::Array2;

/// `[positions × dim]` table: even channels sine, odd channels cosine, with
/// the usual 10000^(2i/dim) frequency schedule.
pub fn sinusoidal_encoding(positions: usize, dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((positions, dim));
    for pos in 0..positions {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out[[pos, i]] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_is_sin0_cos0() {
        let pe = sinusoidal_encoding(4, 6);
        for i in 0..6 {
            let expected = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe[[0, i]], expected);
        }
    }

    #[test]
    fn rows_are_distinct() {
        let pe = sinusoidal_encoding(8, 16);
        assert_ne!(pe.row(1), pe.row(2));
        assert!(pe.iter().all(|v| v.abs() <= 1.0));
    }
}

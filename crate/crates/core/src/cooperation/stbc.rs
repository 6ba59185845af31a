use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::phy::draw_cn;

/// Per-relay code-column weights, `L × N` stored row-major.
///
/// Row 0 is reserved for the source (weight vector `e_0`) and is all zero;
/// every other entry is drawn i.i.d. CN(0, 1/L) by the relay itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<Complex64>,
}

impl RandomizationMatrix {
    pub fn draw<R: Rng + ?Sized>(length: usize, relays: usize, rng: &mut R) -> Self {
        let variance = 1.0 / length as f64;
        let mut weights = vec![Complex64::new(0.0, 0.0); length * relays];
        // Column-major draw order: each relay picks its own column.
        for c in 0..relays {
            for r in 1..length {
                weights[r * relays + c] = draw_cn(rng, variance);
            }
        }
        Self {
            rows: length,
            cols: relays,
            weights,
        }
    }

    /// Builds a matrix from explicit weights; the first row is forced to zero.
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            if r == 0 {
                weights.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), cols));
            } else {
                weights.extend_from_slice(row);
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            weights,
        })
    }

    pub fn length(&self) -> usize {
        self.rows
    }

    pub fn relays(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.weights[r * self.cols + c]
    }

    /// `R · h`, one entry per code column.
    pub fn apply(&self, h: &[Complex64]) -> Result<Vec<Complex64>> {
        if h.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: h.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| {
                self.weights[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(h)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect())
    }
}

/// Equivalent channel `h_source·e_0 + R·h_relays` seen by the AP.
pub fn equivalent_channel(
    h_source_ap: Complex64,
    r: &RandomizationMatrix,
    h_relays_ap: &[Complex64],
) -> Result<Vec<Complex64>> {
    let mut out = r.apply(h_relays_ap)?;
    if out.is_empty() {
        out.push(Complex64::new(0.0, 0.0));
    }
    out[0] += h_source_ap;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn no_relays_keeps_direct_path() {
        let r = RandomizationMatrix::draw(3, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let h = equivalent_channel(c(0.5, -1.0), &r, &[]).unwrap();
        assert_eq!(h, vec![c(0.5, -1.0), c(0.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn length_one_code_zeroes_relays() {
        let r = RandomizationMatrix::draw(1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        let h = equivalent_channel(c(0.3, 0.4), &r, &[c(5.0, 5.0)]).unwrap();
        assert_eq!(h, vec![c(0.3, 0.4)]);
    }

    #[test]
    fn first_row_forced_to_zero() {
        let r = RandomizationMatrix::from_rows(vec![
            vec![c(9.0, 9.0), c(9.0, 9.0)],
            vec![c(1.0, 0.0), c(0.0, 1.0)],
        ])
        .unwrap();
        assert_eq!(r.get(0, 0), c(0.0, 0.0));
        let rh = r.apply(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(rh, vec![c(0.0, 0.0), c(1.0, 1.0)]);
    }

    #[test]
    fn dimension_mismatch() {
        let r = RandomizationMatrix::draw(2, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            r.apply(&[c(1.0, 0.0)]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn weight_variance_is_one_over_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = RandomizationMatrix::draw(4, 20_000, &mut rng);
        let n = 3 * 20_000;
        let mean: f64 = (1..4)
            .flat_map(|row| (0..20_000).map(move |col| (row, col)))
            .map(|(row, col)| r.get(row, col).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 0.01, "{mean}");
    }
}

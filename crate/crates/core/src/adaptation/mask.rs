use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Time-masking policy: `spans` spans of width up to `max_width` rows, never
/// zeroing more than `⌈p·L'⌉` rows in total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub p: f64,
    pub spans: usize,
    /// `None` means `⌈0.1·L'⌉`.
    pub max_width: Option<usize>,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            p: 0.15,
            spans: 2,
            max_width: None,
        }
    }
}

impl MaskSpec {
    pub fn none() -> Self {
        Self {
            p: 0.0,
            spans: 0,
            max_width: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config(format!("mask fraction p must lie in [0, 1], got {}", self.p)));
        }
        if self.max_width == Some(0) {
            return Err(Error::config("mask max_width must be positive"));
        }
        Ok(())
    }

    pub fn budget(&self, len: usize) -> usize {
        (self.p * len as f64).ceil() as usize
    }

    pub fn width(&self, len: usize) -> usize {
        self.max_width
            .unwrap_or_else(|| (0.1 * len as f64).ceil() as usize)
            .max(1)
    }

    /// `true` for rows to zero.
    pub fn draw(&self, len: usize, rng: &mut impl Rng) -> Vec<bool> {
        let mut masked = vec![false; len];
        let budget = self.budget(len);
        if len == 0 || budget == 0 {
            return masked;
        }
        let w = self.width(len);
        let mut used = 0;
        for _ in 0..self.spans {
            let start = rng.random_range(0..len);
            let width = rng.random_range(1..=w);
            for m in masked.iter_mut().skip(start).take(width) {
                if used == budget {
                    break;
                }
                if !*m {
                    *m = true;
                    used += 1;
                }
            }
        }
        masked
    }
}

pub fn apply_mask(x: &Tensor, masked: &[bool]) -> Tensor {
    let mut out = x.clone();
    for (i, &m) in masked.iter().enumerate() {
        if m {
            out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

/// Zeroes seeded time spans of `x`; other rows are copied bit for bit.
pub fn time_mask(x: &Tensor, spec: &MaskSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let masked = spec.draw(x.rows(), &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(apply_mask(x, &masked))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Random rows with no zero entries.
    fn x(len: usize) -> Tensor {
        let mut t = Tensor::randn(&[len, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(len as u64));
        t.data_mut().iter_mut().for_each(|v| *v += 10.0);
        t
    }

    #[test]
    fn disabled_mask_is_identity() {
        let a = x(20);
        let p0 = MaskSpec { p: 0.0, ..Default::default() };
        let n0 = MaskSpec { spans: 0, ..Default::default() };
        assert_eq!(time_mask(&a, &p0, 1).unwrap(), a);
        assert_eq!(time_mask(&a, &n0, 1).unwrap(), a);
    }

    #[test]
    fn masked_rows_zero_and_rest_untouched() {
        let a = x(30);
        let spec = MaskSpec { p: 0.5, spans: 3, max_width: Some(6) };
        let m = time_mask(&a, &spec, 4).unwrap();
        for r in 0..30 {
            let row = m.row(r);
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            assert_eq!(row, a.row(r));
        }
    }

    #[test]
    fn budget_never_exceeded() {
        let spec = MaskSpec { p: 0.15, spans: 4, max_width: Some(10) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for len in [1usize, 3, 7, 13, 40] {
            for _ in 0..100 {
                let n = spec.draw(len, &mut rng).iter().filter(|&&m| m).count();
                assert!(n <= spec.budget(len));
            }
        }
    }

    #[test]
    fn invalid_fraction_rejected() {
        let spec = MaskSpec { p: 1.5, ..Default::default() };
        assert!(time_mask(&x(4), &spec, 0).is_err());
    }
}

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Fixed coordinate shuffle: `out[j] = x[perm[j]]`. Volume preserving, so it
/// adds nothing to the log-determinant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut inverse = vec![usize::MAX; n];
        for (j, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::Format(format!("{perm:?} is not a permutation of 0..{n}")));
            }
            inverse[p] = j;
        }
        Ok(Self { perm, inverse })
    }

    pub fn identity(n: usize) -> Self {
        let perm: Vec<usize> = (0..n).collect();
        Self {
            inverse: perm.clone(),
            perm,
        }
    }

    pub fn shuffled(n: usize, rng: &mut Rng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        Self::new(perm).expect("shuffle of 0..n is a permutation")
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|&i| y[i]).collect()
    }

    pub fn apply_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.select(Axis(1), &self.perm)
    }

    /// Also maps an output-side gradient back to the input side.
    pub fn apply_inverse_batch(&self, y: ArrayView2<f64>) -> Array2<f64> {
        y.select(Axis(1), &self.inverse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_undoes_apply() {
        let mut rng = Rng::new(4);
        let p = Permutation::shuffled(9, &mut rng);
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 1.5).collect();
        assert_eq!(p.apply_inverse(&p.apply(&x)), x);
        assert_eq!(p.apply(&p.apply_inverse(&x)), x);
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn batch_and_vector_agree() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let x = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let y = p.apply_batch(x.view());
        assert_eq!(y.row(0).to_vec(), p.apply(&[1.0, 2.0, 3.0]));
        assert_eq!(p.apply_inverse_batch(y.view()), x);
    }
}

// SPDX-License-Identifier: Apache-2.0

use super::Matrix;
use crate::{Error, ExpertId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    Relu,
}

/// Toy expert: `x -> act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearExtractor {
    pub expert_id: ExpertId,
    weight: Matrix,
    bias: Vec<f64>,
    nonlinearity: Nonlinearity,
}

impl LinearExtractor {
    pub fn new(expert_id: ExpertId, weight: Matrix, bias: Vec<f64>, nonlinearity: Nonlinearity) -> Result<Self> {
        if weight.rows() == 0 {
            return Err(Error::Validation("extractor needs at least one output".into()));
        }
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("extractor parameters must be finite".into()));
        }
        Ok(LinearExtractor {
            expert_id,
            weight,
            bias,
            nonlinearity,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let v = self.weight.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            *slot = match self.nonlinearity {
                Nonlinearity::None => v,
                Nonlinearity::Relu => v.max(0.0),
            };
        }
    }

    pub fn extract(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::Dimension(format!(
                "input of width {} for an extractor expecting {}",
                x.len(),
                self.d_in()
            )));
        }
        let mut out = vec![0.0; self.d_out()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Embeds every row of `x`.
    pub fn extract_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::Dimension(format!(
                "inputs of width {} for an extractor expecting {}",
                x.cols(),
                self.d_in()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.d_out());
        for r in 0..x.rows() {
            self.apply_into(x.row(r), out.row_mut(r));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_passes_input_through() {
        let e = LinearExtractor::new(0, Matrix::identity(3), vec![0.0; 3], Nonlinearity::None).unwrap();
        assert_eq!(e.extract(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn relu_clips_negative_preactivations() {
        let e = LinearExtractor::new(0, Matrix::identity(2), vec![-5.0, -1.0], Nonlinearity::Relu).unwrap();
        assert_eq!(e.extract(&[1.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_checks() {
        let e = LinearExtractor::new(0, Matrix::zeros(2, 3), vec![0.0; 2], Nonlinearity::None).unwrap();
        assert!(e.extract(&[1.0]).is_err());
        assert!(e.extract_batch(&Matrix::zeros(4, 2)).is_err());
        assert!(LinearExtractor::new(0, Matrix::zeros(2, 3), vec![0.0], Nonlinearity::None).is_err());
        assert!(LinearExtractor::new(0, Matrix::zeros(0, 3), vec![], Nonlinearity::None).is_err());
        let nan = Matrix::new(1, 1, vec![f64::NAN]).unwrap();
        assert!(LinearExtractor::new(0, nan, vec![0.0], Nonlinearity::None).is_err());
    }
}

//! A framework-free linear autoencoder with a nearest-prototype classifier.
//!
//! `encode(x) = P x`, `decode(z) = Pᵀ z` where `P` (n×d) has orthonormal
//! rows, so `encode(decode(z)) = z` and `decode(encode(x)) = x` for any `x`
//! in the row space of `P`. `classify(z)` returns the class of the nearest
//! prototype (ties to the lowest index).

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::server::AdapterModel;
use crate::data::{DataError, Matrix};
use crate::distance::nearest;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLinearModel {
    projection: Matrix,
    prototypes: Matrix,
    classes: Vec<usize>,
    num_classes: usize,
}

impl ToyLinearModel {
    pub fn new(projection: Matrix, prototypes: Matrix, classes: Vec<usize>) -> Result<Self, DataError> {
        if prototypes.ncols() != projection.nrows() {
            return Err(DataError::invalid(
                "prototypes",
                format!(
                    "width {} does not match latent dim {}",
                    prototypes.ncols(),
                    projection.nrows()
                ),
            ));
        }
        if classes.len() != prototypes.nrows() || classes.is_empty() {
            return Err(DataError::invalid("classes", "need one class per prototype"));
        }
        let num_classes = classes.iter().max().copied().unwrap_or(0) + 1;
        Ok(ToyLinearModel {
            projection,
            prototypes,
            classes,
            num_classes,
        })
    }

    /// `d = n`, `P = I`.
    pub fn identity(d: usize, prototypes: Matrix, classes: Vec<usize>) -> Result<Self, DataError> {
        let mut p = Matrix::zeros(d, d);
        for i in 0..d {
            p.row_mut(i)[i] = 1.0;
        }
        Self::new(p, prototypes, classes)
    }

    /// Seeded orthonormal projection with prototypes at the given latent
    /// positions.
    pub fn with_random_projection(
        d: usize,
        prototypes: Matrix,
        classes: Vec<usize>,
        seed: u64,
    ) -> Result<Self, DataError> {
        let p = orthonormal_rows(prototypes.ncols(), d, seed)?;
        Self::new(p, prototypes, classes)
    }

    /// Seeded projection plus `m` prototypes at distinct random latent
    /// positions, with classes assigned round-robin over two classes.
    pub fn random(d: usize, n: usize, m: usize, seed: u64) -> Result<Self, DataError> {
        let mut rng = seed::rng(seed, &[1]);
        let mut protos = Matrix::zeros(m, n);
        for j in 0..m {
            for v in protos.row_mut(j) {
                *v = 3.0 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let classes = (0..m).map(|j| j % 2).collect();
        Self::with_random_projection(d, protos, classes, seed)
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        self.projection
            .rows()
            .map(|p| p.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn lift(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.projection.ncols()];
        for (zi, p) in z.iter().zip(self.projection.rows()) {
            for (xj, pj) in x.iter_mut().zip(p) {
                *xj += zi * pj;
            }
        }
        x
    }
}

/// `n` orthonormal rows of length `d`, via Gram-Schmidt on Gaussian rows.
pub fn orthonormal_rows(n: usize, d: usize, seed: u64) -> Result<Matrix, DataError> {
    if n > d || n == 0 {
        return Err(DataError::invalid(
            "projection",
            format!("need 1 <= n <= d, got n={n}, d={d}"),
        ));
    }
    let mut rng = seed::rng(seed, &[0]);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= dot * ri;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_rows(d, &rows)
}

impl AdapterModel for ToyLinearModel {
    fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    fn latent_dim(&self) -> usize {
        self.projection.nrows()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn encode(&self, batch: &Matrix) -> Result<Matrix, String> {
        let rows: Vec<Vec<f64>> = batch.rows().map(|x| self.project(x)).collect();
        Matrix::from_rows(self.latent_dim(), &rows).map_err(|e| e.to_string())
    }

    fn decode(&self, batch: &Matrix) -> Result<Matrix, String> {
        let rows: Vec<Vec<f64>> = batch.rows().map(|z| self.lift(z)).collect();
        Matrix::from_rows(self.input_dim(), &rows).map_err(|e| e.to_string())
    }

    fn classify(&self, batch: &Matrix) -> Result<Vec<usize>, String> {
        Ok(batch
            .rows()
            .map(|z| {
                let (j, _) = nearest(z, self.prototypes.rows()).expect("at least one prototype");
                self.classes[j]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_orthonormal() {
        let p = orthonormal_rows(3, 7, 5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = p.row(i).iter().zip(p.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        assert!(orthonormal_rows(4, 3, 0).is_err());
    }

    #[test]
    fn reconstructs_rowspace_inputs() {
        let m = ToyLinearModel::random(8, 3, 4, 9).unwrap();
        let z = Matrix::from_rows(3, &[[0.3, -1.0, 2.0], [0.0, 0.0, 1e-3]]).unwrap();
        let x = m.decode(&z).unwrap();
        let x2 = m.decode(&m.encode(&x).unwrap()).unwrap();
        for (a, b) in x.as_slice().iter().zip(x2.as_slice()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn prototypes_classify_to_their_class() {
        let m = ToyLinearModel::random(5, 2, 6, 3).unwrap();
        let labels = m.classify(m.prototypes()).unwrap();
        assert_eq!(labels, m.classes());
    }
}

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use crate::vsgc::{Blob, Payload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors of one network.
///
/// Trainable stores hold gradient-tracking leaves; [`ParamStore::frozen`]
/// gives a copy whose forward passes never record parameter gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Float = f64> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, data: Vec<F>, shape: &[usize]) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Tensor::leaf(data, shape));
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, data: Vec<F>) {
        let shape = self.values[id.0].shape().to_vec();
        let track = self.values[id.0].requires_grad();
        self.values[id.0] = if track {
            Tensor::leaf(data, &shape)
        } else {
            Tensor::from_vec(data, &shape)
        };
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<F>] {
        &self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn frozen(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.detach()).collect(),
        }
    }

    pub fn trainable(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.detach_leaf()).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.all_finite())
    }

    /// Bitwise equality of names, shapes, and values.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }

    pub fn to_blobs(&self) -> Vec<(String, Blob)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                (
                    n.clone(),
                    Blob {
                        dims: v.shape().to_vec(),
                        payload: Payload::F64(v.to_f64_vec()),
                    },
                )
            })
            .collect()
    }

    /// Loads values by name into a store of identical layout.
    pub fn load_blobs(&mut self, blobs: &[(String, Blob)]) -> Result<()> {
        if blobs.len() != self.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, network has {}",
                blobs.len(),
                self.len()
            )));
        }
        for (i, (name, blob)) in blobs.iter().enumerate() {
            if *name != self.names[i] {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {i} is {name:?}, expected {:?}",
                    self.names[i]
                )));
            }
            if blob.dims != self.values[i].shape() {
                return Err(Error::shape(format!(
                    "{name}: checkpoint dims {:?}, network {:?}",
                    blob.dims,
                    self.values[i].shape()
                )));
            }
            let Payload::F64(v) = &blob.payload else {
                return Err(Error::invalid(format!(
                    "{name}: parameters must be stored as f64"
                )));
            };
            self.set(ParamId(i), v.iter().map(|&x| F::num(x)).collect());
        }
        Ok(())
    }
}

pub fn normal_vec<F: Float, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<F> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::num(z * std)
        })
        .collect()
}

pub fn uniform_vec<F: Float, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<F> {
    (0..n)
        .map(|_| F::num(rng.random_range(-bound..=bound)))
        .collect()
}

/// Row-major `rows x cols` matrix with orthonormal rows or columns
/// (whichever is fewer), from the QR factorization of a Gaussian matrix.
pub fn orthogonal_vec<F: Float, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<F> {
    let (m, n) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let g = DMatrix::<f64>::from_fn(m, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    // sign fix so the distribution is uniform over orthogonal matrices
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out.push(F::num(v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_columns() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for (rows, cols) in [(6, 4), (4, 6), (5, 5)] {
            let v: Vec<f64> = orthogonal_vec(&mut r, rows, cols);
            let m = DMatrix::from_row_slice(rows, cols, &v);
            let gram = if rows >= cols {
                m.transpose() * &m
            } else {
                &m * m.transpose()
            };
            let id = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
            assert!((gram - id).abs().max() < 1e-12);
        }
    }

    #[test]
    fn blob_roundtrip_and_freeze() {
        let mut p = ParamStore::<f64>::new();
        let a = p.add("a", vec![1.0, 2.0], &[2]);
        p.add("b", vec![3.0], &[1, 1]);
        assert!(p.get(a).requires_grad());
        let f = p.frozen();
        assert!(!f.get(a).requires_grad());
        let mut q = ParamStore::<f64>::new();
        q.add("a", vec![0.0, 0.0], &[2]);
        q.add("b", vec![0.0], &[1, 1]);
        q.load_blobs(&p.to_blobs()).unwrap();
        assert!(q.bit_equal(&p));
        let mut wrong = ParamStore::<f64>::new();
        wrong.add("a", vec![0.0; 3], &[3]);
        wrong.add("b", vec![0.0], &[1, 1]);
        assert!(wrong.load_blobs(&p.to_blobs()).is_err());
    }
}

//! Row-major vectorization, `vec(rho)[i d + j] = rho[i, j]`, and the
//! left/right multiplication superoperators that follow from it:
//! `vec(A rho B) = (A kron B^T) vec(rho)`.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::spin::{dagger, eye, kron, CMat, HyperfineBasis};

pub type CVec = Array1<C64>;

/// Which operator space a superoperator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Ground plus excited sector.
    Full,
    /// Ground sector only.
    Ground,
}

/// Dense linear map on vectorized density matrices.
#[derive(Debug, Clone)]
pub struct Superoperator {
    basis: Arc<HyperfineBasis>,
    space: Space,
    matrix: CMat,
}

impl Superoperator {
    pub fn new(basis: Arc<HyperfineBasis>, space: Space, matrix: CMat) -> Result<Self> {
        let d = op_dim(&basis, space);
        if matrix.dim() != (d * d, d * d) {
            return Err(Error::BasisMismatch {
                expected: d * d,
                found: matrix.nrows(),
            });
        }
        Ok(Superoperator { basis, space, matrix })
    }

    pub fn zeros(basis: Arc<HyperfineBasis>, space: Space) -> Self {
        let d = op_dim(&basis, space);
        Superoperator {
            basis,
            space,
            matrix: CMat::zeros((d * d, d * d)),
        }
    }

    pub fn basis(&self) -> &Arc<HyperfineBasis> {
        &self.basis
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Operator-space dimension `d`; the superspace has `d^2`.
    pub fn op_dim(&self) -> usize {
        op_dim(&self.basis, self.space)
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMat {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        unvec(&self.matrix.dot(&vec(rho)), self.op_dim())
    }

    pub fn add(&self, other: &Superoperator) -> Result<Superoperator> {
        self.check_compatible(other)?;
        Ok(Superoperator {
            basis: self.basis.clone(),
            space: self.space,
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn scaled(&self, factor: f64) -> Superoperator {
        Superoperator {
            basis: self.basis.clone(),
            space: self.space,
            matrix: self.matrix.mapv(|z| z * factor),
        }
    }

    pub fn check_compatible(&self, other: &Superoperator) -> Result<()> {
        if self.space != other.space || *self.basis != *other.basis {
            return Err(Error::BasisMismatch {
                expected: self.matrix.nrows(),
                found: other.matrix.nrows(),
            });
        }
        Ok(())
    }

    /// Largest `|Tr(L e_k)|` over superspace basis vectors, relative to the
    /// largest matrix entry.
    pub fn trace_residual(&self) -> f64 {
        let d = self.op_dim();
        let mut worst = 0.0f64;
        for col in 0..d * d {
            let mut s = C64::new(0.0, 0.0);
            for i in 0..d {
                s += self.matrix[[i * d + i, col]];
            }
            worst = worst.max(s.norm());
        }
        let scale = self.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

fn op_dim(basis: &HyperfineBasis, space: Space) -> usize {
    match space {
        Space::Full => basis.dim(),
        Space::Ground => basis.sector_dim(),
    }
}

pub fn vec(rho: &CMat) -> CVec {
    rho.iter().copied().collect()
}

pub fn unvec(v: &CVec, d: usize) -> CMat {
    Array2::from_shape_vec((d, d), v.to_vec()).expect("superspace vector length is d^2")
}

/// `vec(I)`; its conjugate transpose is the left trace functional.
pub fn trace_vector(d: usize) -> CVec {
    vec(&eye(d))
}

/// `rho -> A rho`
pub fn left(a: &CMat) -> CMat {
    kron(a, &eye(a.nrows()))
}

/// `rho -> rho B`
pub fn right(b: &CMat) -> CMat {
    kron(&eye(b.nrows()), &b.t().to_owned())
}

/// `rho -> A rho B`
pub fn sandwich(a: &CMat, b: &CMat) -> CMat {
    kron(a, &b.t().to_owned())
}

/// `rho -> -i [H, rho]`
pub fn commutator(h: &CMat) -> CMat {
    (left(h) - right(h)).mapv(|z| z * C64::new(0.0, -1.0))
}

/// `rho -> {rho, X}`
pub fn anticommutator(x: &CMat) -> CMat {
    left(x) + right(x)
}

/// `rho -> rate (2 A rho A^dagger - {rho, A^dagger A})`
pub fn lindblad(a: &CMat, rate: f64) -> CMat {
    let ad = dagger(a);
    let ada = ad.dot(a);
    (sandwich(a, &ad).mapv(|z| z * 2.0) - anticommutator(&ada)).mapv(|z| z * rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(d: usize, rng: &mut impl Rng) -> CMat {
        CMat::from_shape_fn((d, d), |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn sandwich_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, r) = (random(5, &mut rng), random(5, &mut rng), random(5, &mut rng));
        let direct = a.dot(&r).dot(&b);
        let via = unvec(&sandwich(&a, &b).dot(&vec(&r)), 5);
        assert!(max_abs(&(direct - via)) < 1e-12);
    }

    #[test]
    fn lindblad_is_trace_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(4, &mut rng);
        let l = lindblad(&a, 1.7);
        let t = trace_vector(4);
        let row = t.dot(&l);
        assert!(row.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn commutator_kills_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random(6, &mut rng);
        let out = commutator(&h).dot(&trace_vector(6));
        assert!(out.iter().all(|z| z.norm() < 1e-12));
    }
}

//! Smallest generalized eigenpairs of `W φ = λ M φ` with diagonal `M`.
//!
//! Large problems use block Lanczos on the shift-inverted operator
//! `(W + εM)⁻¹ M` with full reorthogonalization in the M-inner product; the
//! Ritz pairs are extracted by a Rayleigh-Ritz projection of `W` itself, so
//! their accuracy does not depend on the (tiny) regularizing shift. Small
//! problems go through a dense symmetric eigensolver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::envelope::EnvelopeCholesky;
use crate::error::{Error, Result};
use crate::geometry::{CsrMatrix, LaplacianPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    /// Dense below `dense_threshold` vertices, Lanczos otherwise.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenOptions {
    pub method: SolverMethod,
    pub dense_threshold: usize,
    /// Krylov block p; must exceed the largest expected multiplicity.
    pub block_size: usize,
    /// Relative residual required of every returned pair.
    pub tolerance: f64,
    /// Cap on the Krylov dimension as a multiple of the wanted pair count.
    pub max_dimension_factor: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            dense_threshold: 500,
            block_size: 8,
            tolerance: 1e-9,
            max_dimension_factor: 8.0,
            seed: 0x5eed,
        }
    }
}

pub(crate) struct RawEigen {
    pub values: Vec<f64>,
    /// n×count, M-orthonormal columns.
    pub vectors: DMatrix<f64>,
}

pub(crate) fn smallest_eigenpairs(lap: &LaplacianPair, count: usize, opts: &EigenOptions) -> Result<RawEigen> {
    let n = lap.n();
    if count == 0 || count > n {
        return Err(Error::InvalidInput(format!(
            "requested {count} eigenpairs of a {n}-vertex operator"
        )));
    }
    let dense = match opts.method {
        SolverMethod::Dense => true,
        SolverMethod::Lanczos => false,
        SolverMethod::Auto => n < opts.dense_threshold,
    };
    if dense || count + 2 * opts.block_size >= n {
        dense_eigenpairs(lap, count)
    } else {
        lanczos_eigenpairs(lap, count, opts)
    }
}

pub(crate) fn dense_eigenpairs(lap: &LaplacianPair, count: usize) -> Result<RawEigen> {
    let n = lap.n();
    let inv_sqrt: Vec<f64> = lap.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut a = lap.stiffness.to_dense();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // Exact symmetry for the solver.
    let a = (&a + a.transpose()) * 0.5;
    let (values, y) = symmetric_eigen(&a, count)?;
    let vectors = DMatrix::from_fn(n, count, |i, j| y[(i, j)] * inv_sqrt[i]);
    Ok(RawEigen { values, vectors })
}

/// The `count` smallest eigenpairs of a dense symmetric matrix, ascending.
fn symmetric_eigen(a: &DMatrix<f64>, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = a.nrows();
    let mat = faer::Mat::<f64>::from_fn(m, m, |i, j| a[(i, j)]);
    let eig = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NotConverged(format!("dense symmetric eigensolver: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| s[x].total_cmp(&s[y]).then(x.cmp(&y)));
    let values = order[..count].iter().map(|&k| s[k]).collect();
    let vectors = DMatrix::from_fn(m, count, |i, j| u[(i, order[j])]);
    Ok((values, vectors))
}

/// M-orthonormal Krylov basis stored column-wise, with `W` applied to every
/// column and the projection `Vᵀ W V` kept up to date.
struct ProjectedBasis<'a> {
    w: &'a CsrMatrix,
    mass: &'a [f64],
    vectors: DMatrix<f64>,
    w_vectors: DMatrix<f64>,
    projected: DMatrix<f64>,
    len: usize,
}

impl<'a> ProjectedBasis<'a> {
    fn new(w: &'a CsrMatrix, mass: &'a [f64], capacity: usize) -> Self {
        let n = mass.len();
        Self {
            w,
            mass,
            vectors: DMatrix::zeros(n, capacity),
            w_vectors: DMatrix::zeros(n, capacity),
            projected: DMatrix::zeros(capacity, capacity),
            len: 0,
        }
    }

    fn len(&self) -> usize {
        self.len
    }

    fn capacity(&self) -> usize {
        self.vectors.ncols()
    }

    /// Orthonormalize the columns of `block` against the basis and each
    /// other, appending those that are not numerically dependent. Returns
    /// the number of columns appended.
    fn push_block(&mut self, mut block: DMatrix<f64>) -> usize {
        let m = self.len;
        let room = self.capacity() - m;
        if room == 0 || block.ncols() == 0 {
            return 0;
        }
        let mass = DVector::from_column_slice(self.mass);
        let norm0: Vec<f64> = block.column_iter().map(|c| mass_norm(c.as_slice(), self.mass)).collect();
        if m > 0 {
            let v = self.vectors.columns(0, m);
            // Two passes of block classical Gram-Schmidt in the M-inner product.
            for _ in 0..2 {
                let mut mb = block.clone();
                for mut col in mb.column_iter_mut() {
                    col.component_mul_assign(&mass);
                }
                let coeffs = v.tr_mul(&mb);
                block.gemm(-1.0, &v, &coeffs, 1.0);
            }
        }
        let mut accepted = 0;
        for j in 0..block.ncols() {
            if accepted == room {
                break;
            }
            let mut u = block.column(j).into_owned();
            if !(norm0[j] > 0.0 && norm0[j].is_finite()) {
                continue;
            }
            for _ in 0..2 {
                for i in m..m + accepted {
                    let c: f64 = self.vectors.column(i).iter().zip(u.iter()).zip(self.mass).map(|((a, b), w)| a * b * w).sum();
                    u.axpy(-c, &self.vectors.column(i), 1.0);
                }
            }
            let norm = mass_norm(u.as_slice(), self.mass);
            if !(norm > 1e-10 * norm0[j]) {
                continue;
            }
            u /= norm;
            self.vectors.set_column(m + accepted, &u);
            accepted += 1;
        }
        if accepted == 0 {
            return 0;
        }
        let end = m + accepted;
        for j in m..end {
            let mut wu = self.w_vectors.column_mut(j);
            self.w.mul_vec_into(self.vectors.column(j).as_slice(), wu.as_mut_slice());
        }
        let h = self.vectors.columns(0, end).tr_mul(&self.w_vectors.columns(m, accepted));
        for j in 0..accepted {
            for i in 0..end {
                let value = if i >= m { 0.5 * (h[(i, j)] + h[(m + j, i - m)]) } else { h[(i, j)] };
                self.projected[(i, m + j)] = value;
                self.projected[(m + j, i)] = value;
            }
        }
        self.len = end;
        accepted
    }
}

fn mass_norm(u: &[f64], mass: &[f64]) -> f64 {
    u.iter().zip(mass).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

fn lanczos_eigenpairs(lap: &LaplacianPair, count: usize, opts: &EigenOptions) -> Result<RawEigen> {
    let n = lap.n();
    let w = &lap.stiffness;
    let mass = &lap.mass;
    let trace: f64 = w.diagonal().iter().sum();
    let eps = 1e-8 * trace / n as f64;
    let shift: Vec<f64> = mass.iter().map(|m| eps * m).collect();
    let chol = EnvelopeCholesky::factor(w, &shift)?;

    let p = opts.block_size.max(1);
    let max_dim = ((opts.max_dimension_factor * count as f64) as usize + 2 * p).max(24 * p).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (n as u64).wrapping_mul(0x9e37_79b9));
    let mut basis = ProjectedBasis::new(w, mass, max_dim);
    let mut work = Vec::with_capacity(n);
    let random = |rng: &mut ChaCha8Rng, cols: usize| DMatrix::from_fn(n, cols, |_, _| rng.gen_range(-1.0..1.0));

    // Component indicators span the exact kernel of W. Seeding the basis with
    // them keeps the regularized inverse from amplifying kernel round-off
    // into every later Krylov vector.
    let components = connected_components(w);
    let mut kernel = DMatrix::zeros(n, components.len().min(max_dim));
    for (c, component) in components.iter().take(max_dim).enumerate() {
        for &i in component {
            kernel[(i, c)] = 1.0;
        }
    }
    basis.push_block(kernel);

    let mut block = random(&mut rng, p);
    // Convergence of the last wanted pairs typically needs a Krylov
    // dimension of 4-5 times the pair count; earlier checks are wasted.
    let mut next_check = (7 * count / 2).max(count + p).min(max_dim);
    let mut history: Option<(usize, f64)> = None;
    loop {
        let block_start = basis.len();
        let mut added = basis.push_block(block);
        // Deflated directions are replaced by fresh random vectors.
        for _ in 0..3 {
            if added >= p || basis.len() >= max_dim {
                break;
            }
            added += basis.push_block(random(&mut rng, p - added));
        }

        let m = basis.len();
        if m >= next_check || m >= max_dim {
            let (worst, result) = rayleigh_ritz(&basis, count, opts.tolerance)?;
            if let Some(result) = result {
                return Ok(result);
            }
            if m >= max_dim {
                return Err(Error::NotConverged(format!(
                    "Lanczos reached dimension {m} without converging {count} pairs"
                )));
            }
            // Residuals decay roughly geometrically with the Krylov
            // dimension; aim the next check at the extrapolated crossing.
            let mut step = (m / 4).max(2 * p);
            if let Some((m0, r0)) = history {
                if worst < r0 && worst > 0.0 {
                    let rate = (worst / r0).ln() / (m - m0) as f64;
                    let needed = ((opts.tolerance / worst).ln() / rate * 1.1).ceil() as usize;
                    step = needed.clamp(p, m);
                }
            }
            history = Some((m, worst));
            next_check = (m + step).min(max_dim);
        }

        // Next Krylov block from the block just added.
        let fresh = basis.len() - block_start;
        block = DMatrix::zeros(n, fresh);
        for j in 0..fresh {
            let mut x = block.column_mut(j);
            for ((xi, vi), mi) in x.iter_mut().zip(basis.vectors.column(block_start + j).iter()).zip(mass) {
                *xi = vi * mi;
            }
            chol.solve_in_place(x.as_mut_slice(), &mut work);
        }
    }
}

fn connected_components(w: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = w.n_rows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![root];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &u in w.row(v).0 {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Ritz pairs of the basis. Returns the worst relative residual among the
/// wanted pairs, and the pairs themselves once all meet `tolerance`.
fn rayleigh_ritz(basis: &ProjectedBasis, count: usize, tolerance: f64) -> Result<(f64, Option<RawEigen>)> {
    let m = basis.len();
    if m < count + 1 {
        return Ok((f64::INFINITY, None));
    }
    let mass = basis.mass;
    let n = mass.len();
    let (values, y) = symmetric_eigen(&basis.projected.view((0, 0), (m, m)).into_owned(), count + 1)?;
    let next_value = values[count];
    let values = values[..count].to_vec();
    let y = y.columns(0, count).into_owned();
    let vectors = basis.vectors.columns(0, m) * &y;
    let wvectors = basis.w_vectors.columns(0, m) * &y;
    let mut worst = 0.0f64;
    for slot in 0..count {
        let theta = values[slot];
        let phi = vectors.column(slot);
        let wphi = wvectors.column(slot);
        let mut res2 = 0.0f64;
        let mut w2 = 0.0f64;
        let mut mphi2 = 0.0f64;
        for i in 0..n {
            let mp = mass[i] * phi[i];
            let r = wphi[i] - theta * mp;
            res2 += r * r;
            w2 += wphi[i] * wphi[i];
            mphi2 += mp * mp;
        }
        // The zero mode has no scale of its own; measure it against the
        // first nonzero Ritz value.
        let reference = if slot == 0 {
            w2.sqrt().max(values.get(1).copied().unwrap_or(next_value).abs() * mphi2.sqrt())
        } else {
            w2.sqrt()
        };
        let rel = res2.sqrt() / reference;
        worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
    }
    if worst <= tolerance {
        Ok((worst, Some(RawEigen { values, vectors })))
    } else {
        Ok((worst, None))
    }
}

//! Sparse complex operators in coordinate form.
//!
//! Excitation conservation makes every system operator block-diagonal, so
//! triplet storage plus per-block dense conversion covers all solver needs
//! without a general sparse-algebra dependency.

use crate::error::{Error, Result};
use crate::linalg::C64;
use nalgebra::{DMatrix, DVector};
use std::io::Write;

/// Complex sparse matrix with sorted, duplicate-free coordinate storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
    hermitian: bool,
}

impl SparseOperator {
    /// Builds from raw triplets: sorts by (row, col), merges duplicates,
    /// drops exact zeros. The hermitian flag starts unset.
    pub fn new(dim: usize, triplets: Vec<(usize, usize, C64)>) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= dim || c >= dim {
                return Err(Error::validation(format!(
                    "entry ({r}, {c}) outside {dim}x{dim} operator"
                )));
            }
        }
        let mut entries = triplets;
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != C64::new(0.0, 0.0));
        Ok(SparseOperator { dim, entries: merged, hermitian: false })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseOperator { dim, entries: Vec::new(), hermitian: true }
    }

    pub fn identity(dim: usize) -> Self {
        let entries = (0..dim).map(|i| (i, i, C64::new(1.0, 0.0))).collect();
        SparseOperator { dim, entries, hermitian: true }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|&(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    /// max |A - A^dag| over all entries.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for &(r, c, v) in &self.entries {
            let mirror = self.get(c, r);
            worst = worst.max((v - mirror.conj()).norm());
        }
        worst
    }

    /// Verifies the Hermiticity contract and sets the flag; an assembly that
    /// fails this is an internal bug, reported as a numerical failure.
    pub fn assert_hermitian(mut self) -> Result<Self> {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let defect = self.hermiticity_defect();
        if defect > 1e-12 * scale {
            return Err(Error::numerical(format!(
                "operator assembly is not Hermitian: defect {defect:.3e} vs scale {scale:.3e}"
            )));
        }
        self.hermitian = true;
        Ok(self)
    }

    fn get(&self, r: usize, c: usize) -> C64 {
        match self.entries.binary_search_by_key(&(r, c), |&(er, ec, _)| (er, ec)) {
            Ok(i) => self.entries[i].2,
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn matvec(&self, x: &DVector<C64>) -> DVector<C64> {
        debug_assert_eq!(x.len(), self.dim);
        let mut y = DVector::zeros(self.dim);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// <psi| A |psi>.
    pub fn expectation(&self, psi: &DVector<C64>) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for &(r, c, v) in &self.entries {
            acc += psi[r].conj() * v * psi[c];
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn adjoint(&self) -> SparseOperator {
        let entries = self.entries.iter().map(|&(r, c, v)| (c, r, v.conj())).collect();
        let mut op = SparseOperator::new(self.dim, entries).expect("adjoint preserves bounds");
        op.hermitian = self.hermitian;
        op
    }

    pub fn scale(&self, factor: C64) -> SparseOperator {
        let entries = self.entries.iter().map(|&(r, c, v)| (r, c, v * factor)).collect();
        let mut op = SparseOperator::new(self.dim, entries).expect("scaling preserves bounds");
        op.hermitian = self.hermitian && factor.im == 0.0;
        op
    }

    /// Weighted sum of operators of equal dimension. The hermitian flag is
    /// re-derived from the numerical defect of the result.
    pub fn lincomb(terms: &[(C64, &SparseOperator)]) -> Result<SparseOperator> {
        let dim = match terms.first() {
            Some((_, op)) => op.dim,
            None => return Err(Error::validation("lincomb needs at least one term")),
        };
        let mut triplets = Vec::new();
        for (coeff, op) in terms {
            if op.dim != dim {
                return Err(Error::validation(format!(
                    "lincomb dimension mismatch: {} vs {}",
                    op.dim, dim
                )));
            }
            triplets.extend(op.entries.iter().map(|&(r, c, v)| (r, c, v * coeff)));
        }
        let mut out = SparseOperator::new(dim, triplets)?;
        let scale = out.max_abs();
        if scale == 0.0 || out.hermiticity_defect() <= 1e-12 * scale {
            out.hermitian = true;
        }
        Ok(out)
    }

    /// Product A * B.
    pub fn matmul(&self, other: &SparseOperator) -> Result<SparseOperator> {
        if self.dim != other.dim {
            return Err(Error::validation("matmul dimension mismatch"));
        }
        // Rows of `other` grouped for lookups.
        let mut row_start = vec![other.entries.len(); other.dim + 1];
        for (i, &(r, _, _)) in other.entries.iter().enumerate() {
            if row_start[r] == other.entries.len() {
                row_start[r] = i;
            }
        }
        row_start[other.dim] = other.entries.len();
        for r in (0..other.dim).rev() {
            if row_start[r] > row_start[r + 1] {
                row_start[r] = row_start[r + 1];
            }
        }
        let mut triplets = Vec::new();
        for &(r, k, va) in &self.entries {
            for idx in row_start[k]..row_start[k + 1] {
                let (_, c, vb) = other.entries[idx];
                triplets.push((r, c, va * vb));
            }
        }
        SparseOperator::new(self.dim, triplets)
    }

    /// Submatrix on the given (sorted, unique) index set, reindexed densely.
    pub fn restrict(&self, indices: &[usize]) -> Result<DMatrix<C64>> {
        let mut map = vec![usize::MAX; self.dim];
        for (new, &old) in indices.iter().enumerate() {
            if old >= self.dim {
                return Err(Error::validation(format!("restrict index {old} out of range")));
            }
            map[old] = new;
        }
        let mut m = DMatrix::zeros(indices.len(), indices.len());
        for &(r, c, v) in &self.entries {
            if map[r] != usize::MAX && map[c] != usize::MAX {
                m[(map[r], map[c])] += v;
            }
        }
        Ok(m)
    }

    /// Largest entry magnitude connecting states assigned to different
    /// blocks, given a per-index block id.
    pub fn max_inter_block_entry(&self, block_of: &[usize]) -> f64 {
        self.entries
            .iter()
            .filter(|&&(r, c, _)| block_of[r] != block_of[c])
            .map(|&(_, _, v)| v.norm())
            .fold(0.0, f64::max)
    }

    /// Coordinate-list text dump: header `dim nnz hermitian`, then one
    /// `row col re im` line per entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.entries.len(), u8::from(self.hermitian))?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{} {} {:.16e} {:.16e}", r, c, v.re, v.im)?;
        }
        Ok(())
    }
}

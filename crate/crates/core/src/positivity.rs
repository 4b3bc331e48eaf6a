//! Moment matrices and positive-semidefiniteness tests.

use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::{One, Zero};

use crate::coeff::Q;
use crate::error::{Error, Result};
use crate::loops::MomentTable;
use crate::words::{adjoint, enumerate_words, Alphabet, Word};

/// Default PSD tolerance, relative to the spectral norm.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Word-indexed symmetric matrix `M[u][v] = m(u* v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatrix {
    pub basis: Vec<Word>,
    pub entries: DMatrix<f64>,
}

impl MomentMatrix {
    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Leading principal block of size `k`.
    pub fn leading(&self, k: usize) -> MomentMatrix {
        MomentMatrix {
            basis: self.basis[..k].to_vec(),
            entries: self.entries.view((0, 0), (k, k)).into_owned(),
        }
    }
}

/// Result of a PSD test.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdReport {
    pub feasible: bool,
    pub min_eigenvalue: f64,
    pub tolerance: f64,
    pub spectral_norm: f64,
    /// Size of the first leading principal minor with negative determinant.
    pub first_negative_minor: Option<usize>,
}

impl PsdReport {
    /// Report for a point rejected before any matrix was formed.
    pub fn infeasible(tolerance: f64) -> Self {
        PsdReport {
            feasible: false,
            min_eigenvalue: f64::NEG_INFINITY,
            tolerance,
            spectral_norm: f64::NAN,
            first_negative_minor: None,
        }
    }
}

/// One-matrix Hankel matrix `H[i][j] = m_{i+j}` from `m_0..m_{2n}`.
pub fn hankel_from_sequence(m: &[f64]) -> Result<MomentMatrix> {
    if m.is_empty() || m.len().is_multiple_of(2) {
        return Err(Error::invalid("Hankel sequence needs an odd number of moments m_0..m_2n"));
    }
    if m[0] != 1.0 {
        return Err(Error::invalid(format!("m_0 must be 1, got {}", m[0])));
    }
    let n = m.len() / 2 + 1;
    Ok(MomentMatrix {
        basis: (0..n).map(|k| Word::from_indices(&vec![0; k])).collect(),
        entries: DMatrix::from_fn(n, n, |i, j| m[i + j]),
    })
}

/// Moment matrix on the graded-lexicographic basis of words of length ≤ `lambda`.
pub fn build_moment_matrix(table: &MomentTable, alphabet_size: usize, lambda: usize) -> Result<MomentMatrix> {
    build_moment_matrix_on(table, enumerate_words(alphabet_size, lambda))
}

/// Moment matrix on an explicit word basis.
pub fn build_moment_matrix_on(table: &MomentTable, basis: Vec<Word>) -> Result<MomentMatrix> {
    let n = basis.len();
    let mut entries = DMatrix::zeros(n, n);
    let alphabet = Alphabet::new(table.alphabet_size().max(1));
    for i in 0..n {
        let ui = adjoint(&basis[i]);
        for j in i..n {
            let w = ui.concat(&basis[j]);
            let v = table.get_word(&w).ok_or_else(|| Error::MissingMoment(alphabet.render(&w)))?;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(MomentMatrix { basis, entries })
}

/// Smallest eigenvalue test: feasible iff `λ_min ≥ -tol · max(1, ‖M‖)`.
pub fn psd_check(m: &MomentMatrix, tol: f64) -> Result<PsdReport> {
    if m.entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("moment matrix entry".into()));
    }
    if m.size() == 0 {
        return Err(Error::invalid("empty moment matrix"));
    }
    let eig = SymmetricEigen::new(m.entries.clone());
    let min = eig.eigenvalues.min();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let feasible = min >= -tol * norm.max(1.0);
    let first_negative_minor = if feasible { None } else { first_negative_minor(&m.entries) };
    Ok(PsdReport { feasible, min_eigenvalue: min, tolerance: tol, spectral_norm: norm, first_negative_minor })
}

fn first_negative_minor(a: &DMatrix<f64>) -> Option<usize> {
    (1..=a.nrows()).find(|&k| a.view((0, 0), (k, k)).into_owned().determinant() < 0.0)
}

/// Exact Hankel matrix from rational moments.
pub fn hankel_exact(m: &[Q]) -> Result<Vec<Vec<Q>>> {
    if m.is_empty() || m.len().is_multiple_of(2) {
        return Err(Error::invalid("Hankel sequence needs an odd number of moments m_0..m_2n"));
    }
    if !m[0].is_one() {
        return Err(Error::invalid("m_0 must be 1"));
    }
    let n = m.len() / 2 + 1;
    Ok((0..n).map(|i| (0..n).map(|j| m[i + j].clone()).collect()).collect())
}

/// Exact leading principal minors `det M[..k, ..k]` for `k = 1..=n`
/// (fraction-free Bareiss elimination, no pivoting past a zero minor).
pub fn exact_leading_minors(a: &[Vec<Q>]) -> Vec<Q> {
    let n = a.len();
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let mut m: Vec<Vec<Q>> = a[..k].iter().map(|r| r[..k].to_vec()).collect();
        out.push(det(&mut m));
    }
    out
}

fn det(m: &mut [Vec<Q>]) -> Q {
    let n = m.len();
    let mut sign = Q::one();
    let mut d = Q::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !m[r][c].is_zero()) else { return Q::zero() };
        if p != c {
            m.swap(p, c);
            sign = -sign;
        }
        let piv = m[c][c].clone();
        d *= &piv;
        for r in c + 1..n {
            if m[r][c].is_zero() {
                continue;
            }
            let f = &m[r][c] / &piv;
            for j in c..n {
                let x = &f * &m[c][j];
                m[r][j] -= x;
            }
        }
    }
    sign * d
}

/// Partial Carleman sum `Σ_k m_{2k}^{-1/(2k)}` over `m_2, m_4, ..., m_{2n}`.
pub fn carleman_indicator(even_moments: &[f64]) -> Result<f64> {
    even_moments
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if !(m > 0.0) {
                return Err(Error::invalid(format!("even moment m_{} = {m} is not positive", 2 * (i + 1))));
            }
            Ok(m.powf(-1.0 / (2.0 * (i + 1) as f64)))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::q;
    use crate::words::Letter;
    use proptest::prelude::*;

    #[test]
    fn gaussian_hankel() {
        let m = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0];
        let h = hankel_from_sequence(&m).unwrap();
        assert_eq!(h.size(), 4);
        let r = psd_check(&h, DEFAULT_TOL).unwrap();
        assert!(r.feasible && r.min_eigenvalue > 0.0);
        let exact = hankel_exact(&m.map(|x| q(x as i64))).unwrap();
        assert_eq!(exact_leading_minors(&exact), vec![q(1), q(1), q(2), q(12)]);
    }

    #[test]
    fn small_hankels() {
        let h = hankel_from_sequence(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(h.entries, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let r = psd_check(&h, DEFAULT_TOL).unwrap();
        assert!(r.feasible);
        assert_eq!(r.min_eigenvalue, 0.0);

        let h = hankel_from_sequence(&[1.0, 0.5, 0.2]).unwrap();
        assert!((h.entries.determinant() + 0.05).abs() < 1e-15);
        let r = psd_check(&h, DEFAULT_TOL).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.first_negative_minor, Some(2));

        assert!(hankel_from_sequence(&[2.0, 0.0, 1.0]).is_err());
        assert!(hankel_from_sequence(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn moment_matrices() {
        let t = MomentTable::from_sequence(&[1.0, 0.0, 0.3, 0.0, 0.2]);
        let m = build_moment_matrix(&t, 1, 2).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.3, 0.0, 0.3, 0.0, 0.3, 0.0, 0.2]);
        assert_eq!(m.entries, want);

        let a = Alphabet::new(2);
        let w = |s: &str| a.parse(s).unwrap();
        let t = MomentTable::from_pairs(
            2,
            [(w("A"), 0.1), (w("B"), 0.2), (w("AA"), 1.0), (w("AB"), 0.3), (w("BB"), 2.0)],
        );
        let m = build_moment_matrix(&t, 2, 1).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.2, 0.1, 1.0, 0.3, 0.2, 0.3, 2.0]);
        assert_eq!(m.entries, want);

        let m = build_moment_matrix(&t, 2, 0).unwrap();
        assert_eq!(m.entries, DMatrix::from_element(1, 1, 1.0));

        assert!(matches!(build_moment_matrix(&t, 2, 2), Err(Error::MissingMoment(_))));
    }

    #[test]
    fn non_finite_entries_rejected() {
        let h = hankel_from_sequence(&[1.0, f64::NAN, 1.0]).unwrap();
        assert!(matches!(psd_check(&h, DEFAULT_TOL), Err(Error::NonFinite(_))));
    }

    #[test]
    fn carleman() {
        let c = carleman_indicator(&[1.0, 3.0, 15.0]).unwrap();
        assert!((c - (1.0 + 3f64.powf(-0.25) + 15f64.powf(-1.0 / 6.0))).abs() < 1e-15);
        assert!((c - 2.396).abs() < 1e-3);
        assert_eq!(carleman_indicator(&[1.0; 7]).unwrap(), 7.0);
        assert!(carleman_indicator(&[1.0, 0.0]).is_err());
        let fact: Vec<f64> = (1..=8).map(|k| (1..=2 * k).map(|i| i as f64).product()).collect();
        let partial: Vec<f64> = (1..=8).map(|n| carleman_indicator(&fact[..n]).unwrap()).collect();
        assert!(partial.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] < 0.5));
    }

    fn semicircle_table(max: usize) -> MomentTable {
        // Catalan moments of the unit semicircle
        let mut m = vec![0.0; max + 1];
        m[0] = 1.0;
        let mut c = 1.0;
        for k in 1..=max / 2 {
            c = c * 2.0 * (2.0 * k as f64 - 1.0) / (k as f64 + 1.0);
            m[2 * k] = c;
        }
        MomentTable::from_sequence(&m)
    }

    #[test]
    fn one_matrix_reduces_to_hankel() {
        let t = semicircle_table(12);
        let seq: Vec<f64> = (0..=12).map(|k| t.m(k).unwrap()).collect();
        let a = build_moment_matrix(&t, 1, 6).unwrap();
        let b = hankel_from_sequence(&seq).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.basis[3], Word::power(Letter(0), 3));
    }

    proptest! {
        #[test]
        fn empirical_measures_are_psd(points in proptest::collection::vec((-2.0f64..2.0, 0.01f64..1.0), 1..12)) {
            let total: f64 = points.iter().map(|p| p.1).sum();
            let m: Vec<f64> = (0..=8)
                .map(|k| points.iter().map(|&(x, w)| w / total * x.powi(k)).sum())
                .collect();
            let mut m = m;
            m[0] = 1.0;
            let h = hankel_from_sequence(&m).unwrap();
            prop_assert!(psd_check(&h, 1e-8).unwrap().feasible);
        }

        #[test]
        fn nesting(points in proptest::collection::vec((-2.0f64..2.0, 0.01f64..1.0), 1..6), shift in -0.5f64..0.5) {
            let total: f64 = points.iter().map(|p| p.1).sum();
            let mut m: Vec<f64> = (0..=8)
                .map(|k| points.iter().map(|&(x, w)| w / total * x.powi(k)).sum())
                .collect();
            m[0] = 1.0;
            m[4] += shift;
            let t = MomentTable::from_sequence(&m);
            let full = build_moment_matrix(&t, 1, 4).unwrap();
            if psd_check(&full, DEFAULT_TOL).unwrap().feasible {
                for l in 0..4 {
                    let sub = build_moment_matrix(&t, 1, l).unwrap();
                    prop_assert!(psd_check(&sub, DEFAULT_TOL).unwrap().feasible);
                }
            }
        }

        #[test]
        fn moment_matrix_is_symmetric(vals in proptest::collection::vec(-1.0f64..1.0, 30)) {
            let mut t = MomentTable::new(2);
            for (i, m) in crate::words::enumerate_moments(2, 4).into_iter().enumerate() {
                t.insert(m.word(), vals[i % vals.len()]);
            }
            let m = build_moment_matrix(&t, 2, 2).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(m.entries.clone(), m.entries.transpose());
        }
    }
}

//! Extremality of finite-outcome instruments.
//!
//! Let `{K_{i,k}}` be minimal Kraus sets of the branches of an instrument.
//! In a minimal dilation, a bounded operator commuting with the outcome
//! projections is a block tuple `(D_i)`, one `r_i × r_i` block per outcome
//! with `r_i` the Kraus rank, so the general perturbation condition reduces
//! to finitely many coefficients.
//! The instrument is extreme iff the only block tuple `(D_i)` with
//!
//! ```text
//! Σ_i Σ_{k,l} (D_i)_{kl} K_{i,k}† K_{i,l} = 0
//! ```
//!
//! is zero. The map is †-equivariant, so it suffices to look at Hermitian
//! blocks; each `D_i` is realified in an orthonormal basis of `r_i × r_i`
//! Hermitian matrices and the kernel is read off an SVD. A kernel element is
//! an admissible two-sided perturbation: the branches with coefficient
//! matrices `1 ± tD_i` stay normalized, and stay completely positive for
//! small `t`.

use nalgebra::DMatrix;

use crate::devices::{kraus_with_spectrum, require_valid, Device, Instrument, KrausSet};
use crate::error::{Error, Result};
use crate::matcore::{self, vec_columns, ComplexMatrix, Tolerance, C64, ONE, ZERO};

/// Orthonormal basis (under `Tr[AB]`) of `n × n` Hermitian matrices: diagonal
/// units first, then `(E_kl + E_lk)/√2` and `i(E_kl − E_lk)/√2` for `k < l`.
pub fn hermitian_basis(n: usize) -> Vec<ComplexMatrix> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(n * n);
    for k in 0..n {
        basis.push(ComplexMatrix::from_fn(n, n, |a, b| {
            if a == k && b == k {
                ONE
            } else {
                ZERO
            }
        }));
    }
    for k in 0..n {
        for l in k + 1..n {
            basis.push(ComplexMatrix::from_fn(n, n, |a, b| match (a, b) {
                (a, b) if a == k && b == l => C64::new(s, 0.0),
                (a, b) if a == l && b == k => C64::new(s, 0.0),
                _ => ZERO,
            }));
            basis.push(ComplexMatrix::from_fn(n, n, |a, b| match (a, b) {
                (a, b) if a == k && b == l => C64::new(0.0, s),
                (a, b) if a == l && b == k => C64::new(0.0, -s),
                _ => ZERO,
            }));
        }
    }
    basis
}

/// Coordinates of a Hermitian matrix in [`hermitian_basis`].
pub fn hermitian_coordinates(h: &ComplexMatrix) -> Vec<f64> {
    let n = h.rows();
    let r2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * n);
    for k in 0..n {
        out.push(h[(k, k)].re);
    }
    for k in 0..n {
        for l in k + 1..n {
            out.push(r2 * h[(k, l)].re);
            out.push(r2 * h[(k, l)].im);
        }
    }
    out
}

fn combine(basis: &[ComplexMatrix], coords: &[f64], n: usize) -> ComplexMatrix {
    let mut acc = ComplexMatrix::zeros(n, n);
    for (b, &c) in basis.iter().zip(coords) {
        if c != 0.0 {
            acc += &b.scale(c);
        }
    }
    acc
}

/// Kernel of the extremality criterion at a device.
#[derive(Debug, Clone)]
pub struct PerturbationBasis {
    device: Device,
    instrument: Instrument,
    kraus: Vec<KrausSet>,
    blocks: Vec<(String, usize)>,
    basis: Vec<Vec<ComplexMatrix>>,
    singular_values: Vec<f64>,
    threshold: f64,
    borderline: bool,
}

impl PerturbationBasis {
    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn instrument(&self) -> &Instrument {
        &self.instrument
    }

    /// Minimal Kraus sets the block coordinates refer to.
    pub fn kraus(&self) -> &[KrausSet] {
        &self.kraus
    }

    /// `(label, r_i)` per outcome.
    pub fn blocks(&self) -> &[(String, usize)] {
        &self.blocks
    }

    /// Each element is one Hermitian `r_i × r_i` block per outcome.
    pub fn basis(&self) -> &[Vec<ComplexMatrix>] {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Number of real Hermitian block parameters, `Σ r_i²`.
    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(|(_, r)| r * r).sum()
    }

    /// Singular values of the realified criterion matrix, ascending, padded
    /// with zeros up to the parameter count.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_borderline(&self) -> bool {
        self.borderline
    }

    /// `Σ_i Σ_{kl} (D_i)_{kl} K_{i,k}† K_{i,l}` on `C^{d_in}`.
    pub fn criterion(&self, direction: &[ComplexMatrix]) -> Result<ComplexMatrix> {
        criterion_map(&self.kraus, direction, self.instrument.d_in())
    }

    /// Choi-space image `Δ_i = Σ_{kl} (D_i)_{kl} |K_{i,l}⟫⟪K_{i,k}|` of a block direction.
    pub fn choi_direction(&self, direction: &[ComplexMatrix]) -> Result<Vec<ComplexMatrix>> {
        choi_direction(&self.kraus, direction)
    }
}

fn check_direction_shape(kraus: &[KrausSet], direction: &[ComplexMatrix]) -> Result<()> {
    if direction.len() != kraus.len() {
        return Err(Error::Dimension(format!(
            "direction has {} blocks, expected {}",
            direction.len(),
            kraus.len()
        )));
    }
    for (i, (set, d)) in kraus.iter().zip(direction).enumerate() {
        if d.rows() != set.len() || d.cols() != set.len() {
            return Err(Error::Dimension(format!(
                "block {i} is {}x{}, expected {}x{}",
                d.rows(),
                d.cols(),
                set.len(),
                set.len()
            )));
        }
    }
    Ok(())
}

pub(crate) fn criterion_map(
    kraus: &[KrausSet],
    direction: &[ComplexMatrix],
    d_in: usize,
) -> Result<ComplexMatrix> {
    check_direction_shape(kraus, direction)?;
    let mut acc = ComplexMatrix::zeros(d_in, d_in);
    for (set, d) in kraus.iter().zip(direction) {
        let ops = set.operators();
        for (k, kk) in ops.iter().enumerate() {
            for (l, kl) in ops.iter().enumerate() {
                let c = d[(k, l)];
                if c != ZERO {
                    acc += &(&kk.adjoint() * kl).scale_c(c);
                }
            }
        }
    }
    Ok(acc)
}

pub(crate) fn choi_direction(
    kraus: &[KrausSet],
    direction: &[ComplexMatrix],
) -> Result<Vec<ComplexMatrix>> {
    check_direction_shape(kraus, direction)?;
    Ok(kraus
        .iter()
        .zip(direction)
        .map(|(set, d)| {
            let n = set.d_in() * set.d_out();
            let vecs: Vec<Vec<C64>> = set.operators().iter().map(vec_columns).collect();
            let mut acc = ComplexMatrix::zeros(n, n);
            for (k, vk) in vecs.iter().enumerate() {
                for (l, vl) in vecs.iter().enumerate() {
                    let c = d[(k, l)];
                    if c != ZERO {
                        acc += &ComplexMatrix::outer(vl, vk).scale_c(c);
                    }
                }
            }
            acc
        })
        .collect())
}

fn in_band(x: f64, thr: f64) -> bool {
    x >= thr / 10.0 && x <= thr * 10.0
}

/// Admissible perturbation space of a valid instrument.
pub fn perturbation_space(i: &Instrument, tol: Tolerance) -> Result<PerturbationBasis> {
    perturbation_space_of(Device::Instrument(i.clone()), i.clone(), tol)
}

fn perturbation_space_of(
    device: Device,
    inst: Instrument,
    tol: Tolerance,
) -> Result<PerturbationBasis> {
    require_valid(&device, tol)?;
    let d_in = inst.d_in();
    let mut borderline = false;
    let mut kraus = Vec::with_capacity(inst.branches().len());
    for (_, b) in inst.branches() {
        let (set, (values, thr)) = kraus_with_spectrum(b, tol)?;
        borderline |= values.iter().any(|&v| in_band(v, thr));
        kraus.push(set);
    }
    let blocks: Vec<(String, usize)> = inst
        .labels()
        .zip(&kraus)
        .map(|(l, k)| (l.to_string(), k.len()))
        .collect();

    // realified criterion matrix: d_in² rows, Σ r_i² columns
    let bases: Vec<Vec<ComplexMatrix>> = kraus.iter().map(|k| hermitian_basis(k.len())).collect();
    let n_cols: usize = bases.iter().map(Vec::len).sum();
    let mut a = DMatrix::<f64>::zeros(d_in * d_in, n_cols);
    let mut col = 0;
    for (set, basis) in kraus.iter().zip(&bases) {
        let ops = set.operators();
        let products: Vec<Vec<ComplexMatrix>> = ops
            .iter()
            .map(|kk| ops.iter().map(|kl| &kk.adjoint() * kl).collect())
            .collect();
        for h in basis {
            let mut image = ComplexMatrix::zeros(d_in, d_in);
            for (k, row) in products.iter().enumerate() {
                for (l, p) in row.iter().enumerate() {
                    let c = h[(k, l)];
                    if c != ZERO {
                        image += &p.scale_c(c);
                    }
                }
            }
            for (r, x) in hermitian_coordinates(&image).into_iter().enumerate() {
                a[(r, col)] = x;
            }
            col += 1;
        }
    }

    let (kernel, singular_values) = matcore::real_nullspace(&a, tol);
    let smax = singular_values.iter().copied().fold(0.0, f64::max);
    let threshold = tol.threshold(smax);
    borderline |= singular_values.iter().any(|&s| in_band(s, threshold));

    let basis = kernel
        .iter()
        .map(|v| {
            let mut offset = 0;
            bases
                .iter()
                .zip(&kraus)
                .map(|(b, k)| {
                    let coords = &v.as_slice()[offset..offset + b.len()];
                    offset += b.len();
                    combine(b, coords, k.len())
                })
                .collect()
        })
        .collect();

    Ok(PerturbationBasis {
        device,
        instrument: inst,
        kraus,
        blocks,
        basis,
        singular_values,
        threshold,
        borderline,
    })
}

/// Perturbation space of any device, through its instrument form.
pub fn device_perturbation_space(dev: &Device, tol: Tolerance) -> Result<PerturbationBasis> {
    perturbation_space_of(dev.clone(), dev.to_instrument(), tol)
}

/// Result of an extremality test.
#[derive(Debug, Clone)]
pub struct Extremality {
    pub extreme: bool,
    /// First kernel element when the device is not extreme.
    pub witness: Option<Vec<ComplexMatrix>>,
    /// Dimension of the admissible perturbation space.
    pub perturbation_dim: usize,
    /// Smallest singular value of the criterion matrix (zero when there are
    /// more parameters than constraints).
    pub margin: f64,
    pub threshold: f64,
    pub borderline: bool,
}

impl From<&PerturbationBasis> for Extremality {
    fn from(p: &PerturbationBasis) -> Self {
        Self {
            extreme: p.is_empty(),
            witness: p.basis.first().cloned(),
            perturbation_dim: p.len(),
            margin: p.singular_values.first().copied().unwrap_or(f64::INFINITY),
            threshold: p.threshold,
            borderline: p.borderline,
        }
    }
}

pub fn is_extreme(dev: &Device, tol: Tolerance) -> Result<Extremality> {
    let space = device_perturbation_space(dev, tol)?;
    Ok(Extremality::from(&space))
}

/// Outcome of the two-Kraus qubit condition
/// `|⟨0|K₀†K₁|1⟩| ≠ |⟨1|K₀†K₁|0⟩|` in the eigenbasis of `K₀†K₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitCondition {
    pub holds: bool,
    /// `|⟨0|K₀†K₁|1⟩|` with `|0⟩` the eigenvector of the larger eigenvalue.
    pub upper: f64,
    /// `|⟨1|K₀†K₁|0⟩|`
    pub lower: f64,
    pub margin: f64,
    pub threshold: f64,
    pub borderline: bool,
}

pub fn qubit_channel_condition(k: &KrausSet, tol: Tolerance) -> Result<QubitCondition> {
    if k.d_in() != 2 {
        return Err(Error::InvalidArgument(format!(
            "qubit condition needs input dimension 2, got {}",
            k.d_in()
        )));
    }
    if k.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "qubit condition needs exactly two Kraus operators, got {}",
            k.len()
        )));
    }
    let (k0, k1) = (&k.operators()[0], &k.operators()[1]);
    let e = &k0.adjoint() * k0;
    let (values, vectors) = matcore::eigh(&e, tol)?;
    let gap = values[1] - values[0];
    if gap <= tol.threshold(values[1].abs().max(values[0].abs())) {
        return Err(Error::NotApplicable(format!(
            "K0†K0 has a degenerate spectrum (gap {gap:.3e})"
        )));
    }
    // descending order: |0⟩ ↔ larger eigenvalue
    let v0 = vectors.column_entries(1);
    let v1 = vectors.column_entries(0);
    let m = &k0.adjoint() * k1;
    let matrix_element = |u: &[C64], w: &[C64]| -> C64 {
        (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| u[a].conj() * m[(a, b)] * w[b])
            .sum()
    };
    let upper = matrix_element(&v0, &v1).norm();
    let lower = matrix_element(&v1, &v0).norm();
    let margin = (upper - lower).abs();
    let threshold = tol.threshold(matcore::sigma_max(&m));
    Ok(QubitCondition {
        holds: margin > threshold,
        upper,
        lower,
        margin,
        threshold,
        borderline: in_band(margin, threshold),
    })
}

/// Number of outcomes with a nonzero branch stays within `(d_in)²`.
pub fn extreme_support_bound_check(i: &Instrument, tol: Tolerance) -> Result<bool> {
    let space = perturbation_space(i, tol)?;
    if !space.is_empty() {
        return Err(Error::InvalidArgument(
            "support bound check requires an extreme instrument".into(),
        ));
    }
    Ok(nonzero_branches(&space) <= i.d_in() * i.d_in())
}

pub(crate) fn nonzero_branches(space: &PerturbationBasis) -> usize {
    space.kraus.iter().filter(|k| !k.is_empty()).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{povm_as_instrument, Channel, Povm};
    use crate::matcore::pauli;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn basis_ket(k: usize) -> Vec<C64> {
        let mut v = vec![ZERO; 2];
        v[k] = ONE;
        v
    }

    fn orthogonal_range_channel(w: &[C64], w2: &[C64]) -> KrausSet {
        KrausSet::new(
            2,
            2,
            vec![
                ComplexMatrix::outer(w, &basis_ket(0)),
                ComplexMatrix::outer(w2, &basis_ket(1)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn hermitian_basis_is_orthonormal() {
        for n in 1..4 {
            let b = hermitian_basis(n);
            assert_eq!(b.len(), n * n);
            for (x, bx) in b.iter().enumerate() {
                assert!((bx - &bx.adjoint()).max_abs() < 1e-15);
                for (y, by) in b.iter().enumerate() {
                    let ip = (bx * by).trace();
                    let expected = if x == y { 1.0 } else { 0.0 };
                    assert!((ip - C64::new(expected, 0.0)).norm() < 1e-15);
                }
                let coords = hermitian_coordinates(bx);
                for (y, c) in coords.iter().enumerate() {
                    assert!((c - if x == y { 1.0 } else { 0.0 }).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn unitary_channel_is_extreme() {
        let u = (&pauli(1).scale(0.6) + &pauli(2).scale(0.8)).scale_c(C64::new(0.0, 1.0));
        let c = Channel::from_kraus(KrausSet::new(2, 2, vec![u]).unwrap());
        let space = perturbation_space(c.instrument(), tol()).unwrap();
        assert!(space.is_empty());
        assert!(is_extreme(&c.into(), tol()).unwrap().extreme);
    }

    #[test]
    fn orthogonal_range_channel_is_not_extreme() {
        let k = orthogonal_range_channel(&basis_ket(0), &basis_ket(1));
        let c = Channel::from_kraus(k);
        let space = perturbation_space(c.instrument(), tol()).unwrap();
        assert!(!space.is_empty());
        for d in space.basis() {
            assert!(space.criterion(d).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_range_channel_is_extreme() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w2 = vec![C64::new(s, 0.0), C64::new(0.0, s)];
        let c = Channel::from_kraus(orthogonal_range_channel(&basis_ket(0), &w2));
        assert!(is_extreme(&c.into(), tol()).unwrap().extreme);
    }

    #[test]
    fn uniform_povm_is_not_extreme() {
        let half = ComplexMatrix::identity(2).scale(0.5);
        let p = Povm::new(2, vec![("a".into(), half.clone()), ("b".into(), half)]).unwrap();
        let space = perturbation_space(&povm_as_instrument(&p), tol()).unwrap();
        // r = (2, 2): 8 parameters against 4 constraints
        assert_eq!(space.parameter_count(), 8);
        assert_eq!(space.len(), 4);
    }

    #[test]
    fn pvm_is_extreme() {
        let p0 = ComplexMatrix::outer(&basis_ket(0), &basis_ket(0));
        let p1 = ComplexMatrix::outer(&basis_ket(1), &basis_ket(1));
        let p = Povm::new(2, vec![("0".into(), p0), ("1".into(), p1)]).unwrap();
        let verdict = is_extreme(&p.into(), tol()).unwrap();
        assert!(verdict.extreme);
        assert!(!verdict.borderline);
        assert!(verdict.witness.is_none());
    }

    #[test]
    fn qubit_condition_on_orthogonal_range_family() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // K0 = |w⟩⟨0| gives K0†K0 = |0⟩⟨0|, non-degenerate
        let overlapping =
            orthogonal_range_channel(&basis_ket(0), &[C64::new(s, 0.0), C64::new(s, 0.0)]);
        assert!(qubit_channel_condition(&overlapping, tol()).unwrap().holds);
        let orthogonal = orthogonal_range_channel(&basis_ket(0), &basis_ket(1));
        assert!(!qubit_channel_condition(&orthogonal, tol()).unwrap().holds);
    }

    #[test]
    fn qubit_condition_degenerate_is_not_applicable() {
        let a = 0.5f64;
        let k = KrausSet::new(
            2,
            2,
            vec![
                ComplexMatrix::identity(2).scale(a.sqrt()),
                pauli(1).scale((1.0 - a).sqrt()),
            ],
        )
        .unwrap();
        assert!(matches!(
            qubit_channel_condition(&k, tol()),
            Err(Error::NotApplicable(_))
        ));
        let one = KrausSet::new(2, 2, vec![ComplexMatrix::identity(2)]).unwrap();
        assert!(matches!(
            qubit_channel_condition(&one, tol()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn qubit_condition_is_phase_invariant() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w2 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let base = orthogonal_range_channel(&[C64::new(s, 0.0), C64::new(s, 0.0)], &w2);
        let reference = qubit_channel_condition(&base, tol()).unwrap();
        for phase in [0.3, 1.7, 4.0] {
            let p = C64::from_polar(1.0, phase);
            let ops = base.operators();
            let k = KrausSet::new(2, 2, vec![ops[0].scale_c(p), ops[1].scale_c(p.conj())]).unwrap();
            let c = qubit_channel_condition(&k, tol()).unwrap();
            assert_eq!(c.holds, reference.holds);
            assert!((c.upper - reference.upper).abs() < 1e-14);
        }
    }

    #[test]
    fn support_bound_for_pvm_and_contract_violation() {
        let d = 3;
        let outcomes = (0..d)
            .map(|k| {
                let e =
                    ComplexMatrix::from_fn(d, d, |a, b| if a == k && b == k { ONE } else { ZERO });
                (k.to_string(), e)
            })
            .collect();
        let p = Povm::new(d, outcomes).unwrap();
        assert!(extreme_support_bound_check(&povm_as_instrument(&p), tol()).unwrap());

        let half = ComplexMatrix::identity(2).scale(0.5);
        let mixed = Povm::new(2, vec![("a".into(), half.clone()), ("b".into(), half)]).unwrap();
        assert!(extreme_support_bound_check(&povm_as_instrument(&mixed), tol()).is_err());
    }

    #[test]
    fn invalid_device_is_rejected() {
        let p = Povm::new(2, vec![("a".into(), pauli(0)), ("b".into(), pauli(0))]).unwrap();
        assert!(matches!(
            is_extreme(&p.into(), tol()),
            Err(Error::InvalidDevice(_))
        ));
    }
}

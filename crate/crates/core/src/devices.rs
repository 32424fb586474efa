//! Effects, POVMs, channels and instruments with finite outcome sets.
//!
//! Every device is ultimately an [`Instrument`]: a list of labelled
//! completely positive branches, each stored as a Choi matrix
//!
//! ```text
//! J = Σ_{mn} |m⟩⟨n| ⊗ Φ(|m⟩⟨n|)      (input ⊗ output order)
//! ```
//!
//! where `Φ` is the Schrödinger action `ρ ↦ Σ K ρ K†`. With this convention
//! `Tr_K J = (Σ K†K)ᵀ`, i.e. the partial trace over the output is the
//! *transpose* of the associated POVM element. POVMs embed as instruments
//! with a one-dimensional output space (`c ↦ c·M(X)` in the Heisenberg
//! picture), whose branch Choi matrices are `M(X)ᵀ`.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matcore::{
    self, eigh, kron, partial_trace, psd_margin, unvec_columns, vec_columns, ComplexMatrix, Side,
    Tolerance, C64, ZERO,
};

/// Kraus operators of one CP map, each `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    d_in: usize,
    d_out: usize,
    operators: Vec<ComplexMatrix>,
}

impl KrausSet {
    pub fn new(d_in: usize, d_out: usize, operators: Vec<ComplexMatrix>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Dimension("dimensions must be positive".into()));
        }
        if operators.is_empty() {
            return Err(Error::InvalidArgument(
                "a Kraus set needs at least one operator".into(),
            ));
        }
        if let Some(k) = operators
            .iter()
            .position(|k| k.rows() != d_out || k.cols() != d_in)
        {
            return Err(Error::Dimension(format!(
                "Kraus operator {k} is {}x{}, expected {d_out}x{d_in}",
                operators[k].rows(),
                operators[k].cols()
            )));
        }
        Ok(Self {
            d_in,
            d_out,
            operators,
        })
    }

    /// The (empty) Kraus set of the zero map.
    pub(crate) fn zero_map(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            operators: Vec::new(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// `Σ K†K`, the Heisenberg image of the identity.
    pub fn effect(&self) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(self.d_in, self.d_in);
        for k in &self.operators {
            acc += &(&k.adjoint() * k);
        }
        acc
    }

    /// Linear independence of the operators at tolerance.
    pub fn is_minimal(&self, tol: Tolerance) -> bool {
        let n = self.operators.len();
        let stacked = ComplexMatrix::from_fn(self.d_in * self.d_out, n, |r, c| {
            vec_columns(&self.operators[c])[r]
        });
        matcore::rank(&stacked, tol) == n
    }
}

/// One completely positive branch, stored as its Choi matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CpBranch {
    d_in: usize,
    d_out: usize,
    choi: ComplexMatrix,
}

impl CpBranch {
    pub fn new(d_in: usize, d_out: usize, choi: ComplexMatrix) -> Result<Self> {
        let n = d_in * d_out;
        if d_in == 0 || d_out == 0 || choi.rows() != n || choi.cols() != n {
            return Err(Error::Dimension(format!(
                "Choi matrix is {}x{}, expected {n}x{n}",
                choi.rows(),
                choi.cols()
            )));
        }
        Ok(Self { d_in, d_out, choi })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn choi(&self) -> &ComplexMatrix {
        &self.choi
    }

    /// `Tr_K J`, equal to the transpose of the Heisenberg image of `1_K`.
    pub fn output_marginal(&self) -> ComplexMatrix {
        partial_trace(&self.choi, (self.d_in, self.d_out), Side::Second)
            .expect("branch dimensions are consistent by construction")
    }

    /// Heisenberg image of `1_K`: the POVM element carried by this branch.
    pub fn effect(&self) -> ComplexMatrix {
        self.output_marginal().transpose()
    }

    /// Block `Φ(|m⟩⟨n|)` of the Choi matrix.
    fn block(&self, m: usize, n: usize) -> DMatrix<C64> {
        let d = self.d_out;
        self.choi
            .as_dmatrix()
            .view((m * d, n * d), (d, d))
            .clone_owned()
    }

    /// Schrödinger action `ρ ↦ Σ_{mn} ρ_{mn} Φ(|m⟩⟨n|)`.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if rho.rows() != self.d_in || rho.cols() != self.d_in {
            return Err(Error::Dimension(format!(
                "state is {}x{}, expected {}x{}",
                rho.rows(),
                rho.cols(),
                self.d_in,
                self.d_in
            )));
        }
        let mut acc = DMatrix::zeros(self.d_out, self.d_out);
        for m in 0..self.d_in {
            for n in 0..self.d_in {
                let c = rho[(m, n)];
                if c != ZERO {
                    acc += self.block(m, n) * c;
                }
            }
        }
        Ok(ComplexMatrix::from_dmatrix(acc))
    }

    /// Heisenberg action: `Φ*(B)_{nm} = Tr[Φ(|m⟩⟨n|) B]`.
    pub fn apply_dual(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        if b.rows() != self.d_out || b.cols() != self.d_out {
            return Err(Error::Dimension(format!(
                "observable is {}x{}, expected {}x{}",
                b.rows(),
                b.cols(),
                self.d_out,
                self.d_out
            )));
        }
        let bt = b.as_dmatrix().transpose();
        Ok(ComplexMatrix::from_fn(self.d_in, self.d_in, |n, m| {
            self.block(m, n)
                .iter()
                .zip(bt.iter())
                .map(|(x, y)| x * y)
                .sum()
        }))
    }
}

/// Finite-outcome quantum instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    d_in: usize,
    d_out: usize,
    branches: Vec<(String, CpBranch)>,
}

fn check_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for label in labels {
        if !seen.insert(label) {
            return Err(Error::InvalidArgument(format!(
                "duplicate outcome label `{label}`"
            )));
        }
    }
    Ok(())
}

impl Instrument {
    pub fn new(d_in: usize, d_out: usize, branches: Vec<(String, CpBranch)>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidArgument(
                "an instrument needs at least one outcome".into(),
            ));
        }
        for (label, b) in &branches {
            if b.d_in != d_in || b.d_out != d_out {
                return Err(Error::Dimension(format!(
                    "branch `{label}` maps C^{} -> C^{}, expected C^{d_in} -> C^{d_out}",
                    b.d_in, b.d_out
                )));
            }
        }
        check_labels(branches.iter().map(|(l, _)| l.as_str()))?;
        Ok(Self {
            d_in,
            d_out,
            branches,
        })
    }

    pub fn from_kraus(
        d_in: usize,
        d_out: usize,
        outcomes: Vec<(String, KrausSet)>,
    ) -> Result<Self> {
        let branches = outcomes
            .into_iter()
            .map(|(l, k)| (l, choi_from_kraus(&k)))
            .collect();
        Self::new(d_in, d_out, branches)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn branches(&self) -> &[(String, CpBranch)] {
        &self.branches
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.branches.iter().map(|(l, _)| l.as_str())
    }

    pub fn branch(&self, label: &str) -> Result<&CpBranch> {
        self.branches
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// `Σᵢ Heisenberg image of 1_K`, which must be the identity.
    pub fn total_effect(&self) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(self.d_in, self.d_in);
        for (_, b) in &self.branches {
            acc += &b.effect();
        }
        acc
    }
}

/// Single-branch, trace-preserving instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel(Instrument);

impl Channel {
    pub fn new(instrument: Instrument) -> Result<Self> {
        if instrument.branches.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "a channel has exactly one branch, got {}",
                instrument.branches.len()
            )));
        }
        Ok(Self(instrument))
    }

    pub fn from_kraus(kraus: KrausSet) -> Self {
        let (d_in, d_out) = (kraus.d_in, kraus.d_out);
        Self(Instrument {
            d_in,
            d_out,
            branches: vec![("0".to_string(), choi_from_kraus(&kraus))],
        })
    }

    pub fn instrument(&self) -> &Instrument {
        &self.0
    }

    pub fn into_instrument(self) -> Instrument {
        self.0
    }

    pub fn branch(&self) -> &CpBranch {
        &self.0.branches[0].1
    }

    pub fn label(&self) -> &str {
        &self.0.branches[0].0
    }
}

/// Finite-outcome POVM on `C^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    dim: usize,
    outcomes: Vec<(String, ComplexMatrix)>,
}

impl Povm {
    pub fn new(dim: usize, outcomes: Vec<(String, ComplexMatrix)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument(
                "a POVM needs at least one outcome".into(),
            ));
        }
        for (label, m) in &outcomes {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::Dimension(format!(
                    "effect `{label}` is {}x{}, expected {dim}x{dim}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        check_labels(outcomes.iter().map(|(l, _)| l.as_str()))?;
        Ok(Self { dim, outcomes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[(String, ComplexMatrix)] {
        &self.outcomes
    }

    pub fn effect(&self, label: &str) -> Result<&ComplexMatrix> {
        self.outcomes
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

/// Effect `0 ⪯ E ⪯ 1` on `C^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    dim: usize,
    matrix: ComplexMatrix,
}

impl Effect {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        Ok(Self {
            dim: matrix.rows(),
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// The binary POVM `{"1": E, "0": 1 − E}`.
    pub fn as_povm(&self) -> Povm {
        let complement = &ComplexMatrix::identity(self.dim) - &self.matrix;
        Povm {
            dim: self.dim,
            outcomes: vec![
                (EFFECT_LABEL.to_string(), self.matrix.clone()),
                (COMPLEMENT_LABEL.to_string(), complement),
            ],
        }
    }
}

pub const EFFECT_LABEL: &str = "1";
pub const COMPLEMENT_LABEL: &str = "0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceKind {
    Effect,
    Povm,
    Channel,
    Instrument,
}

impl DeviceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DeviceKind::Effect => "effect",
            DeviceKind::Povm => "povm",
            DeviceKind::Channel => "channel",
            DeviceKind::Instrument => "instrument",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Device {
    Effect(Effect),
    Povm(Povm),
    Channel(Channel),
    Instrument(Instrument),
}

impl Device {
    pub fn kind(&self) -> DeviceKind {
        match self {
            Device::Effect(_) => DeviceKind::Effect,
            Device::Povm(_) => DeviceKind::Povm,
            Device::Channel(_) => DeviceKind::Channel,
            Device::Instrument(_) => DeviceKind::Instrument,
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            Device::Effect(e) => e.dim,
            Device::Povm(p) => p.dim,
            Device::Channel(c) => c.0.d_in,
            Device::Instrument(i) => i.d_in,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Device::Effect(_) | Device::Povm(_) => 1,
            Device::Channel(c) => c.0.d_out,
            Device::Instrument(i) => i.d_out,
        }
    }

    /// The instrument this device is identified with: POVMs become trivial
    /// instruments, effects their binary POVM.
    pub fn to_instrument(&self) -> Instrument {
        match self {
            Device::Effect(e) => povm_as_instrument(&e.as_povm()),
            Device::Povm(p) => povm_as_instrument(p),
            Device::Channel(c) => c.0.clone(),
            Device::Instrument(i) => i.clone(),
        }
    }

    /// Inverse of [`Device::to_instrument`] for a target kind.
    pub fn from_instrument(kind: DeviceKind, instrument: Instrument) -> Result<Self> {
        match kind {
            DeviceKind::Instrument => Ok(Device::Instrument(instrument)),
            DeviceKind::Channel => Channel::new(instrument).map(Device::Channel),
            DeviceKind::Povm => {
                if instrument.d_out != 1 {
                    return Err(Error::Dimension("a POVM needs output dimension 1".into()));
                }
                Ok(Device::Povm(Povm {
                    dim: instrument.d_in,
                    outcomes: instrument
                        .branches
                        .into_iter()
                        .map(|(l, b)| (l, b.effect()))
                        .collect(),
                }))
            }
            DeviceKind::Effect => {
                if instrument.d_out != 1 {
                    return Err(Error::Dimension(
                        "an effect needs output dimension 1".into(),
                    ));
                }
                let b = instrument.branch(EFFECT_LABEL)?;
                Effect::new(b.effect()).map(Device::Effect)
            }
        }
    }
}

impl From<Effect> for Device {
    fn from(e: Effect) -> Self {
        Device::Effect(e)
    }
}

impl From<Povm> for Device {
    fn from(p: Povm) -> Self {
        Device::Povm(p)
    }
}

impl From<Channel> for Device {
    fn from(c: Channel) -> Self {
        Device::Channel(c)
    }
}

impl From<Instrument> for Device {
    fn from(i: Instrument) -> Self {
        Device::Instrument(i)
    }
}

/// Largest Choi max-norm difference over corresponding branches.
pub fn choi_distance(a: &Device, b: &Device) -> Result<f64> {
    let (ia, ib) = (a.to_instrument(), b.to_instrument());
    if ia.d_in != ib.d_in || ia.d_out != ib.d_out || ia.branches.len() != ib.branches.len() {
        return Err(Error::Dimension("devices have different shapes".into()));
    }
    let mut dist: f64 = 0.0;
    for ((la, ba), (lb, bb)) in ia.branches.iter().zip(&ib.branches) {
        if la != lb {
            return Err(Error::Dimension(format!(
                "outcome labels differ: `{la}` vs `{lb}`"
            )));
        }
        dist = dist.max((&ba.choi - &bb.choi).max_abs());
    }
    Ok(dist)
}

pub fn choi_from_kraus(k: &KrausSet) -> CpBranch {
    let n = k.d_in * k.d_out;
    let mut choi = ComplexMatrix::zeros(n, n);
    for op in &k.operators {
        let v = vec_columns(op);
        choi += &ComplexMatrix::outer(&v, &v);
    }
    CpBranch {
        d_in: k.d_in,
        d_out: k.d_out,
        choi,
    }
}

/// Minimal Kraus decomposition from the spectral decomposition of the Choi
/// matrix, ordered by decreasing weight. The zero map yields an empty set.
pub fn kraus_from_choi(b: &CpBranch, tol: Tolerance) -> Result<KrausSet> {
    kraus_with_spectrum(b, tol).map(|(k, _)| k)
}

/// Choi eigenvalues (ascending) relative to the decision threshold, as
/// `(value, threshold)`.
pub(crate) type Spectrum = (Vec<f64>, f64);

pub(crate) fn kraus_with_spectrum(b: &CpBranch, tol: Tolerance) -> Result<(KrausSet, Spectrum)> {
    let (values, vectors) = eigh(&b.choi, tol)?;
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let thr = tol.threshold(scale);
    if values[0] < -thr {
        return Err(Error::NotPsd {
            min_eigenvalue: values[0],
        });
    }
    let mut operators = Vec::new();
    for idx in (0..values.len()).rev() {
        if values[idx] <= thr {
            break;
        }
        let v: Vec<C64> = vectors
            .column_entries(idx)
            .into_iter()
            .map(|z| z * values[idx].sqrt())
            .collect();
        operators.push(unvec_columns(&v, b.d_out, b.d_in)?);
    }
    let set = if operators.is_empty() {
        KrausSet::zero_map(b.d_in, b.d_out)
    } else {
        KrausSet::new(b.d_in, b.d_out, operators)?
    };
    Ok((set, (values, thr)))
}

/// Outcome of a single invariant check. `margin` is positive when the check
/// passes and measures how far inside the tolerance it is.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, margin: f64) {
        self.checks.push(Check {
            name: name.into(),
            passed: margin >= 0.0,
            margin,
        });
    }

    /// Hermiticity then positivity of `m` under names `<name>.hermitian` / `<name>.psd`.
    fn push_psd(&mut self, name: &str, m: &ComplexMatrix, tol: Tolerance) {
        let deviation = (m - &m.adjoint()).max_abs();
        let scale = matcore::sigma_max(m);
        self.push(
            format!("{name}.hermitian"),
            tol.threshold(scale) - deviation,
        );
        let psd = psd_margin(&m.hermitian_part(), tol).expect("Hermitian part is Hermitian");
        self.push(format!("{name}.psd"), psd);
    }

    fn push_identity(&mut self, name: &str, m: &ComplexMatrix, tol: Tolerance) {
        let deviation = (m - &ComplexMatrix::identity(m.rows())).max_abs();
        self.push(name, tol.threshold(1.0) - deviation);
    }
}

pub fn validate(dev: &Device, tol: Tolerance) -> ValidationReport {
    let mut report = ValidationReport::default();
    match dev {
        Device::Effect(e) => {
            report.push_psd("effect", &e.matrix, tol);
            let complement = &ComplexMatrix::identity(e.dim) - &e.matrix;
            report.push_psd("complement", &complement, tol);
        }
        Device::Povm(p) => {
            let mut total = ComplexMatrix::zeros(p.dim, p.dim);
            for (label, m) in &p.outcomes {
                report.push_psd(&format!("effect[{label}]"), m, tol);
                total += m;
            }
            report.push_identity("normalization", &total, tol);
        }
        Device::Channel(c) => validate_instrument(&c.0, tol, &mut report),
        Device::Instrument(i) => validate_instrument(i, tol, &mut report),
    }
    report
}

fn validate_instrument(i: &Instrument, tol: Tolerance, report: &mut ValidationReport) {
    for (label, b) in &i.branches {
        report.push_psd(&format!("branch[{label}].choi"), &b.choi, tol);
    }
    report.push_identity("trace_preservation", &i.total_effect(), tol);
}

pub fn require_valid(dev: &Device, tol: Tolerance) -> Result<()> {
    let report = validate(dev, tol);
    if report.is_valid() {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failures()
        .map(|c| format!("{} (margin {:.3e})", c.name, c.margin))
        .collect();
    Err(Error::InvalidDevice(failed.join(", ")))
}

/// Trivial instrument `M^M(X, c) = c·M(X)`.
pub fn povm_as_instrument(m: &Povm) -> Instrument {
    Instrument {
        d_in: m.dim,
        d_out: 1,
        branches: m
            .outcomes
            .iter()
            .map(|(l, e)| {
                (
                    l.clone(),
                    CpBranch {
                        d_in: m.dim,
                        d_out: 1,
                        choi: e.transpose(),
                    },
                )
            })
            .collect(),
    }
}

/// Associated observable `X ↦ M(X, 1_K)`.
pub fn instrument_associated_povm(i: &Instrument) -> Povm {
    Povm {
        dim: i.d_in,
        outcomes: i
            .branches
            .iter()
            .map(|(l, b)| (l.clone(), b.effect()))
            .collect(),
    }
}

pub const TOTAL_LABEL: &str = "total";

/// Associated channel `B ↦ M(Ω, B)`: the sum of all branches.
pub fn instrument_associated_channel(i: &Instrument) -> Channel {
    if i.branches.len() == 1 {
        return Channel(i.clone());
    }
    let n = i.d_in * i.d_out;
    let mut choi = ComplexMatrix::zeros(n, n);
    for (_, b) in &i.branches {
        choi += &b.choi;
    }
    Channel(Instrument {
        d_in: i.d_in,
        d_out: i.d_out,
        branches: vec![(
            TOTAL_LABEL.to_string(),
            CpBranch {
                d_in: i.d_in,
                d_out: i.d_out,
                choi,
            },
        )],
    })
}

pub fn apply_schrodinger(
    i: &Instrument,
    label: &str,
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    i.branch(label)?.apply(rho)
}

pub fn apply_heisenberg(i: &Instrument, label: &str, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    i.branch(label)?.apply_dual(b)
}

/// Minimal Stinespring dilation for counting measure on the outcome set.
#[derive(Debug, Clone)]
pub struct Dilation {
    /// Isometry `H → K ⊗ H_⊕`, rows indexed by `j·R + s` for output basis
    /// index `j` and dilation index `s`.
    pub isometry: ComplexMatrix,
    /// Kraus rank of each branch, in outcome order.
    pub multiplicities: Vec<usize>,
    d_out: usize,
}

impl Dilation {
    pub fn dilation_dim(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    /// `Y†(B ⊗ Πᵢ)Y` for the outcome at `index`.
    pub fn heisenberg(&self, index: usize, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let r = self.dilation_dim();
        let offset: usize = self.multiplicities[..index].iter().sum();
        let proj = ComplexMatrix::from_fn(r, r, |s, t| {
            if s == t && s >= offset && s < offset + self.multiplicities[index] {
                matcore::ONE
            } else {
                ZERO
            }
        });
        if b.rows() != self.d_out || b.cols() != self.d_out {
            return Err(Error::Dimension("observable has the wrong size".into()));
        }
        let y = &self.isometry;
        Ok(&(&y.adjoint() * &kron(b, &proj)) * y)
    }
}

pub fn build_minimal_dilation(i: &Instrument, tol: Tolerance) -> Result<Dilation> {
    require_valid(&Device::Instrument(i.clone()), tol)?;
    let kraus: Vec<KrausSet> = i
        .branches
        .iter()
        .map(|(_, b)| kraus_from_choi(b, tol))
        .collect::<Result<_>>()?;
    let multiplicities: Vec<usize> = kraus.iter().map(KrausSet::len).collect();
    let r: usize = multiplicities.iter().sum();
    let mut y = DMatrix::zeros(i.d_out * r, i.d_in);
    let mut s = 0;
    for set in &kraus {
        for k in &set.operators {
            for j in 0..i.d_out {
                for m in 0..i.d_in {
                    y[(j * r + s, m)] = k[(j, m)];
                }
            }
            s += 1;
        }
    }
    Ok(Dilation {
        isometry: ComplexMatrix::from_dmatrix(y),
        multiplicities,
        d_out: i.d_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{pauli, rank, ONE};

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn ket(entries: &[f64]) -> Vec<C64> {
        entries.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    fn identity_channel() -> Channel {
        Channel::from_kraus(KrausSet::new(2, 2, vec![ComplexMatrix::identity(2)]).unwrap())
    }

    fn luders(e: &ComplexMatrix) -> Instrument {
        let sq = matcore::psd_sqrt(e);
        let sq_c = matcore::psd_sqrt(&(&ComplexMatrix::identity(2) - e));
        Instrument::from_kraus(
            2,
            2,
            vec![
                ("yes".into(), KrausSet::new(2, 2, vec![sq]).unwrap()),
                ("no".into(), KrausSet::new(2, 2, vec![sq_c]).unwrap()),
            ],
        )
        .unwrap()
    }

    fn sample_effect() -> ComplexMatrix {
        // ½(1.1σ₀ + 0.3σ₁ + 0.2σ₃), eigenvalues strictly inside (0, 1)
        let m = &(&pauli(0).scale(1.1) + &pauli(1).scale(0.3)) + &pauli(3).scale(0.2);
        m.scale(0.5)
    }

    #[test]
    fn identity_channel_choi_is_max_entangled_projector() {
        let c = identity_channel();
        let j = c.branch().choi();
        assert_eq!(rank(j, tol()), 1);
        assert!((j.trace() - C64::new(2.0, 0.0)).norm() < 1e-14);
        let omega = ket(&[1.0, 0.0, 0.0, 1.0]);
        assert!((j - &ComplexMatrix::outer(&omega, &omega)).max_abs() < 1e-14);
    }

    #[test]
    fn orthogonal_range_kraus_gives_diagonal_choi() {
        let w = ket(&[1.0, 0.0]);
        let w2 = ket(&[0.0, 1.0]);
        let k0 = ComplexMatrix::outer(&w, &ket(&[1.0, 0.0]));
        let k1 = ComplexMatrix::outer(&w2, &ket(&[0.0, 1.0]));
        let b = choi_from_kraus(&KrausSet::new(2, 2, vec![k0.clone(), k1.clone()]).unwrap());
        let j = b.choi();
        for r in 0..4 {
            for c in 0..4 {
                if r != c {
                    assert!(j[(r, c)].norm() < 1e-15);
                }
            }
        }
        assert_eq!(rank(j, tol()), 2);
        // action on basis matrices reproduces the Kraus action
        for (m, n) in [(0, 0), (0, 1), (1, 1)] {
            let e = ComplexMatrix::from_fn(2, 2, |a, c| if (a, c) == (m, n) { ONE } else { ZERO });
            let direct = &(&(&k0 * &e) * &k0.adjoint()) + &(&(&k1 * &e) * &k1.adjoint());
            assert!((&b.apply(&e).unwrap() - &direct).max_abs() < 1e-15);
        }
    }

    #[test]
    fn kraus_from_choi_examples() {
        let k = kraus_from_choi(identity_channel().branch(), tol()).unwrap();
        assert_eq!(k.len(), 1);
        let u = &k.operators()[0];
        assert!((&(&u.adjoint() * u) - &ComplexMatrix::identity(2)).max_abs() < 1e-13);

        let half = choi_from_kraus(
            &KrausSet::new(2, 2, vec![ComplexMatrix::identity(2).scale(0.5f64.sqrt())]).unwrap(),
        );
        let k = kraus_from_choi(&half, tol()).unwrap();
        assert_eq!(k.len(), 1);
        let op = &k.operators()[0];
        // equal to (1/√2)·1 up to a global phase
        let phase = op[(0, 0)] / op[(0, 0)].norm();
        let expected = ComplexMatrix::identity(2).scale_c(phase * 0.5f64.sqrt());
        assert!((op - &expected).max_abs() < 1e-13);
    }

    #[test]
    fn kraus_from_choi_rejects_non_psd() {
        let b = CpBranch::new(1, 2, pauli(3)).unwrap();
        assert!(matches!(
            kraus_from_choi(&b, tol()),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn choi_marginal_is_transposed_effect() {
        let b = choi_from_kraus(
            &KrausSet::new(
                2,
                3,
                vec![ComplexMatrix::from_fn(3, 2, |i, j| {
                    C64::new(0.1 * i as f64, 0.2 * j as f64 + 0.05)
                })],
            )
            .unwrap(),
        );
        let kraus = kraus_from_choi(&b, tol()).unwrap();
        assert!((&b.output_marginal() - &kraus.effect().transpose()).max_abs() < 1e-14);
    }

    #[test]
    fn trivial_branch_marginal() {
        // Tr_K of the Choi matrix of c ↦ c·M is Mᵀ
        let m = sample_effect();
        let p = Povm::new(
            2,
            vec![
                ("a".into(), m.clone()),
                ("b".into(), &ComplexMatrix::identity(2) - &m),
            ],
        )
        .unwrap();
        let inst = povm_as_instrument(&p);
        assert!((&inst.branches()[0].1.output_marginal() - &m.transpose()).max_abs() < 1e-15);
    }

    #[test]
    fn validate_examples() {
        let pz = ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let pmz = ComplexMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let spin = Povm::new(2, vec![("+z".into(), pz), ("-z".into(), pmz)]).unwrap();
        assert!(validate(&spin.into(), tol()).is_valid());

        let doubled = Povm::new(2, vec![("a".into(), pauli(0)), ("b".into(), pauli(0))]).unwrap();
        let report = validate(&doubled.into(), tol());
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["normalization"]);

        let bad = ComplexMatrix::from_real_rows(&[vec![-0.1, 0.0], vec![0.0, 1.1]]).unwrap();
        let inst =
            Instrument::new(2, 1, vec![("x".into(), CpBranch::new(2, 1, bad).unwrap())]).unwrap();
        let report = validate(&inst.into(), tol());
        assert!(report.failures().any(|c| c.name == "branch[x].choi.psd"));
    }

    #[test]
    fn povm_instrument_round_trip() {
        let e = sample_effect();
        let p = Povm::new(
            2,
            vec![
                ("1".into(), e.clone()),
                ("0".into(), &ComplexMatrix::identity(2) - &e),
            ],
        )
        .unwrap();
        let inst = povm_as_instrument(&p);
        assert_eq!(inst.d_out(), 1);
        assert_eq!(instrument_associated_povm(&inst), p);
    }

    #[test]
    fn associated_povm_of_channel_is_trivial() {
        let c = identity_channel();
        let p = instrument_associated_povm(c.instrument());
        assert_eq!(p.outcomes().len(), 1);
        assert!((&p.outcomes()[0].1 - &ComplexMatrix::identity(2)).max_abs() < 1e-14);
        assert_eq!(instrument_associated_channel(c.instrument()), c);
    }

    #[test]
    fn luders_associated_channel() {
        let e = sample_effect();
        let inst = luders(&e);
        let total = instrument_associated_channel(&inst);
        assert!(validate(&total.clone().into(), tol()).is_valid());
        let sq = matcore::psd_sqrt(&e);
        let sq_c = matcore::psd_sqrt(&(&ComplexMatrix::identity(2) - &e));
        let rho = ComplexMatrix::from_rows(&[
            vec![C64::new(0.6, 0.0), C64::new(0.2, 0.1)],
            vec![C64::new(0.2, -0.1), C64::new(0.4, 0.0)],
        ])
        .unwrap();
        let direct = &(&(&sq * &rho) * &sq) + &(&(&sq_c * &rho) * &sq_c);
        assert!((&total.branch().apply(&rho).unwrap() - &direct).max_abs() < 1e-14);
    }

    #[test]
    fn apply_examples() {
        let c = identity_channel();
        let rho = ComplexMatrix::from_rows(&[
            vec![C64::new(0.3, 0.0), C64::new(0.1, 0.4)],
            vec![C64::new(0.1, -0.4), C64::new(0.7, 0.0)],
        ])
        .unwrap();
        assert!((&apply_schrodinger(c.instrument(), "0", &rho).unwrap() - &rho).max_abs() < 1e-15);

        let inst = luders(&sample_effect());
        let povm = instrument_associated_povm(&inst);
        for (label, m) in povm.outcomes() {
            let h = apply_heisenberg(&inst, label, &ComplexMatrix::identity(2)).unwrap();
            assert!((&h - m).max_abs() < 1e-14);
        }

        let w = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let k = ComplexMatrix::outer(&w, &ket(&[1.0, 0.0]));
        let b = choi_from_kraus(&KrausSet::new(2, 2, vec![k]).unwrap());
        let rho0 = ComplexMatrix::outer(&ket(&[1.0, 0.0]), &ket(&[1.0, 0.0]));
        assert!((&b.apply(&rho0).unwrap() - &ComplexMatrix::outer(&w, &w)).max_abs() < 1e-15);

        assert!(matches!(
            apply_schrodinger(&inst, "missing", &rho),
            Err(Error::UnknownLabel(_))
        ));
        assert!(apply_heisenberg(&inst, "yes", &ComplexMatrix::identity(3)).is_err());
    }

    #[test]
    fn dilation_examples() {
        let d = build_minimal_dilation(identity_channel().instrument(), tol()).unwrap();
        assert_eq!(d.multiplicities, vec![1]);
        let y = &d.isometry;
        assert!((&(&y.adjoint() * y) - &ComplexMatrix::identity(2)).max_abs() < 1e-13);

        let d = build_minimal_dilation(&luders(&sample_effect()), tol()).unwrap();
        assert_eq!(d.multiplicities, vec![1, 1]);

        let rank_one = ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let rest = &ComplexMatrix::identity(2) - &rank_one.scale(0.5);
        let p = Povm::new(
            2,
            vec![("a".into(), rank_one.scale(0.5)), ("b".into(), rest)],
        )
        .unwrap();
        let d = build_minimal_dilation(&povm_as_instrument(&p), tol()).unwrap();
        assert_eq!(d.multiplicities, vec![1, 2]);
    }

    #[test]
    fn constructors_reject_bad_shapes() {
        assert!(KrausSet::new(2, 2, vec![]).is_err());
        assert!(KrausSet::new(2, 2, vec![ComplexMatrix::identity(3)]).is_err());
        assert!(CpBranch::new(2, 2, ComplexMatrix::identity(3)).is_err());
        let b = CpBranch::new(1, 1, ComplexMatrix::identity(1)).unwrap();
        assert!(Instrument::new(1, 1, vec![("a".into(), b.clone()), ("a".into(), b)]).is_err());
    }
}

//! The spin-direction POVM on the sphere and its representation as an average
//! of sharp spin observables over the upper half-sphere.
//!
//! `D(X) = (1/4π)∫_X (1 + n·σ) dn` is evaluated by product quadrature:
//! Gauss–Legendre in `cos θ` times the uniform midpoint rule in `φ`
//! (`φ_j = (j + ½)·2π/M`). The `φ` rule integrates every trigonometric
//! polynomial of degree `< M` exactly, so the `cos 2φ` moments vanish to
//! rounding. Region boundaries that fall on `φ`-multiples of `2π/M` or on the
//! equator never contain a node, so membership of nodes is unambiguous for the
//! named regions.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::fmt;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;

use crate::devices::Povm;
use crate::error::{Error, Result};
use crate::matcore::{ComplexMatrix, C64, ONE, ZERO};

pub const DEFAULT_GRID: (usize, usize) = (64, 128);

/// Slack on `‖n‖ = 1`.
pub const UNIT_TOL: f64 = 1e-12;

pub fn unit_from_angles(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// `(θ, φ)` with `φ ∈ [0, 2π)`.
pub fn angles_from_unit(n: [f64; 3]) -> (f64, f64) {
    let rho = n[0].hypot(n[1]);
    let theta = rho.atan2(n[2]);
    let phi = if rho == 0.0 {
        0.0
    } else {
        n[1].atan2(n[0]).rem_euclid(TAU)
    };
    (theta, phi)
}

/// Product quadrature for `dn = sin θ dθ dφ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    nodes: Vec<(f64, f64)>,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    shape: (usize, usize),
    upper_only: bool,
}

impl SphereGrid {
    /// `n_theta` Gauss–Legendre nodes in `cos θ ∈ [−1, 1]` times `n_phi`
    /// midpoint nodes in `φ`.
    pub fn full(n_theta: usize, n_phi: usize) -> Result<Self> {
        Self::build(n_theta, n_phi, -1.0, false)
    }

    /// Same construction on `cos θ ∈ [0, 1]`; total weight `2π`.
    pub fn upper_half(n_theta: usize, n_phi: usize) -> Result<Self> {
        Self::build(n_theta, n_phi, 0.0, true)
    }

    fn build(n_theta: usize, n_phi: usize, lower: f64, upper_only: bool) -> Result<Self> {
        if n_theta < 2 || n_phi < 1 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 polar and 1 azimuthal nodes, got {n_theta}x{n_phi}"
            )));
        }
        let rule =
            GaussLegendre::new(n_theta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let half_len = 0.5 * (1.0 - lower);
        let mut polar: Vec<(f64, f64)> = rule
            .iter()
            .map(|(x, w)| (lower + half_len * (x + 1.0), half_len * w))
            .collect();
        // north to south
        polar.sort_by(|a, b| b.0.total_cmp(&a.0));
        let dphi = TAU / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for &(c, w) in &polar {
            let theta = c.clamp(-1.0, 1.0).acos();
            for j in 0..n_phi {
                nodes.push((theta, (j as f64 + 0.5) * dphi));
                weights.push(w * dphi);
            }
        }
        let points = nodes.iter().map(|&(t, p)| unit_from_angles(t, p)).collect();
        Ok(Self {
            nodes,
            points,
            weights,
            shape: (n_theta, n_phi),
            upper_only,
        })
    }

    /// `(θ, φ)` per node.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    /// Unit vectors per node.
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_upper_half(&self) -> bool {
        self.upper_only
    }

    /// Grid with half the nodes in each direction (rounded up), same kind.
    pub fn coarsened(&self) -> Result<Self> {
        let (t, p) = self.shape;
        let lower = if self.upper_only { 0.0 } else { -1.0 };
        Self::build(t.div_ceil(2).max(2), p.div_ceil(2), lower, self.upper_only)
    }

    fn weighted_sum<F>(&self, f: F) -> ComplexMatrix
    where
        F: Fn(usize, [f64; 3]) -> Option<ComplexMatrix> + Sync,
    {
        // fixed chunking keeps the summation order independent of thread count
        const CHUNK: usize = 512;
        let partials: Vec<ComplexMatrix> = self
            .points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, pts)| {
                let mut acc = ComplexMatrix::zeros(2, 2);
                for (k, &n) in pts.iter().enumerate() {
                    let idx = c * CHUNK + k;
                    if let Some(m) = f(idx, n) {
                        acc += &m.scale(self.weights[idx]);
                    }
                }
                acc
            })
            .collect();
        partials
            .iter()
            .fold(ComplexMatrix::zeros(2, 2), |acc, m| &acc + m)
    }
}

type Predicate = dyn Fn([f64; 3]) -> bool + Send + Sync;

/// Membership test on unit vectors, with a description for reports.
#[derive(Clone)]
pub struct BorelRegion {
    description: String,
    predicate: Arc<Predicate>,
}

impl fmt::Debug for BorelRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BorelRegion")
            .field("description", &self.description)
            .finish()
    }
}

impl BorelRegion {
    pub fn new(
        description: impl Into<String>,
        predicate: impl Fn([f64; 3]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            description: description.into(),
            predicate: Arc::new(predicate),
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn contains(&self, n: [f64; 3]) -> bool {
        (self.predicate)(n)
    }

    pub fn contains_angles(&self, theta: f64, phi: f64) -> bool {
        self.contains(unit_from_angles(theta, phi))
    }

    pub fn whole() -> Self {
        Self::new("S2", |_| true)
    }

    pub fn empty() -> Self {
        Self::new("empty", |_| false)
    }

    pub fn complement(&self) -> Self {
        let inner = self.predicate.clone();
        Self::new(format!("complement({})", self.description), move |n| {
            !inner(n)
        })
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (a, b) = (self.predicate.clone(), other.predicate.clone());
        Self::new(
            format!("({}) & ({})", self.description, other.description),
            move |n| a(n) && b(n),
        )
    }

    pub fn union(&self, other: &Self) -> Self {
        let (a, b) = (self.predicate.clone(), other.predicate.clone());
        Self::new(
            format!("({}) | ({})", self.description, other.description),
            move |n| a(n) || b(n),
        )
    }

    /// `{n : n_axis > 0}`.
    pub fn open_half(axis: usize) -> Self {
        Self::new(format!("n{} > 0", axis + 1), move |n| n[axis] > 0.0)
    }

    /// `{n : n_axis < 0}`.
    pub fn open_half_negative(axis: usize) -> Self {
        Self::new(format!("n{} < 0", axis + 1), move |n| n[axis] < 0.0)
    }

    /// Azimuthal wedge `φ ∈ (from, to)` taken modulo `2π`; the poles are
    /// excluded.
    pub fn azimuth_band(from: f64, to: f64) -> Self {
        let width = to - from;
        Self::new(format!("phi in ({from:.6}, {to:.6})"), move |n| {
            if n[0] == 0.0 && n[1] == 0.0 {
                return false;
            }
            let phi = n[1].atan2(n[0]);
            let offset = (phi - from).rem_euclid(TAU);
            offset > 0.0 && offset < width
        })
    }
}

/// Regions whose boundaries lie on the equator or on `φ`-multiples of `π/4`.
pub fn named_regions() -> Vec<BorelRegion> {
    let upper = BorelRegion::open_half(2);
    let east = BorelRegion::open_half(0);
    let octant = upper.intersect(&east).intersect(&BorelRegion::open_half(1));
    vec![
        BorelRegion::whole(),
        BorelRegion::empty(),
        upper.clone(),
        BorelRegion::open_half_negative(2),
        east.clone(),
        BorelRegion::open_half(1),
        octant.clone(),
        BorelRegion::azimuth_band(-FRAC_PI_4, FRAC_PI_4),
        BorelRegion::azimuth_band(FRAC_PI_4, 3.0 * FRAC_PI_4)
            .intersect(&BorelRegion::open_half_negative(2)),
        octant.complement(),
        east.union(&upper),
        BorelRegion::azimuth_band(0.0, 3.0 * FRAC_PI_4).intersect(&upper),
    ]
}

/// The eight open octants, labelled by sign pattern such as `+-+`.
pub fn octant_partition() -> Vec<(String, BorelRegion)> {
    let mut parts = Vec::with_capacity(8);
    for code in 0..8u8 {
        let signs: [bool; 3] = [code & 4 == 0, code & 2 == 0, code & 1 == 0];
        let label: String = signs.iter().map(|&s| if s { '+' } else { '-' }).collect();
        let region = BorelRegion::new(format!("octant {label}"), move |n| {
            (0..3).all(|k| if signs[k] { n[k] > 0.0 } else { n[k] < 0.0 })
        });
        parts.push((label, region));
    }
    parts
}

fn check_unit(n: [f64; 3]) -> Result<()> {
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!(
            "direction must be a unit vector, has norm {norm}"
        )));
    }
    Ok(())
}

fn bloch_matrix(n: [f64; 3]) -> ComplexMatrix {
    let s = ComplexMatrix::from_fn(2, 2, |a, b| match (a, b) {
        (0, 0) => ONE.scale(1.0 + n[2]),
        (1, 1) => ONE.scale(1.0 - n[2]),
        (0, 1) => C64::new(n[0], -n[1]),
        (1, 0) => C64::new(n[0], n[1]),
        _ => ZERO,
    });
    s.scale(0.5)
}

/// `P_n = ½(1 + n·σ)`.
pub fn bloch_projection(n: [f64; 3]) -> Result<ComplexMatrix> {
    check_unit(n)?;
    Ok(bloch_matrix(n))
}

/// `D(X) = (1/4π) Σ w (1 + n·σ) 1_X(n) = (1/2π) Σ w P_n 1_X(n)`.
pub fn spin_direction_effect(x: &BorelRegion, grid: &SphereGrid) -> ComplexMatrix {
    grid.weighted_sum(|_, n| x.contains(n).then(|| bloch_matrix(n)))
        .scale(1.0 / TAU)
}

fn negate(n: [f64; 3]) -> [f64; 3] {
    [-n[0], -n[1], -n[2]]
}

/// `S_n(X) = P_n δ_n(X) + P_{−n} δ_{−n}(X)`.
pub fn sharp_spin_effect(n: [f64; 3], x: &BorelRegion) -> Result<ComplexMatrix> {
    check_unit(n)?;
    let mut m = ComplexMatrix::zeros(2, 2);
    if x.contains(n) {
        m += &bloch_matrix(n);
    }
    if x.contains(negate(n)) {
        m += &bloch_matrix(negate(n));
    }
    Ok(m)
}

/// Quadrature value with an error estimate from the coarsened grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureEstimate {
    pub value: ComplexMatrix,
    /// Max-norm difference to the same rule on the coarsened grid.
    pub error_estimate: f64,
}

fn halfsphere_sum(x: &BorelRegion, grid: &SphereGrid) -> ComplexMatrix {
    grid.weighted_sum(|_, n| {
        let (inside, outside) = (x.contains(n), x.contains(negate(n)));
        if !(inside || outside) {
            return None;
        }
        let mut m = ComplexMatrix::zeros(2, 2);
        if inside {
            m += &bloch_matrix(n);
        }
        if outside {
            m += &bloch_matrix(negate(n));
        }
        Some(m)
    })
    .scale(1.0 / TAU)
}

/// `(1/2π) ∫_{S²₊} S_n(X) dn`.
pub fn barycenter_over_halfsphere(
    x: &BorelRegion,
    grid: &SphereGrid,
) -> Result<QuadratureEstimate> {
    if !grid.is_upper_half() || grid.points().iter().any(|n| n[2] < 0.0) {
        return Err(Error::InvalidArgument(
            "barycenter needs a grid on the upper half-sphere".into(),
        ));
    }
    let total = grid.total_weight();
    if (total - TAU).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "half-sphere grid has area {total}, expected 2π"
        )));
    }
    let value = halfsphere_sum(x, grid);
    let coarse = halfsphere_sum(x, &grid.coarsened()?);
    Ok(QuadratureEstimate {
        error_estimate: (&value - &coarse).max_abs(),
        value,
    })
}

/// `D±(X) = ∫_X (1 ± cos 2φ) dD(n)`.
pub fn dplus_dminus_split(x: &BorelRegion, grid: &SphereGrid) -> (ComplexMatrix, ComplexMatrix) {
    let nodes = grid.nodes();
    let plus = grid
        .weighted_sum(|i, n| {
            x.contains(n)
                .then(|| bloch_matrix(n).scale(1.0 + (2.0 * nodes[i].1).cos()))
        })
        .scale(1.0 / TAU);
    let minus = grid
        .weighted_sum(|i, n| {
            x.contains(n)
                .then(|| bloch_matrix(n).scale(1.0 - (2.0 * nodes[i].1).cos()))
        })
        .scale(1.0 / TAU);
    (plus, minus)
}

/// `∫_{S²} cos 2φ dD(n)`.
pub fn cos2phi_moment(grid: &SphereGrid) -> ComplexMatrix {
    let nodes = grid.nodes();
    grid.weighted_sum(|i, n| Some(bloch_matrix(n).scale((2.0 * nodes[i].1).cos())))
        .scale(1.0 / TAU)
}

/// Finite POVM `X ↦ D(X)` on a partition of the sphere. Every grid node must
/// lie in exactly one part.
pub fn spin_grid_povm(parts: &[(String, BorelRegion)], grid: &SphereGrid) -> Result<Povm> {
    for (idx, &n) in grid.points().iter().enumerate() {
        let hits = parts.iter().filter(|(_, r)| r.contains(n)).count();
        if hits != 1 {
            return Err(Error::InvalidArgument(format!(
                "grid node {idx} lies in {hits} parts of the partition"
            )));
        }
    }
    let effects = parts
        .iter()
        .map(|(label, r)| (label.clone(), spin_direction_effect(r, grid)))
        .collect();
    Povm::new(2, effects)
}

/// One row of the per-node breakdown of `D(X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeContribution {
    pub theta: f64,
    pub phi: f64,
    pub weight: f64,
    pub inside: bool,
    /// Bloch coordinates `(e⁰, e)` of `w·(1 + n·σ)/4π` when inside, else zero.
    pub bloch: [f64; 4],
}

pub fn node_contributions(x: &BorelRegion, grid: &SphereGrid) -> Vec<NodeContribution> {
    grid.nodes()
        .iter()
        .zip(grid.points())
        .zip(grid.weights())
        .map(|((&(theta, phi), &n), &weight)| {
            let inside = x.contains(n);
            let s = if inside { weight / (4.0 * PI) } else { 0.0 };
            NodeContribution {
                theta,
                phi,
                weight,
                inside,
                bloch: [s, s * n[0], s * n[1], s * n[2]],
            }
        })
        .collect()
}

type ScalarFn = dyn Fn([f64; 3]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    /// Upper bound on `sup |f|` over the sphere.
    pub sup_norm: f64,
    f: Arc<ScalarFn>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        sup_norm: f64,
        f: impl Fn([f64; 3]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            sup_norm,
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, n: [f64; 3]) -> f64 {
        (self.f)(n)
    }
}

/// Ordered test functions `f₁, f₂, …` for the weak-* metric.
#[derive(Debug, Clone)]
pub struct TestFunctionSeq {
    functions: Vec<TestFunction>,
}

impl TestFunctionSeq {
    pub fn new(functions: Vec<TestFunction>) -> Self {
        Self { functions }
    }

    /// `f₁ = 1`, then real spherical harmonics `Y_ℓm` for `ℓ = 1..=l_max`,
    /// `m = −ℓ..=ℓ`.
    pub fn spherical_harmonics(l_max: usize) -> Self {
        let mut functions = vec![TestFunction::new("1", 1.0, |_| 1.0)];
        for l in 1..=l_max {
            for m in -(l as i64)..=(l as i64) {
                let base = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
                let sup = if m == 0 { base } else { base * 2f64.sqrt() };
                functions.push(TestFunction::new(format!("Y[{l},{m}]"), sup, move |n| {
                    real_harmonic(l, m, n)
                }));
            }
        }
        Self { functions }
    }

    pub fn functions(&self) -> &[TestFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

impl Default for TestFunctionSeq {
    fn default() -> Self {
        Self::spherical_harmonics(4)
    }
}

/// Associated Legendre function `P_ℓ^m(x)` without the Condon–Shortley phase.
fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for k in 0..m {
        pmm *= (2 * k + 1) as f64 * s;
    }
    if l == m {
        return pmm;
    }
    let mut pmm1 = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * x * pmm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmm1;
        pmm1 = next;
    }
    pmm1
}

/// Orthonormal real spherical harmonic.
pub fn real_harmonic(l: usize, m: i64, n: [f64; 3]) -> f64 {
    let am = m.unsigned_abs() as usize;
    let ratio: f64 = ((l - am + 1)..=(l + am))
        .map(|k| k as f64)
        .product::<f64>()
        .recip();
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
    let p = assoc_legendre(l, am, n[2].clamp(-1.0, 1.0));
    let phi = n[1].atan2(n[0]);
    match m.signum() {
        0 => norm * p,
        1 => 2f64.sqrt() * norm * p * (am as f64 * phi).cos(),
        _ => 2f64.sqrt() * norm * p * (am as f64 * phi).sin(),
    }
}

/// Finite nonnegative measure as `(mass, point)` atoms.
pub type DiscreteMeasure = [(f64, [f64; 3])];

fn integrate(mu: &DiscreteMeasure, f: &TestFunction) -> f64 {
    mu.iter().map(|&(w, n)| w * f.eval(n)).sum()
}

/// `d(μ, ν) = Σₙ 2⁻ⁿ |Δₙ| / (1 + |Δₙ|)` with `Δₙ = ∫fₙdμ − ∫fₙdν`, `n ≥ 1`.
pub fn weak_star_distance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    fs: &TestFunctionSeq,
) -> Result<f64> {
    for &(w, n) in mu.iter().chain(nu) {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "atom mass {w} is not a finite nonnegative number"
            )));
        }
        check_unit(n)?;
    }
    let mut scale = 1.0;
    let mut d = 0.0;
    for f in fs.functions() {
        scale *= 0.5;
        let delta = (integrate(mu, f) - integrate(nu, f)).abs();
        d += scale * delta / (1.0 + delta);
    }
    Ok(d)
}

//! Closed-form qubit constructions: Bloch coordinates of effects, the
//! three-atom decomposition of a qubit effect, and a family of extreme qubit
//! channels with two Kraus operators.

use std::f64::consts::TAU;

use rand::Rng;

use crate::decompose::{Component, DecompositionMeta, DiscreteDecomposition};
use crate::devices::{require_valid, Channel, CpBranch, Device, Effect, Instrument, KrausSet};
use crate::error::{Error, Result};
use crate::matcore::{pauli, ComplexMatrix, Tolerance, C64};
use crate::random;

/// Slack on unit norms and on the admissible Bloch region.
pub const UNIT_TOL: f64 = 1e-12;

/// `E = ½(e⁰·1 + e·σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochEffect {
    pub e0: f64,
    pub e: [f64; 3],
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl BlochEffect {
    /// Accepts the boundary `‖e‖ = min{e⁰, 2 − e⁰}` up to [`UNIT_TOL`].
    pub fn new(e0: f64, e: [f64; 3]) -> Result<Self> {
        let b = Self { e0, e };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        let n = self.norm();
        let finite = self.e0.is_finite() && self.e.iter().all(|x| x.is_finite());
        if !finite || n > self.e0.min(2.0 - self.e0) + UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "Bloch point (e0={}, |e|={n}) outside the effect region",
                self.e0
            )));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        norm3(self.e)
    }

    /// `(λ₋, λ₊) = ½(e⁰ ∓ ‖e‖)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let n = self.norm();
        (0.5 * (self.e0 - n), 0.5 * (self.e0 + n))
    }
}

pub fn effect_from_bloch(b: BlochEffect) -> Result<Effect> {
    b.check()?;
    let mut m = pauli(0).scale(b.e0);
    for (k, &x) in b.e.iter().enumerate() {
        m += &pauli(k + 1).scale(x);
    }
    Effect::new(m.scale(0.5))
}

/// `e^μ = tr[E σ_μ]`.
pub fn bloch_from_effect(e: &Effect) -> Result<BlochEffect> {
    if e.dim() != 2 {
        return Err(Error::Dimension(format!(
            "Bloch coordinates need a qubit effect, got dimension {}",
            e.dim()
        )));
    }
    require_valid(&Device::Effect(e.clone()), Tolerance::default())?;
    let coord = |mu: usize| (e.matrix() * &pauli(mu)).trace().re;
    BlochEffect::new(coord(0), [coord(1), coord(2), coord(3)])
}

/// `E = w_identity·1 + w_zero·0 + w_projection·P_E`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDecomposition {
    pub w_identity: f64,
    pub w_zero: f64,
    pub w_projection: f64,
    /// `P_E = ½(1 + ê·σ)`; absent when `e = 0`.
    pub projection: Option<ComplexMatrix>,
}

impl EffectDecomposition {
    pub fn weight_sum(&self) -> f64 {
        self.w_identity + self.w_zero + self.w_projection
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::identity(2).scale(self.w_identity);
        if let Some(p) = &self.projection {
            m += &p.scale(self.w_projection);
        }
        m
    }

    /// Atoms with positive weight, identity first, as a decomposition of the
    /// effect device.
    pub fn to_discrete(&self) -> Result<DiscreteDecomposition> {
        let mut components = Vec::new();
        let mut push = |w: f64, m: ComplexMatrix| -> Result<()> {
            if w > 0.0 {
                components.push(Component {
                    weight: w,
                    device: Device::Effect(Effect::new(m)?),
                });
            }
            Ok(())
        };
        push(self.w_identity, ComplexMatrix::identity(2))?;
        if let Some(p) = &self.projection {
            push(self.w_projection, p.clone())?;
        }
        push(self.w_zero, ComplexMatrix::zeros(2, 2))?;
        let n = components.len();
        DiscreteDecomposition::new(
            components,
            DecompositionMeta {
                strategy: "closed-form".into(),
                leaves: n,
                ..DecompositionMeta::default()
            },
        )
    }
}

/// Weights `(½(e⁰−‖e‖), 1−½(e⁰+‖e‖), ‖e‖)` over `{1, 0, P_E}`.
pub fn decompose_effect(b: BlochEffect) -> EffectDecomposition {
    let n = b.norm();
    let (lo, hi) = b.eigenvalues();
    // boundary points may round a weight a few ulps below zero
    let w_identity = lo.max(0.0);
    let w_zero = (1.0 - hi).max(0.0);
    let projection = (n > 0.0).then(|| {
        let mut p = pauli(0);
        for (k, &x) in b.e.iter().enumerate() {
            p += &pauli(k + 1).scale(x / n);
        }
        p.scale(0.5)
    });
    EffectDecomposition {
        w_identity,
        w_zero,
        w_projection: if projection.is_some() { n } else { 0.0 },
        projection,
    }
}

/// Deterministic section `p ↦ v_p` with `|v_p⟩⟨v_p| = ½(1 + p·σ)`:
/// `v_p = (cos θ/2, e^{iφ} sin θ/2)`, with `φ = 0` at the south pole.
pub fn section_v(p: [f64; 3]) -> Result<[C64; 2]> {
    check_unit(p, "p")?;
    let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let theta = rho.atan2(p[2]);
    let phi = if rho == 0.0 { 0.0 } else { p[1].atan2(p[0]) };
    let (s, c) = (0.5 * theta).sin_cos();
    Ok([C64::new(c, 0.0), C64::from_polar(s, phi)])
}

fn check_unit(v: [f64; 3], name: &str) -> Result<()> {
    let n = norm3(v);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a unit vector, has norm {n}"
        )));
    }
    Ok(())
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    [-v[0], -v[1], -v[2]]
}

/// Parameters of the channel with Kraus operators
/// `K_{p,q,a,b,θ₁,θ₂}` and `K_{p,r,1−a,1−b,φ₁,φ₂}`, where
/// `K_{p,q,a,b,θ₁,θ₂} = e^{iθ₁}√a|v_q⟩⟨v_p| + e^{iθ₂}√b|v_{−q}⟩⟨v_{−p}|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeChannelParams {
    pub p: [f64; 3],
    pub q: [f64; 3],
    pub r: [f64; 3],
    pub a: f64,
    pub b: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl ExtremeChannelParams {
    pub fn validate(&self) -> Result<()> {
        check_unit(self.p, "p")?;
        check_unit(self.q, "q")?;
        check_unit(self.r, "r")?;
        for (name, x) in [("a", self.a), ("b", self.b)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {x} outside [0, 1]"
                )));
            }
        }
        for (name, x) in [
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("phi1", self.phi1),
            ("phi2", self.phi2),
        ] {
            if !(0.0..TAU).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {x} outside [0, 2π)"
                )));
            }
        }
        Ok(())
    }

    /// `a ≠ b` and `q ≠ r`, each compared with slack `eps`.
    pub fn generic_condition(&self, eps: f64) -> bool {
        let qr = norm3([
            self.q[0] - self.r[0],
            self.q[1] - self.r[1],
            self.q[2] - self.r[2],
        ]);
        (self.a - self.b).abs() > eps && qr > eps
    }

    /// The two Kraus operators are proportional, so the channel is a single
    /// unitary conjugation.
    pub fn is_unitary_member(&self, eps: f64) -> bool {
        let k = kraus_pair(self);
        match k {
            Ok([k0, k1]) => {
                let g = |x: &ComplexMatrix, y: &ComplexMatrix| x.hs_inner(y);
                let det = g(&k0, &k0) * g(&k1, &k1) - g(&k0, &k1) * g(&k1, &k0);
                det.norm() <= eps
            }
            Err(_) => false,
        }
    }

    /// Extreme iff the generic condition holds or the channel is unitary.
    pub fn predicted_extreme(&self, eps: f64) -> bool {
        self.generic_condition(eps) || self.is_unitary_member(eps)
    }
}

fn family_operator(
    p: [f64; 3],
    q: [f64; 3],
    a: f64,
    b: f64,
    t1: f64,
    t2: f64,
) -> Result<ComplexMatrix> {
    let (vp, vmp) = (section_v(p)?, section_v(neg(p))?);
    let (vq, vmq) = (section_v(q)?, section_v(neg(q))?);
    let first = ComplexMatrix::outer(&vq, &vp).scale_c(C64::from_polar(a.sqrt(), t1));
    let second = ComplexMatrix::outer(&vmq, &vmp).scale_c(C64::from_polar(b.sqrt(), t2));
    Ok(&first + &second)
}

fn kraus_pair(params: &ExtremeChannelParams) -> Result<[ComplexMatrix; 2]> {
    let ExtremeChannelParams {
        p,
        q,
        r,
        a,
        b,
        theta1,
        theta2,
        phi1,
        phi2,
    } = *params;
    Ok([
        family_operator(p, q, a, b, theta1, theta2)?,
        family_operator(p, r, 1.0 - a, 1.0 - b, phi1, phi2)?,
    ])
}

/// Kraus pair of the family; the second operator vanishes when `a = b = 1`.
pub fn extreme_channel_kraus(params: &ExtremeChannelParams) -> Result<KrausSet> {
    params.validate()?;
    KrausSet::new(2, 2, kraus_pair(params)?.to_vec())
}

pub fn extreme_channel(params: &ExtremeChannelParams) -> Result<Channel> {
    Ok(Channel::from_kraus(extreme_channel_kraus(params)?))
}

pub fn unitary_channel(u: &ComplexMatrix) -> Result<Channel> {
    if !u.is_square()
        || (&(&u.adjoint() * u) - &ComplexMatrix::identity(u.rows())).max_abs() > 1e-10
    {
        return Err(Error::InvalidArgument("matrix is not unitary".into()));
    }
    Ok(Channel::from_kraus(KrausSet::new(
        u.cols(),
        u.rows(),
        vec![u.clone()],
    )?))
}

fn check_probability(weights: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{what} weight {w} is not a finite nonnegative number"
            )));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{what} weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// `t·Σ wᵤ·Ad_U + (1−t)·Σ w_c·Φ_c` together with its defining decomposition.
/// Atoms of zero total weight are left out.
pub fn sample_channel_mixture(
    t: f64,
    unitaries: &[(f64, ComplexMatrix)],
    params_list: &[(f64, ExtremeChannelParams)],
) -> Result<(Channel, DiscreteDecomposition)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "mixing parameter {t} outside [0, 1]"
        )));
    }
    if t > 0.0 {
        check_probability(unitaries.iter().map(|(w, _)| *w), "unitary")?;
    }
    if t < 1.0 {
        check_probability(params_list.iter().map(|(w, _)| *w), "parameter")?;
        if let Some((_, bad)) = params_list.iter().find(|(_, p)| !p.generic_condition(0.0)) {
            return Err(Error::InvalidArgument(format!(
                "mixture atoms need a != b and q != r (a={}, b={})",
                bad.a, bad.b
            )));
        }
    }
    let mut components = Vec::new();
    for (w, u) in unitaries {
        if t * w > 0.0 {
            components.push(Component {
                weight: t * w,
                device: unitary_channel(u)?.into(),
            });
        }
    }
    for (w, p) in params_list {
        if (1.0 - t) * w > 0.0 {
            components.push(Component {
                weight: (1.0 - t) * w,
                device: extreme_channel(p)?.into(),
            });
        }
    }
    let mut choi = ComplexMatrix::zeros(4, 4);
    for c in &components {
        choi += &c.device.to_instrument().branches()[0]
            .1
            .choi()
            .scale(c.weight);
    }
    let channel = Channel::new(Instrument::new(
        2,
        2,
        vec![("0".into(), CpBranch::new(2, 2, choi)?)],
    )?)?;
    let n = components.len();
    let decomposition = DiscreteDecomposition::new(
        components,
        DecompositionMeta {
            strategy: "given".into(),
            leaves: n,
            ..DecompositionMeta::default()
        },
    )?;
    Ok((channel, decomposition))
}

/// Sampling regime for [`sample_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Planting {
    /// All parameters independent; `a ≠ b` and `q ≠ r` almost surely.
    Generic,
    /// `a = b`, everything else independent.
    EqualWeights,
    /// `q = r`, everything else independent.
    EqualTargets,
    /// `a = b`, `q = r` and matching relative phases: a unitary channel.
    Unitary,
    /// `a, b ∈ {0, 1}` drawn independently.
    Sharp,
}

impl Planting {
    pub const ALL: [Planting; 5] = [
        Planting::Generic,
        Planting::EqualWeights,
        Planting::EqualTargets,
        Planting::Unitary,
        Planting::Sharp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Planting::Generic => "generic",
            Planting::EqualWeights => "a=b",
            Planting::EqualTargets => "q=r",
            Planting::Unitary => "unitary",
            Planting::Sharp => "sharp",
        }
    }
}

pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, planting: Planting) -> ExtremeChannelParams {
    let angle = |rng: &mut R| rng.random_range(0.0..TAU);
    let mut params = ExtremeChannelParams {
        p: random::unit_vector(rng),
        q: random::unit_vector(rng),
        r: random::unit_vector(rng),
        a: rng.random_range(0.0..1.0),
        b: rng.random_range(0.0..1.0),
        theta1: angle(rng),
        theta2: angle(rng),
        phi1: angle(rng),
        phi2: angle(rng),
    };
    match planting {
        Planting::Generic => {}
        Planting::EqualWeights => params.b = params.a,
        Planting::EqualTargets => params.r = params.q,
        Planting::Unitary => {
            params.b = params.a;
            params.r = params.q;
            let phi2 = (params.phi1 + params.theta2 - params.theta1).rem_euclid(TAU);
            // rem_euclid rounds tiny negatives up to 2π
            params.phi2 = if phi2 < TAU { phi2 } else { 0.0 };
        }
        Planting::Sharp => {
            params.a = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            params.b = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    }
    params
}

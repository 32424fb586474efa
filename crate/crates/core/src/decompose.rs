//! Finite barycentric decompositions into extreme devices.
//!
//! Two strategies are registered by name:
//!
//! * `face-walk` handles every device kind. At a non-extreme device it takes
//!   the first admissible perturbation direction, walks both ways to the
//!   boundary of the positive cone, and recurses on the two endpoints. Each
//!   endpoint has strictly smaller total Choi rank, so the recursion ends at
//!   extreme devices. The result is one representing measure among many; it
//!   is neither minimal nor unique. The walk is a constructive stand-in:
//!   existence of a representing measure comes with no algorithm.
//! * `spectral` handles single effects by layering the spectrum:
//!   `E = μ₁·1 + Σₖ (μₖ − μₖ₋₁)·Qₖ + (1 − μ_d)·0`, where `Qₖ` projects onto
//!   the eigenvectors with eigenvalue ≥ `μₖ`. For a qubit effect with
//!   eigenvalues `λ₋ ≤ λ₊` this is `λ₋δ_1 + (1 − λ₊)δ_0 + (λ₊ − λ₋)δ_{P_E}`.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use crate::devices::{
    choi_distance, kraus_from_choi, require_valid, CpBranch, Device, DeviceKind, Effect,
    Instrument, KrausSet,
};
use crate::error::{Error, Result};
use crate::extremality::{self, criterion_map, is_extreme, perturbation_space, PerturbationBasis};
use crate::matcore::{self, vec_columns, ComplexMatrix, Tolerance};

pub const MERGE_DISTANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    pub tol: Tolerance,
    /// Budget on the number of extreme leaves produced before merging.
    pub max_components: usize,
    /// Run the two endpoint subproblems of each step concurrently.
    pub parallel: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            tol: Tolerance::default(),
            max_components: 100_000,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub device: Device,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecompositionMeta {
    pub strategy: String,
    /// Number of boundary steps taken.
    pub steps: usize,
    /// Deepest recursion level reached (0 for an extreme input).
    pub max_depth: usize,
    /// Leaves before merging equal components.
    pub leaves: usize,
}

/// Finite probability measure on extreme devices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDecomposition {
    components: Vec<Component>,
    meta: DecompositionMeta,
}

impl DiscreteDecomposition {
    pub fn new(components: Vec<Component>, meta: DecompositionMeta) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "a decomposition needs at least one component".into(),
            ));
        }
        if let Some(c) = components
            .iter()
            .find(|c| !(c.weight > 0.0 && c.weight <= 1.0 + 1e-12))
        {
            return Err(Error::InvalidArgument(format!(
                "component weight {} outside (0, 1]",
                c.weight
            )));
        }
        Ok(Self { components, meta })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn meta(&self) -> &DecompositionMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Choi max-norm distance between the barycenter and `original`.
    pub fn reconstruction_error(&self, original: &Device) -> Result<f64> {
        choi_distance(&reconstruct(self)?, original)
    }
}

/// One two-sided step to the boundary along an admissible direction.
#[derive(Debug, Clone)]
pub struct FaceStep {
    pub direction: Vec<ComplexMatrix>,
    pub t_plus: f64,
    pub t_minus: f64,
    pub plus: Instrument,
    pub minus: Instrument,
}

impl FaceStep {
    /// Weights of the `plus` and `minus` endpoints in the barycenter.
    pub fn weights(&self) -> (f64, f64) {
        let total = self.t_plus + self.t_minus;
        (self.t_minus / total, self.t_plus / total)
    }
}

/// Walks from `i` along `±direction` (Hermitian blocks in the coordinates of
/// the minimal Kraus sets from [`kraus_from_choi`]) to the boundary.
pub fn boundary_step(
    i: &Instrument,
    direction: &[ComplexMatrix],
    tol: Tolerance,
) -> Result<FaceStep> {
    require_valid(&Device::Instrument(i.clone()), tol)?;
    let kraus: Vec<KrausSet> = i
        .branches()
        .iter()
        .map(|(_, b)| kraus_from_choi(b, tol))
        .collect::<Result<_>>()?;
    step_along(i, &kraus, direction, tol)
}

fn step_along(
    i: &Instrument,
    kraus: &[KrausSet],
    direction: &[ComplexMatrix],
    tol: Tolerance,
) -> Result<FaceStep> {
    let image = criterion_map(kraus, direction, i.d_in())?;
    let norm: f64 = direction
        .iter()
        .map(|d| d.frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm <= tol.atol {
        return Err(Error::InvalidArgument("zero perturbation direction".into()));
    }
    let scale = kraus
        .iter()
        .flat_map(|k| k.operators())
        .map(|k| k.frobenius_norm().powi(2))
        .fold(0.0, f64::max);
    if image.max_abs() > 10.0 * tol.threshold(scale) * norm {
        return Err(Error::InvalidArgument(format!(
            "direction leaves the perturbation space (criterion residual {:.3e})",
            image.max_abs()
        )));
    }

    // 1 + tD ⪰ 0 on every branch
    let mut t_plus = f64::INFINITY;
    let mut t_minus = f64::INFINITY;
    for d in direction.iter().filter(|d| d.rows() > 0) {
        let (values, _) = matcore::eigh(d, tol.relaxed(1e3))?;
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if lo < 0.0 {
            t_plus = t_plus.min(-1.0 / lo);
        }
        if hi > 0.0 {
            t_minus = t_minus.min(1.0 / hi);
        }
    }
    if !(t_plus.is_finite() && t_minus.is_finite()) {
        return Err(Error::InvalidArgument(
            "direction does not reach the boundary on both sides".into(),
        ));
    }

    let relaxed = tol.relaxed(10.0);
    let plus = endpoint(i, kraus, direction, t_plus, tol)?;
    let minus = endpoint(i, kraus, direction, -t_minus, tol)?;
    for end in [&plus, &minus] {
        let dropped = i
            .branches()
            .iter()
            .zip(end.branches())
            .zip(kraus)
            .any(|(((_, _), (_, b)), k)| matcore::rank(b.choi(), relaxed) < k.len());
        if !dropped {
            return Err(Error::InvalidArgument(
                "boundary step did not lower any Choi rank".into(),
            ));
        }
    }
    Ok(FaceStep {
        direction: direction.to_vec(),
        t_plus,
        t_minus,
        plus,
        minus,
    })
}

/// Branch Choi matrices `W (1 + tD)ᵀ W†` with `W = [vec K_0, …]`. The
/// coefficient matrix is projected onto the PSD cone, dropping eigenvalues
/// far below the tolerance so the one that hits the boundary is exactly zero.
/// Normalization is then restored by [`renormalize`].
fn endpoint(
    i: &Instrument,
    kraus: &[KrausSet],
    direction: &[ComplexMatrix],
    t: f64,
    tol: Tolerance,
) -> Result<Instrument> {
    let n = i.d_in() * i.d_out();
    let mut branches = Vec::with_capacity(kraus.len());
    for (((label, _), set), d) in i.branches().iter().zip(kraus).zip(direction) {
        let r = set.len();
        let choi = if r == 0 {
            ComplexMatrix::zeros(n, n)
        } else {
            let coeff = &ComplexMatrix::identity(r) + &d.transpose().scale(t);
            let (values, v) = matcore::eigh(&coeff, tol.relaxed(10.0))?;
            let smax = values.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let cut = 1e-3 * tol.threshold(smax);
            let vecs: Vec<Vec<_>> = set.operators().iter().map(vec_columns).collect();
            let w = ComplexMatrix::from_fn(n, r, |a, b| vecs[b][a]);
            let mut acc = ComplexMatrix::zeros(n, n);
            for (k, &lambda) in values.iter().enumerate() {
                if lambda > cut {
                    let col = &w * &ComplexMatrix::column(&v.column_entries(k));
                    let c = col.column_entries(0);
                    acc += &ComplexMatrix::outer(&c, &c).scale(lambda);
                }
            }
            acc.hermitian_part()
        };
        branches.push((label.clone(), CpBranch::new(i.d_in(), i.d_out(), choi)?));
    }
    renormalize(Instrument::new(i.d_in(), i.d_out(), branches)?, tol)
}

/// Congruence `K ↦ K T^{−1/2}` with `T` the total effect, i.e.
/// `J ↦ (S ⊗ 1) J (S ⊗ 1)†` with `S = (T^{−1/2})ᵀ`. Removes rounding drift in
/// the normalization while keeping every branch rank and positivity.
fn renormalize(i: Instrument, tol: Tolerance) -> Result<Instrument> {
    let total = i.total_effect().hermitian_part();
    if (&total - &ComplexMatrix::identity(i.d_in())).max_abs() == 0.0 {
        return Ok(i);
    }
    let s = matcore::pinv_sqrt(&total, tol).transpose();
    let lift = matcore::kron(&s, &ComplexMatrix::identity(i.d_out()));
    let branches = i
        .branches()
        .iter()
        .map(|(label, b)| {
            let j = (&(&lift * b.choi()) * &lift.adjoint()).hermitian_part();
            Ok((label.clone(), CpBranch::new(i.d_in(), i.d_out(), j)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Instrument::new(i.d_in(), i.d_out(), branches)
}

/// Boundary step lengths through the Choi picture,
/// `t = 1 / max(0, −λ_min(J^{−1/2} Δ J^{−1/2}))` minimized over branches, with
/// the pseudo-inverse square root taken on the support of `J`.
pub fn choi_boundary_lengths(
    space: &PerturbationBasis,
    direction: &[ComplexMatrix],
    tol: Tolerance,
) -> Result<(f64, f64)> {
    let deltas = space.choi_direction(direction)?;
    let mut t_plus = f64::INFINITY;
    let mut t_minus = f64::INFINITY;
    for ((_, b), delta) in space.instrument().branches().iter().zip(&deltas) {
        let s = matcore::pinv_sqrt(b.choi(), tol);
        let m = (&(&s * delta) * &s).hermitian_part();
        let (values, _) = matcore::eigh(&m, tol)?;
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if lo < 0.0 {
            t_plus = t_plus.min(1.0 / (-lo));
        }
        if hi > 0.0 {
            t_minus = t_minus.min(1.0 / hi);
        }
    }
    Ok((t_plus, t_minus))
}

pub trait DecompositionStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn supports(&self, kind: DeviceKind) -> bool;
    fn decompose(&self, dev: &Device, opts: &DecomposeOptions) -> Result<DiscreteDecomposition>;
}

/// Named decomposition strategies.
pub struct StrategyRegistry {
    strategies: BTreeMap<&'static str, Box<dyn DecompositionStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(FaceWalk));
        r.register(Box::new(SpectralLayers));
        r
    }

    pub fn register(&mut self, strategy: Box<dyn DecompositionStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DecompositionStrategy> {
        self.strategies
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }

    /// Spectral layering for effects, face walk otherwise.
    pub fn default_for(&self, kind: DeviceKind) -> Result<&dyn DecompositionStrategy> {
        match kind {
            DeviceKind::Effect => self.get(SpectralLayers::NAME),
            _ => self.get(FaceWalk::NAME),
        }
    }

    pub fn decompose(
        &self,
        name: Option<&str>,
        dev: &Device,
        opts: &DecomposeOptions,
    ) -> Result<DiscreteDecomposition> {
        let strategy = match name {
            Some(n) => self.get(n)?,
            None => self.default_for(dev.kind())?,
        };
        if !strategy.supports(dev.kind()) {
            return Err(Error::InvalidArgument(format!(
                "strategy `{}` does not handle {} devices",
                strategy.name(),
                dev.kind().as_str()
            )));
        }
        strategy.decompose(dev, opts)
    }
}

pub fn registry() -> &'static StrategyRegistry {
    static REGISTRY: OnceLock<StrategyRegistry> = OnceLock::new();
    REGISTRY.get_or_init(StrategyRegistry::with_builtin)
}

pub fn decompose_extremal(
    dev: &Device,
    tol: Tolerance,
    max_components: usize,
) -> Result<DiscreteDecomposition> {
    let opts = DecomposeOptions {
        tol,
        max_components,
        ..DecomposeOptions::default()
    };
    registry().decompose(None, dev, &opts)
}

pub struct FaceWalk;

impl FaceWalk {
    pub const NAME: &'static str = "face-walk";
}

struct WalkState {
    opts: DecomposeOptions,
    steps: AtomicUsize,
    leaves: AtomicUsize,
    max_depth: AtomicUsize,
    depth_limit: usize,
}

impl WalkState {
    fn walk(&self, inst: Instrument, depth: usize) -> Result<Vec<(f64, Instrument)>> {
        self.max_depth.fetch_max(depth, Ordering::Relaxed);
        if depth > self.depth_limit {
            return Err(Error::InvalidArgument(format!(
                "face walk exceeded depth {}",
                self.depth_limit
            )));
        }
        let space = perturbation_space(&inst, self.opts.tol)?;
        if space.is_empty() {
            let n = self.leaves.fetch_add(1, Ordering::Relaxed) + 1;
            if n > self.opts.max_components {
                return Err(Error::TooManyComponents {
                    limit: self.opts.max_components,
                });
            }
            return Ok(vec![(1.0, inst)]);
        }
        let step = step_along(&inst, space.kraus(), &space.basis()[0], self.opts.tol)?;
        self.steps.fetch_add(1, Ordering::Relaxed);
        let (w_plus, w_minus) = step.weights();
        let FaceStep { plus, minus, .. } = step;
        let (a, b) = if self.opts.parallel {
            rayon::join(
                || self.walk(plus, depth + 1),
                || self.walk(minus, depth + 1),
            )
        } else {
            (self.walk(plus, depth + 1), self.walk(minus, depth + 1))
        };
        let mut out = a?;
        for leaf in &mut out {
            leaf.0 *= w_plus;
        }
        out.extend(b?.into_iter().map(|(w, d)| (w * w_minus, d)));
        Ok(out)
    }
}

impl DecompositionStrategy for FaceWalk {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn description(&self) -> &'static str {
        "recursive two-sided walk to the positive-cone boundary along admissible perturbations"
    }

    fn supports(&self, _kind: DeviceKind) -> bool {
        true
    }

    fn decompose(&self, dev: &Device, opts: &DecomposeOptions) -> Result<DiscreteDecomposition> {
        require_valid(dev, opts.tol)?;
        let inst = dev.to_instrument();
        let per_branch = (inst.d_in() * inst.d_out()).pow(2);
        let state = WalkState {
            opts: *opts,
            steps: AtomicUsize::new(0),
            leaves: AtomicUsize::new(0),
            max_depth: AtomicUsize::new(0),
            depth_limit: per_branch * inst.branches().len(),
        };
        let leaves = state.walk(inst, 0)?;
        let raw = leaves.len();
        let kind = dev.kind();
        let components = merge_leaves(
            leaves
                .into_iter()
                .map(|(w, i)| Ok((w, Device::from_instrument(kind, i)?)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        DiscreteDecomposition::new(
            components,
            DecompositionMeta {
                strategy: Self::NAME.to_string(),
                steps: state.steps.into_inner(),
                max_depth: state.max_depth.into_inner(),
                leaves: raw,
            },
        )
    }
}

/// Sums the weights of leaves within [`MERGE_DISTANCE`] of each other,
/// keeping first-occurrence order.
fn merge_leaves(leaves: Vec<(f64, Device)>) -> Result<Vec<Component>> {
    // bucket by coarse branch traces; only leaves in the same bucket are compared
    let key = |d: &Device| -> Vec<i64> {
        d.to_instrument()
            .branches()
            .iter()
            .map(|(_, b)| (b.choi().trace().re * 1e6).round() as i64)
            .collect()
    };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut out: Vec<Component> = Vec::new();
    for (weight, device) in leaves {
        let k = key(&device);
        let slot = buckets.entry(k).or_default();
        let mut merged = false;
        for &idx in slot.iter() {
            if choi_distance(&out[idx].device, &device)? <= MERGE_DISTANCE {
                out[idx].weight += weight;
                merged = true;
                break;
            }
        }
        if !merged {
            slot.push(out.len());
            out.push(Component { weight, device });
        }
    }
    Ok(out)
}

pub struct SpectralLayers;

impl SpectralLayers {
    pub const NAME: &'static str = "spectral";
}

impl DecompositionStrategy for SpectralLayers {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn description(&self) -> &'static str {
        "layer-cake decomposition of an effect into spectral projections"
    }

    fn supports(&self, kind: DeviceKind) -> bool {
        kind == DeviceKind::Effect
    }

    fn decompose(&self, dev: &Device, opts: &DecomposeOptions) -> Result<DiscreteDecomposition> {
        let Device::Effect(effect) = dev else {
            return Err(Error::InvalidArgument(
                "spectral layering applies to effects only".into(),
            ));
        };
        require_valid(dev, opts.tol)?;
        let layers = spectral_layers(effect, opts.tol)?;
        if layers.len() > opts.max_components {
            return Err(Error::TooManyComponents {
                limit: opts.max_components,
            });
        }
        let mut components = Vec::with_capacity(layers.len());
        for (weight, projection) in layers {
            let device = Device::Effect(Effect::new(projection)?);
            if !is_extreme(&device, opts.tol)?.extreme {
                return Err(Error::InvalidArgument(
                    "spectral layer is not a projection".into(),
                ));
            }
            components.push(Component { weight, device });
        }
        let n = components.len();
        DiscreteDecomposition::new(
            components,
            DecompositionMeta {
                strategy: Self::NAME.to_string(),
                steps: 0,
                max_depth: 0,
                leaves: n,
            },
        )
    }
}

/// `(weight, projection)` pairs of the layer-cake decomposition, ordered
/// identity first, zero last. Eigenvalues closer than the tolerance are
/// pooled so degenerate spectra give no spurious layers.
pub fn spectral_layers(effect: &Effect, tol: Tolerance) -> Result<Vec<(f64, ComplexMatrix)>> {
    let dim = effect.dim();
    let (values, vectors) = matcore::eigh(effect.matrix(), tol)?;
    let thr = tol.threshold(1.0);
    let mut clusters: Vec<(f64, Vec<usize>)> = Vec::new();
    for (k, &v) in values.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        match clusters.last_mut() {
            Some((mean, members)) if v - *mean <= thr => {
                let n = members.len() as f64;
                *mean = (*mean * n + v) / (n + 1.0);
                members.push(k);
            }
            _ => clusters.push((v, vec![k])),
        }
    }
    let mut layers = Vec::new();
    let mut below = 0.0;
    for (c, (level, _)) in clusters.iter().enumerate() {
        let weight = level - below;
        below = *level;
        if weight > thr {
            let mut q = ComplexMatrix::zeros(dim, dim);
            for (_, members) in &clusters[c..] {
                for &k in members {
                    let v = vectors.column_entries(k);
                    q += &ComplexMatrix::outer(&v, &v);
                }
            }
            layers.push((weight, q));
        }
    }
    let top = 1.0 - below;
    if top > thr {
        layers.push((top, ComplexMatrix::zeros(dim, dim)));
    }
    // pooled sub-threshold layers are folded into the nearest kept weight
    let total: f64 = layers.iter().map(|(w, _)| w).sum();
    if let Some(first) = layers.first_mut() {
        first.0 += 1.0 - total;
    }
    Ok(layers)
}

/// Branch-wise convex combination of the components.
pub fn reconstruct(d: &DiscreteDecomposition) -> Result<Device> {
    let first = &d.components[0].device;
    let kind = first.kind();
    let base = first.to_instrument();
    let n = base.d_in() * base.d_out();
    let mut chois: Vec<ComplexMatrix> = vec![ComplexMatrix::zeros(n, n); base.branches().len()];
    for c in &d.components {
        if c.device.kind() != kind {
            return Err(Error::Dimension("components of different kinds".into()));
        }
        let inst = c.device.to_instrument();
        if inst.d_in() != base.d_in()
            || inst.d_out() != base.d_out()
            || inst.branches().len() != base.branches().len()
            || inst.labels().zip(base.labels()).any(|(a, b)| a != b)
        {
            return Err(Error::Dimension("components have different shapes".into()));
        }
        for (acc, (_, b)) in chois.iter_mut().zip(inst.branches()) {
            *acc += &b.choi().scale(c.weight);
        }
    }
    let branches = base
        .labels()
        .zip(chois)
        .map(|(l, j)| Ok((l.to_string(), CpBranch::new(base.d_in(), base.d_out(), j)?)))
        .collect::<Result<Vec<_>>>()?;
    Device::from_instrument(kind, Instrument::new(base.d_in(), base.d_out(), branches)?)
}

/// Count of outcomes with a nonzero branch in an extreme component.
pub fn support_size(dev: &Device, tol: Tolerance) -> Result<usize> {
    let space = extremality::device_perturbation_space(dev, tol)?;
    Ok(extremality::nonzero_branches(&space))
}

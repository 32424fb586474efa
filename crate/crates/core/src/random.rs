//! Random devices for property checks and CLI batch suites.
//!
//! All samplers take a caller-supplied generator; the CLI seeds a
//! `ChaCha8Rng`, so a seed reproduces a suite on any platform.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::devices::{Channel, Instrument, KrausSet, Povm};
use crate::matcore::{self, ComplexMatrix, C64, ONE, ZERO};

/// Entries drawn i.i.d. from the standard complex Gaussian.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Isometry `C^cols → C^rows` (`rows ≥ cols`), Haar-distributed via QR with
/// phase correction.
pub fn isometry<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    assert!(rows >= cols, "isometry needs rows >= cols");
    let g = ginibre(rng, rows, cols).into_dmatrix();
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let q = DMatrix::from_fn(rows, cols, |i, j| {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        q[(i, j)] * phase
    });
    ComplexMatrix::new(q).expect("QR of a finite matrix is finite")
}

pub fn unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComplexMatrix {
    isometry(rng, dim, dim)
}

/// Uniform point on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-8 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random density matrix `GG†/Tr`.
pub fn density_matrix<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComplexMatrix {
    let g = ginibre(rng, dim, dim);
    let rho = &g * &g.adjoint();
    let t = rho.trace().re;
    rho.scale(1.0 / t)
}

pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComplexMatrix {
    ginibre(rng, dim, dim).hermitian_part()
}

/// Instrument whose branches have the given Kraus ranks, obtained by cutting a
/// random isometry `C^{d_in} → C^{d_out} ⊗ C^{Σr}` into blocks.
pub fn instrument_with_ranks<R: Rng + ?Sized>(
    rng: &mut R,
    d_in: usize,
    d_out: usize,
    ranks: &[usize],
) -> Instrument {
    let total: usize = ranks.iter().sum();
    let y = isometry(rng, d_out * total, d_in);
    let mut row = 0;
    let outcomes = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let ops = (0..r)
                .map(|_| {
                    let k = ComplexMatrix::from_fn(d_out, d_in, |a, b| y[(row + a, b)]);
                    row += d_out;
                    k
                })
                .collect();
            (
                i.to_string(),
                KrausSet::new(d_in, d_out, ops).expect("shapes agree"),
            )
        })
        .collect();
    Instrument::from_kraus(d_in, d_out, outcomes).expect("labels are distinct")
}

/// Random ranks in `1..=max`, raised until `d_out·Σr ≥ d_in` so that a
/// trace-preserving completion exists.
fn feasible_ranks<R: Rng + ?Sized>(
    rng: &mut R,
    outcomes: usize,
    max: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<usize> {
    let mut ranks: Vec<usize> = (0..outcomes).map(|_| rng.random_range(1..=max)).collect();
    let mut i = 0;
    while d_out * ranks.iter().sum::<usize>() < d_in && i < ranks.len() {
        if ranks[i] < max {
            ranks[i] += 1;
        } else {
            i += 1;
        }
    }
    ranks
}

/// Instrument with `outcomes` branches of random Kraus rank in `1..=d_in·d_out`.
pub fn instrument<R: Rng + ?Sized>(
    rng: &mut R,
    d_in: usize,
    d_out: usize,
    outcomes: usize,
) -> Instrument {
    let ranks = feasible_ranks(rng, outcomes, d_in * d_out, d_in, d_out);
    instrument_with_ranks(rng, d_in, d_out, &ranks)
}

pub fn channel<R: Rng + ?Sized>(
    rng: &mut R,
    d_in: usize,
    d_out: usize,
    kraus_rank: usize,
) -> Channel {
    Channel::new(instrument_with_ranks(rng, d_in, d_out, &[kraus_rank])).expect("single branch")
}

pub fn povm<R: Rng + ?Sized>(rng: &mut R, dim: usize, outcomes: usize) -> Povm {
    let ranks = feasible_ranks(rng, outcomes, dim, dim, 1);
    let inst = instrument_with_ranks(rng, dim, 1, &ranks);
    crate::devices::instrument_associated_povm(&inst)
}

/// Projection-valued measure: a random orthonormal basis grouped into
/// `outcomes` nonempty blocks.
pub fn pvm<R: Rng + ?Sized>(rng: &mut R, dim: usize, outcomes: usize) -> Povm {
    assert!((1..=dim).contains(&outcomes));
    let u = unitary(rng, dim);
    // first `outcomes` vectors seed the blocks, the rest are assigned at random
    let mut owner: Vec<usize> = (0..dim).map(|k| if k < outcomes { k } else { 0 }).collect();
    for o in owner.iter_mut().skip(outcomes) {
        *o = rng.random_range(0..outcomes);
    }
    let effects = (0..outcomes)
        .map(|b| {
            let mut p = ComplexMatrix::zeros(dim, dim);
            for (k, _) in owner.iter().enumerate().filter(|(_, &o)| o == b) {
                let v = u.column_entries(k);
                p += &ComplexMatrix::outer(&v, &v);
            }
            (b.to_string(), p)
        })
        .collect();
    Povm::new(dim, effects).expect("distinct labels and square effects")
}

/// Projector onto the `k`-th computational basis vector.
pub fn basis_projector(dim: usize, k: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, dim, |a, b| if a == k && b == k { ONE } else { ZERO })
}

/// Convex combination of equally shaped POVMs.
pub fn mix_povms(parts: &[(f64, &Povm)]) -> Povm {
    let first = parts[0].1;
    let outcomes = first
        .outcomes()
        .iter()
        .enumerate()
        .map(|(idx, (label, _))| {
            let mut acc = ComplexMatrix::zeros(first.dim(), first.dim());
            for (w, p) in parts {
                acc += &p.outcomes()[idx].1.scale(*w);
            }
            (label.clone(), acc)
        })
        .collect();
    Povm::new(first.dim(), outcomes).expect("shapes agree")
}

/// Projector spectrum check used by samplers' callers.
pub fn is_projection(p: &ComplexMatrix, atol: f64) -> bool {
    (&(p * p) - p).max_abs() <= atol
        && matcore::is_hermitian(p, matcore::Tolerance::default()).unwrap_or(false)
}

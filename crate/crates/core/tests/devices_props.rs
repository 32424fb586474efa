use proptest::prelude::*;
use qbary::devices::{
    apply_heisenberg, apply_schrodinger, build_minimal_dilation, choi_distance, choi_from_kraus,
    kraus_from_choi, validate, Device,
};
use qbary::io::{device_from_json, device_to_json};
use qbary::matcore::{ComplexMatrix, Tolerance};
use qbary::random;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerance {
    Tolerance::default()
}

fn random_device(rng: &mut ChaCha8Rng) -> Device {
    let d_in: usize = rng.random_range(1..=3);
    let d_out = rng.random_range(1..=3);
    let count = rng.random_range(1..=3);
    match rng.random_range(0..3) {
        0 => random::povm(rng, d_in, count + 1).into(),
        1 => random::channel(
            rng,
            d_in,
            d_out,
            count.clamp(d_in.div_ceil(d_out), d_in * d_out),
        )
        .into(),
        _ => random::instrument(rng, d_in, d_out, count).into(),
    }
}

/// `Tr[Φ_x(ρ) B] = Tr[ρ Φ_x*(B)]` on random pairs.
#[test]
fn schrodinger_heisenberg_duality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let d_in: usize = rng.random_range(1..=3);
        let d_out = rng.random_range(1..=3);
        let inst = random::instrument(&mut rng, d_in, d_out, 2);
        let rho = random::density_matrix(&mut rng, d_in);
        let b = random::ginibre(&mut rng, d_out, d_out);
        for label in inst.labels() {
            let lhs = (&apply_schrodinger(&inst, label, &rho).unwrap() * &b).trace();
            let rhs = (&rho * &apply_heisenberg(&inst, label, &b).unwrap()).trace();
            assert!((lhs - rhs).norm() < 1e-12, "{lhs} vs {rhs}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_devices_validate(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dev = random_device(&mut rng);
        let report = validate(&dev, tol());
        prop_assert!(report.is_valid(), "{:?}", report);
    }

    #[test]
    fn kraus_choi_round_trip(seed in any::<u64>(), d_in in 1usize..4, d_out in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rng.random_range(d_in.div_ceil(d_out)..=d_in * d_out);
        let ch = random::channel(&mut rng, d_in, d_out, rank);
        let kraus = kraus_from_choi(ch.branch(), tol()).unwrap();
        prop_assert_eq!(kraus.len(), rank);
        let back = choi_from_kraus(&kraus);
        prop_assert!((back.choi() - ch.branch().choi()).max_abs() < 1e-12);
    }

    #[test]
    fn dilation_is_isometric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in: usize = rng.random_range(1..=3);
        let d_out = rng.random_range(1..=3);
        let outcomes = rng.random_range(1..=3);
        let inst = random::instrument(&mut rng, d_in, d_out, outcomes);
        let dil = build_minimal_dilation(&inst, tol()).unwrap();
        let y = &dil.isometry;
        prop_assert!((&(&y.adjoint() * y) - &ComplexMatrix::identity(d_in)).max_abs() < 1e-10);
        prop_assert!(dil.multiplicities.iter().all(|&m| m <= d_in * d_out));
        let b = random::ginibre(&mut rng, d_out, d_out);
        for (idx, label) in inst.labels().enumerate() {
            let diff = &dil.heisenberg(idx, &b).unwrap() - &apply_heisenberg(&inst, label, &b).unwrap();
            prop_assert!(diff.max_abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dev = random_device(&mut rng);
        let back = device_from_json(&device_to_json(&dev)).unwrap();
        prop_assert_eq!(back.kind(), dev.kind());
        prop_assert_eq!(choi_distance(&dev, &back).unwrap(), 0.0);
    }
}

#[test]
fn unnormalized_device_reports_trace_failure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ch = random::channel(&mut rng, 2, 2, 2);
    let kraus = kraus_from_choi(ch.branch(), tol()).unwrap();
    let scaled = qbary::KrausSet::new(
        2,
        2,
        kraus.operators().iter().map(|k| k.scale(1.1)).collect(),
    )
    .unwrap();
    let inst = qbary::Instrument::from_kraus(2, 2, vec![("0".into(), scaled)]).unwrap();
    let report = validate(&inst.into(), tol());
    assert!(!report.is_valid());
    assert!(report.failures().all(|c| c.margin < 0.0));
}

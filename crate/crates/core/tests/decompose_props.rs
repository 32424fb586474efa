use proptest::prelude::*;
use qbary::decompose::{
    decompose_extremal, reconstruct, registry, support_size, DecomposeOptions, FaceWalk,
    SpectralLayers,
};
use qbary::devices::{
    choi_distance, instrument_associated_povm, povm_as_instrument, Device, DeviceKind,
};
use qbary::matcore::Tolerance;
use qbary::{is_extreme, random, Effect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerance {
    Tolerance::default()
}

fn random_device(rng: &mut ChaCha8Rng) -> Device {
    let d_in = rng.random_range(1..=2);
    let d_out = rng.random_range(1..=2);
    let count = rng.random_range(1..=3);
    match rng.random_range(0..4) {
        0 => random::povm(rng, d_in + 1, count + 1).into(),
        1 => random::channel(
            rng,
            d_in,
            d_out,
            count.clamp(d_in.div_ceil(d_out), d_in * d_out),
        )
        .into(),
        2 => random::instrument(rng, d_in, d_out, count).into(),
        _ => {
            let p = random::povm(rng, d_in + 1, 2);
            Effect::new(p.outcomes()[0].1.clone()).unwrap().into()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn decomposition_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dev = random_device(&mut rng);
        let d = decompose_extremal(&dev, tol(), 100_000).unwrap();
        prop_assert!((d.weight_sum() - 1.0).abs() < 1e-10);
        prop_assert!(d.reconstruction_error(&dev).unwrap() < 1e-8);
        prop_assert!(choi_distance(&reconstruct(&d).unwrap(), &dev).unwrap() < 1e-8);
        for c in d.components() {
            prop_assert_eq!(c.device.kind(), dev.kind());
            prop_assert!(is_extreme(&c.device, tol()).unwrap().extreme);
            let d_in = c.device.d_in();
            prop_assert!(support_size(&c.device, tol()).unwrap() <= d_in * d_in);
        }
    }

    /// Decomposing an extreme component returns it unchanged.
    #[test]
    fn decomposition_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dev = random_device(&mut rng);
        let d = decompose_extremal(&dev, tol(), 100_000).unwrap();
        let c = &d.components()[0].device;
        let again = decompose_extremal(c, tol(), 100_000).unwrap();
        prop_assert_eq!(again.len(), 1);
        prop_assert!(choi_distance(&again.components()[0].device, c).unwrap() < 1e-9);
    }

    /// A POVM decomposes the same way whether given directly or as a
    /// trivial-output instrument.
    #[test]
    fn povm_and_instrument_paths_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcomes = rng.random_range(2..=4);
        let povm = random::povm(&mut rng, 2, outcomes);
        let inst = povm_as_instrument(&povm);
        let direct = decompose_extremal(&povm.clone().into(), tol(), 100_000).unwrap();
        let via = decompose_extremal(&inst.into(), tol(), 100_000).unwrap();
        prop_assert_eq!(direct.len(), via.len());
        for (a, b) in direct.components().iter().zip(via.components()) {
            prop_assert!((a.weight - b.weight).abs() < 1e-10);
            let Device::Instrument(bi) = &b.device else { panic!("kind changed") };
            let back = Device::Povm(instrument_associated_povm(bi));
            prop_assert!(choi_distance(&a.device, &back).unwrap() < 1e-10);
        }
    }
}

#[test]
fn builtin_strategies_are_registered() {
    let names: Vec<_> = registry().names().collect();
    assert!(names.contains(&FaceWalk::NAME) && names.contains(&SpectralLayers::NAME));
    assert_eq!(
        registry().default_for(DeviceKind::Effect).unwrap().name(),
        SpectralLayers::NAME
    );
    assert_eq!(
        registry().default_for(DeviceKind::Channel).unwrap().name(),
        FaceWalk::NAME
    );
}

#[test]
fn strategies_agree_on_effects() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let p = random::povm(&mut rng, 3, 2);
        let dev: Device = Effect::new(p.outcomes()[0].1.clone()).unwrap().into();
        let opts = DecomposeOptions::default();
        for name in [FaceWalk::NAME, SpectralLayers::NAME] {
            let d = registry().decompose(Some(name), &dev, &opts).unwrap();
            assert!(d.reconstruction_error(&dev).unwrap() < 1e-8, "{name}");
        }
    }
}

#[test]
fn component_budget_is_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let dev: Device = random::channel(&mut rng, 2, 2, 4).into();
    let err = decompose_extremal(&dev, tol(), 1).unwrap_err();
    assert!(
        matches!(err, qbary::Error::TooManyComponents { .. }),
        "{err}"
    );
}

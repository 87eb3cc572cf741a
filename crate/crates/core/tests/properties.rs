//! Property tests over random seeds, fields, horizons and points.

use proptest::prelude::*;
use silt_core::estimator::{occupation_check, phi_delta};
use silt_core::fields::TrigSum;
use silt_core::formulas::{discrete_ito, discrete_ito_tanaka_meyer, discrete_try, ItoVariant, TryMode};
use silt_core::grid::{conservative_modify, trapezoidal_sum, DiscretePath, GridScalarSpec};
use silt_core::occupancy::{local_time, silt, silt_naive, SiltField};
use silt_core::rng::{derive_replica_seed, CoinMatrix};
use silt_core::summation::ExactSum;
use silt_core::walk::{build_nested_family, coin_walk, shrink, skorohod_embed_all, LatticePath, PlanarWalk};

fn trig(seed: u64, modes: usize) -> TrigSum {
    let mut s = seed | 1;
    TrigSum::random(modes, move || {
        s = s.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn window_for(walk: &PlanarWalk) -> i64 {
    walk.positions().iter().map(|p| p[0].abs().max(p[1].abs())).max().unwrap() + 2
}

fn entries(f: &SiltField) -> Vec<([i64; 2], [u64; 4])> {
    let mut v: Vec<_> = f.iter().filter(|(_, c)| c.iter().any(|&k| k > 0)).collect();
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn nested_levels_refine_and_embed(seed in any::<u64>(), top in 2u32..7, k in prop::sample::select(vec![0.5, 1.0, 1.75])) {
        let f = build_nested_family(&CoinMatrix::new(seed), top, k).unwrap();
        prop_assert_eq!(f.refinement_violation(), None);
        let fine = shrink(&f, top).unwrap();
        for m in 0..top {
            let e = skorohod_embed_all(&fine, m).unwrap().to_walk();
            let coarse = f.walk(m);
            let n = e.num_points().min(coarse.len());
            prop_assert_eq!(&e.positions()[..n], &coarse[..n]);
        }
    }

    #[test]
    fn ito_identities_hold(seed in any::<u64>(), level in 3u32..7, frac in 0.05f64..1.0, modes in 1usize..5) {
        let steps = ((4f64.powi(level as i32)) * frac) as usize;
        let walk = coin_walk(&CoinMatrix::new(seed), level, steps);
        let g = trig(seed, modes);
        let f = conservative_modify(&g, [0.1, -0.3], walk.mesh(), window_for(&walk));
        let ito = discrete_ito(&f, &walk, steps, ItoVariant::Ito).unwrap();
        let strat = discrete_ito(&f, &walk, steps, ItoVariant::Stratonovich).unwrap();
        let itm = discrete_ito_tanaka_meyer(&f, &walk, steps).unwrap();
        for d in [&ito, &strat, &itm] {
            prop_assert!(d.residual.abs() <= 1e-10 * d.scale.max(f64::MIN_POSITIVE), "{:?}", d);
        }
        prop_assert_eq!(itm.correction.to_bits(), ito.correction.to_bits());
        prop_assert_eq!(strat.correction, 0.0);
    }

    #[test]
    fn exact_try_holds(seed in any::<u64>(), steps in 0usize..300, y in (-6i64..6, -6i64..6)) {
        let walk = coin_walk(&CoinMatrix::new(seed), 5, steps);
        let d = discrete_try(&trig(seed, 3), &walk, [y.0, y.1], steps, TryMode::Exact).unwrap();
        prop_assert!(d.residual.abs() <= 1e-10 * d.scale.max(f64::MIN_POSITIVE), "{:?}", d);
        prop_assert!((d.laplace_quotient_pairs - d.laplace_quotient_silt).abs() <= 1e-10 * d.scale.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn modified_fields_are_conservative(seed in any::<u64>(), m in 3i32..7, radius in 4i64..40) {
        let g = trig(seed, 4);
        let h = 0.5f64.powi(m);
        let f = conservative_modify(&g, [0.2, 0.4], h, radius);
        prop_assert!(f.max_abs_curl() <= 1e-12);
        // Closed loop 0 → a → b → 0 made of L-shaped legs.
        let a = [(seed % 7) as i64 - 3, (seed % 5) as i64 - 2];
        let b = [-a[1], a[0] + 1];
        let mut loop_path = DiscretePath::l_path([0, 0], a);
        loop_path.append(&DiscretePath::l_path(a, b));
        loop_path.append(&DiscretePath::l_path(b, [0, 0]));
        prop_assert!(trapezoidal_sum(&f, &loop_path).unwrap().abs() <= 1e-11);
        prop_assert_eq!(f.get([radius / 3, 0]).unwrap(), g.gradient(f.point([radius / 3, 0])));
    }

    #[test]
    fn silt_mass_partials_and_prefixes(seed in any::<u64>(), n in 0usize..2000, extra in 0usize..200) {
        let walk = coin_walk(&CoinMatrix::new(seed), 6, n + extra);
        let a = silt(&walk, n).unwrap();
        let b = silt(&walk, n + extra).unwrap();
        prop_assert_eq!(a.total_mass(), (n as u128 * (n as u128 + 1)) / 2);
        for (x, c) in a.iter() {
            prop_assert_eq!(c.iter().sum::<u64>(), a.total(x));
            prop_assert!(b.total(x) >= a.total(x));
        }
        let lt = local_time(&walk, n).unwrap();
        prop_assert_eq!(lt.total(), n as u64);
    }

    #[test]
    fn incremental_matches_naive(seed in any::<u64>(), n in 0usize..300) {
        let walk = coin_walk(&CoinMatrix::new(seed), 4, n);
        prop_assert_eq!(entries(&silt(&walk, n).unwrap()), entries(&silt_naive(&walk, n).unwrap()));
    }

    #[test]
    fn occupation_identity_is_exact(seed in any::<u64>(), n in 1usize..600, c in prop::array::uniform4(-9i64..9)) {
        let walk = coin_walk(&CoinMatrix::new(seed), 5, n);
        let f = move |x: [i64; 2]| c[0] + c[1] * x[0] + c[2] * x[1] * x[1] + c[3] * (x[0] - x[1]).abs();
        let check = occupation_check(&walk, n, &[&f]).unwrap();
        prop_assert_eq!(check[0].lhs, check[0].rhs);
    }

    #[test]
    fn exact_sum_is_order_free(mut xs in prop::collection::vec(-1e12f64..1e12, 0..200), seed in any::<u64>()) {
        let mut a = ExactSum::new();
        xs.iter().for_each(|&x| a.add(x));
        let k = (seed as usize) % (xs.len() + 1);
        xs.rotate_left(k);
        xs.reverse();
        let mut b = ExactSum::new();
        xs.iter().for_each(|&x| b.add(x));
        prop_assert_eq!(a.value().to_bits(), b.value().to_bits());
    }

    #[test]
    fn phi_delta_is_c1_across_the_circle(delta in 0.01f64..2.0, angle in 0.0f64..std::f64::consts::TAU) {
        let phi = phi_delta(delta).unwrap();
        let (c, s) = (angle.cos(), angle.sin());
        let inside = [delta * (1.0 - 1e-9) * c, delta * (1.0 - 1e-9) * s];
        let outside = [delta * (1.0 + 1e-9) * c, delta * (1.0 + 1e-9) * s];
        prop_assert!((phi.value(inside) - phi.value(outside)).abs() < 1e-7);
        let (gi, go) = (phi.gradient(inside), phi.gradient(outside));
        prop_assert!((gi[0] - go[0]).abs() < 1e-6 / delta && (gi[1] - go[1]).abs() < 1e-6 / delta);
    }

    #[test]
    fn replica_seeds_never_collide(base in any::<u64>(), a in 0u64..1_000_000, b in 0u64..1_000_000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_replica_seed(base, a), derive_replica_seed(base, b));
    }
}

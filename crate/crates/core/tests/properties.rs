use convexlab::catalog::parse_function;
use convexlab::coeff_learn::estimate_coefficient;
use convexlab::convex_regress::{
    constraint_violation, extend_max_affine, solve_lipschitz_convex_qcqp, AffinePiece, BoxRegion,
    GridModel, MaxAffineFunction,
};
use convexlab::envelope::{cece, AnchorSet};
use convexlab::hermite::{
    apply_noise_spectral, enumerate_indices, hermite_1d, HermiteExpansion, MultiIndex,
    NoiseParameter,
};
use convexlab::learn_test::TolerantConfig;
use convexlab::oracle::mc_l2_distance;
use convexlab::spectrum::{dconv_lower_bound, SpectrumReport, SpectrumVerdict};
use convexlab::RngStream;
use proptest::prelude::*;

const CATALOG: &[&str] = &[
    "linear:0.6,0.8",
    "relu_proj:1,0",
    "abs_proj:0,1",
    "neg_abs_proj:0.8,-0.6",
    "sine_proj:0.6,0.8",
    "noised:0.5:abs_proj:1,0",
    "constant:3",
];

fn expansion(coeffs: &[f64]) -> HermiteExpansion {
    let indices = enumerate_indices(2, 4).unwrap();
    HermiteExpansion::from_terms(
        2,
        indices
            .into_iter()
            .zip(coeffs)
            .map(|(a, &c)| (a.entries().to_vec(), c)),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_are_reproducible(seed in any::<u64>()) {
        let f = parse_function("abs_proj:1", None).unwrap();
        let alpha = MultiIndex::axis(1, 0, 2);
        let a = estimate_coefficient(&f, &alpha, 0.2, 0.2, &RngStream::new(seed)).unwrap();
        let b = estimate_coefficient(&f, &alpha, 0.2, 0.2, &RngStream::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn catalog_respects_declared_lipschitz(
        k in 0..CATALOG.len(),
        x in prop::array::uniform2(-4.2f64..4.2),
        y in prop::array::uniform2(-4.2f64..4.2),
    ) {
        let f = parse_function(CATALOG[k], Some(2)).unwrap();
        let dist = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        prop_assume!(dist > 1e-9);
        let slope = (f.value(&x) - f.value(&y)).abs() / dist;
        prop_assert!(slope <= f.lipschitz_bound() * (1.0 + 1e-9));
    }

    #[test]
    fn hermite_closed_forms(z in -4.0f64..4.0) {
        let s2 = 2f64.sqrt();
        let closed = [
            1.0,
            z,
            (z * z - 1.0) / s2,
            (z.powi(3) - 3.0 * z) / 6f64.sqrt(),
            (z.powi(4) - 6.0 * z * z + 3.0) / 24f64.sqrt(),
        ];
        for (j, c) in closed.iter().enumerate() {
            prop_assert!((hermite_1d(j, z) - c).abs() <= 1e-10);
        }
    }

    #[test]
    fn hermite_derivative_identity(z in -3.0f64..3.0, j in 1usize..=8) {
        let step = 1e-5;
        let fd = (hermite_1d(j, z + step) - hermite_1d(j, z - step)) / (2.0 * step);
        let exact = (j as f64).sqrt() * hermite_1d(j - 1, z);
        prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0));
    }

    #[test]
    fn noise_is_self_adjoint_and_contractive(
        a in prop::collection::vec(-2.0f64..2.0, 15),
        b in prop::collection::vec(-2.0f64..2.0, 15),
        t in 0.0f64..3.0,
    ) {
        let (e1, e2) = (expansion(&a), expansion(&b));
        let t = NoiseParameter::new(t).unwrap();
        let lhs = apply_noise_spectral(&e1, t).inner(&e2).unwrap();
        let rhs = e1.inner(&apply_noise_spectral(&e2, t)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!(apply_noise_spectral(&e1, t).norm_sq() <= e1.norm_sq());
    }

    #[test]
    fn plancherel(a in prop::collection::vec(-2.0f64..2.0, 15), b in prop::collection::vec(-2.0f64..2.0, 15)) {
        let (e1, e2) = (expansion(&a), expansion(&b));
        let direct: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!((e1.sub(&e2).unwrap().norm_sq() - direct).abs() <= 1e-12 * (1.0 + direct));
    }

    #[test]
    fn tolerant_threshold_is_monotone(eps in 0.05f64..1.0, eps0 in 0.0f64..1.0, bump in 0.0f64..1.0) {
        let lo = TolerantConfig::new(1.0, eps, eps0).unwrap();
        let hi = TolerantConfig::new(1.0, eps, eps0 + bump).unwrap();
        prop_assert!(hi.threshold() >= lo.threshold());
    }

    #[test]
    fn max_affine_is_convex(
        pieces in prop::collection::vec((prop::array::uniform2(-1.0f64..1.0), -2.0f64..2.0), 1..12),
        x in prop::array::uniform2(-5.0f64..5.0),
        y in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let pieces = pieces
            .into_iter()
            .map(|(s, c)| {
                let norm = (s[0] * s[0] + s[1] * s[1]).sqrt().max(1.0);
                AffinePiece { slope: vec![s[0] / norm, s[1] / norm], intercept: c }
            })
            .collect();
        let h = MaxAffineFunction::new(1.0, pieces).unwrap();
        let mid = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
        prop_assert!(h.eval(&mid) <= 0.5 * (h.eval(&x) + h.eval(&y)) + 1e-12);
        prop_assert!(h.max_slope_norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn exact_spectrum_report(coeffs in prop::collection::vec(-2.0f64..2.0, 1..5)) {
        let r = SpectrumReport::from_exact(coeffs.clone());
        let negative = coeffs.iter().any(|&c| c < 0.0);
        prop_assert_eq!(r.verdict == SpectrumVerdict::NonConvexCertificate, negative);
        prop_assert!(dconv_lower_bound(&r) <= r.negative_part_norm + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn distance_is_symmetric(i in 0..CATALOG.len(), j in 0..CATALOG.len(), seed in any::<u64>()) {
        let f = parse_function(CATALOG[i], Some(2)).unwrap();
        let g = parse_function(CATALOG[j], Some(2)).unwrap();
        let rng = RngStream::new(seed);
        let (a, _) = mc_l2_distance(&f, &g, 2000, &rng).unwrap();
        let (b, _) = mc_l2_distance(&g, &f, 2000, &rng).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn distance_triangle_inequality(i in 0..CATALOG.len(), j in 0..CATALOG.len(), k in 0..CATALOG.len(), seed in any::<u64>()) {
        let f = parse_function(CATALOG[i], Some(2)).unwrap();
        let g = parse_function(CATALOG[j], Some(2)).unwrap();
        let h = parse_function(CATALOG[k], Some(2)).unwrap();
        let rng = RngStream::new(seed);
        let (fh, w1) = mc_l2_distance(&f, &h, 4000, &rng.child(0)).unwrap();
        let (fg, w2) = mc_l2_distance(&f, &g, 4000, &rng.child(1)).unwrap();
        let (gh, w3) = mc_l2_distance(&g, &h, 4000, &rng.child(2)).unwrap();
        prop_assert!(fh <= fg + gh + 3.0 * (w1 + w2 + w3));
    }

    #[test]
    fn qcqp_output_is_feasible(values in prop::collection::vec(-2.0f64..2.0, 11)) {
        let mut grid = GridModel::new(BoxRegion::new(1.0, 1).unwrap(), 0.2, 100).unwrap();
        let axis = grid.axis().to_vec();
        grid.label(|x| values[axis.iter().position(|&a| a == x[0]).unwrap()]).unwrap();
        let sol = solve_lipschitz_convex_qcqp(&grid, 1.0, 0.1).unwrap();
        let scale = 1.0 + sol.g_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (affine, norm) = constraint_violation(&grid, &sol.g_hat, &sol.u_hat, 1.0);
        prop_assert!(affine <= 1e-8 * scale);
        prop_assert!(norm <= 1e-8);
        prop_assert!(sol.objective - sol.dual_bound <= 1e-4);
        let h = extend_max_affine(&sol, &grid, 1.0).unwrap();
        prop_assert!(h.max_slope_norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn envelope_below_labels_and_lipschitz(
        anchors in prop::collection::vec((prop::array::uniform2(-2.0f64..2.0), -1.0f64..1.0), 3..25),
        x in prop::array::uniform2(-2.5f64..2.5),
        y in prop::array::uniform2(-2.5f64..2.5),
    ) {
        let coords: Vec<f64> = anchors.iter().flat_map(|(p, _)| p.iter().copied()).collect();
        let labels: Vec<f64> = anchors.iter().map(|(_, v)| *v).collect();
        let set = AnchorSet::from_flat(2, coords, labels.clone(), 1.0).unwrap();
        for (i, (p, _)) in anchors.iter().enumerate() {
            let q = cece(&set, p).unwrap();
            prop_assert!(q.value <= labels[i] + 1e-8);
        }
        let (qx, qy) = (cece(&set, &x).unwrap(), cece(&set, &y).unwrap());
        let dist = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        prop_assert!((qx.value - qy.value).abs() <= dist + 1e-7);
    }
}

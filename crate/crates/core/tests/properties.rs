use cavcool::markov::{evolve_populations, SpectralDensity};
use cavcool::presets::ChainPreset;
use cavcool::spin::{diagonalize, heisenberg_chain, site_operator, SiteKind};
use cavcool::C64;
use proptest::prelude::*;

fn grid(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt).round() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ladder_algebra_holds_on_every_site(n in 1usize..=5, a in 0usize..5, b in 0usize..5) {
        let (a, b) = (a % n + 1, b % n + 1);
        let plus = site_operator(SiteKind::Plus, a, n).unwrap().matrix().clone();
        let minus = site_operator(SiteKind::Minus, a, n).unwrap().matrix().clone();
        let z = site_operator(SiteKind::Z, a, n).unwrap().matrix().clone();
        let comm = plus.matmul(&minus).add(&minus.matmul(&plus).scale(C64::new(-1.0, 0.0)));
        let diff = comm.add(&z.scale(C64::new(-2.0, 0.0))).to_dense();
        prop_assert!(diff.iter().all(|x| x.norm() < 1e-14));
        if a != b {
            let other = site_operator(SiteKind::Minus, b, n).unwrap().matrix().clone();
            let c = plus.matmul(&other).add(&other.matmul(&plus).scale(C64::new(-1.0, 0.0))).to_dense();
            prop_assert!(c.iter().all(|x| x.norm() < 1e-14));
        }
    }

    #[test]
    fn field_shifts_each_level_by_its_sz(half in 1usize..=2, j in 0.1f64..3.0, b in 0.0f64..2.0) {
        let n = 2 * half;
        let zero = diagonalize(&heisenberg_chain(n, j, 0.0).unwrap()).unwrap();
        let field = diagonalize(&heisenberg_chain(n, j, b).unwrap()).unwrap();
        let mut shifted: Vec<f64> = zero.energies().iter().zip(zero.sz_values()).map(|(e, s)| e + b * s).collect();
        shifted.sort_by(f64::total_cmp);
        for (x, y) in shifted.iter().zip(field.energies()) {
            prop_assert!((x - y).abs() < 1e-10, "{} vs {}", x, y);
        }
    }

    #[test]
    fn normalized_tables_integrate_to_one(heights in proptest::collection::vec(0.01f64..5.0, 2..12)) {
        let points: Vec<(f64, f64)> = heights.iter().enumerate().map(|(k, &h)| (k as f64, h)).collect();
        let i = SpectralDensity::table_normalized(points).unwrap();
        prop_assert!((i.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cooling_lowers_the_mean_corrected_energy(g in 10.0f64..40.0, lo in 0.2f64..1.0, width in 0.5f64..3.0) {
        let mut pre = ChainPreset::new(4, g);
        pre.gamma = 0.0;
        pre.band = (lo, lo + width);
        let r = pre.resolve().unwrap().rates(pre.options).unwrap();
        let series = evolve_populations(&r, &r.maximally_mixed(), &grid(500.0, 5.0)).unwrap();
        let w: Vec<f64> = series.populations.iter().map(|p| r.mean_energy(p)).collect();
        for pair in w.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-10, "{} -> {}", pair[0], pair[1]);
        }
        for p in &series.populations {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= -1e-12));
        }
    }
}

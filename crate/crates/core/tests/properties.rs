use proptest::prelude::*;

use nvspin::eigen::eigh;
use nvspin::extraction::anisotropy;
use nvspin::matrix::Matrix;
use nvspin::optimize::polyfit_weighted;
use nvspin::presets::table1_params;
use nvspin::ramsey::{fit_fringes_auto, synthesize, uniform_times, RamseyParams, RamseyTrace};
use nvspin::spin::build_hamiltonian;
use nvspin::transitions::transition_set;
use nvspin::{FieldConfig, Isotope};

fn symmetric(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, n * (n + 1) / 2).prop_map(move |upper| {
        let mut m = Matrix::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = upper[k] * scale;
                m[(j, i)] = upper[k] * scale;
                k += 1;
            }
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn eigh_residual_and_orthonormality(m in symmetric(9, 1e6)) {
        let es = eigh(&m).unwrap();
        let norm = m.norm_inf();
        for i in 0..9 {
            let v = es.vector(i);
            let av = m.mul_vec(&v);
            let r = av.iter().zip(&v).map(|(a, x)| (a - es.eigenvalues[i] * x).abs()).fold(0.0, f64::max);
            prop_assert!(r <= 1e-9 * norm, "residual {r:e} for pair {i}");
            for j in 0..9 {
                let dot: f64 = v.iter().zip(es.vector(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - target).abs() <= 1e-10);
            }
        }
        prop_assert!(es.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigh_trace_and_frobenius(m in symmetric(9, 1e6)) {
        let es = eigh(&m).unwrap();
        let sum: f64 = es.eigenvalues.iter().sum();
        prop_assert!((sum - m.trace()).abs() <= 1e-9 * m.norm_inf());
        let sq: f64 = es.eigenvalues.iter().map(|l| l * l).sum();
        let fro2 = m.norm_frobenius().powi(2);
        prop_assert!((sq - fro2).abs() <= 1e-9 * fro2);
    }

    #[test]
    fn eigh_shift_invariance(m in symmetric(6, 1e3), c in -1e4f64..1e4) {
        let a = eigh(&m).unwrap();
        let mut shifted = m.clone();
        shifted.add_scaled(c, &Matrix::identity(6));
        let b = eigh(&shifted).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x + c - y).abs() <= 1e-9 * (m.norm_inf() + c.abs()));
        }
    }

    #[test]
    fn eigh_is_deterministic(m in symmetric(9, 1.0)) {
        let a = eigh(&m).unwrap();
        let b = eigh(&m).unwrap();
        prop_assert_eq!(a.eigenvalues, b.eigenvalues);
        prop_assert_eq!(a.eigenvectors, b.eigenvectors);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn transitions_even_in_bx(bz in 300.0f64..600.0, bx in 0.0f64..2.0, n15 in any::<bool>()) {
        let iso = if n15 { Isotope::N15 } else { Isotope::N14 };
        let p = table1_params(iso);
        let a = transition_set(&p, &FieldConfig::new(bz, bx), &iso.spec()).unwrap();
        // literal keeps the sign; the constructor would fold it
        let b = transition_set(&p, &FieldConfig { bz, bx: -bx }, &iso.spec()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert_eq!(x.label, y.label);
            prop_assert!((x.freq - y.freq).abs() < 1e-6, "{} {} vs {}", x.label, x.freq, y.freq);
        }
    }

    #[test]
    fn polar_field_matches_components(b in 10.0f64..900.0, theta_deg in 0.0f64..5.0) {
        let p = table1_params(Isotope::N14);
        let th = theta_deg.to_radians();
        let polar = build_hamiltonian(&p, &FieldConfig::from_polar(b, th), &Isotope::N14.spec()).unwrap();
        let cart = build_hamiltonian(&p, &FieldConfig::new(b * th.cos(), b * th.sin()), &Isotope::N14.spec()).unwrap();
        prop_assert_eq!(polar.entries, cart.entries);
    }

    #[test]
    fn anisotropy_partition(a_par in -5000.0f64..5000.0, a_perp in -5000.0f64..5000.0) {
        prop_assume!(a_par.abs() > 1.0 && a_perp.abs() > 1.0 && (a_par + 2.0 * a_perp).abs() > 1.0);
        let r = anisotropy(a_par, a_perp).unwrap();
        prop_assert!((r.cs2 + r.cp2 - 1.0).abs() < 1e-12);
        prop_assert!(r.eta > 0.0);
        prop_assert!((r.fermi_f - (a_par + 2.0 * a_perp) / 1e3).abs() < 1e-12);
        prop_assert!((r.dipolar_d - (a_par - a_perp) / 1e3).abs() < 1e-12);
    }

    #[test]
    fn quartic_interpolates_five_points(c in prop::collection::vec(-10.0f64..10.0, 5)) {
        let xs = [77.0, 150.0, 230.0, 297.0, 400.0];
        let f = |t: f64| (0..5).map(|k| c[k] * ((t - 297.0) / 100.0).powi(k as i32)).sum::<f64>();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let m = polyfit_weighted(&xs, &ys, &[1.0; 5], 4, 297.0).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!((m.value(*x) - y).abs() <= 1e-8 * (1.0 + y.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn ramsey_detuning_ignores_scale_and_offset(scale in 0.2f64..5.0, shift in -3.0f64..3.0, delta in 1.0f64..8.0) {
        let truth = RamseyParams { delta, t2_star: 1e-3, amplitude: 0.3, phase: 0.4, offset: 1.0 };
        let base = synthesize(&truth, &uniform_times(200, 2e-3), 0.0, 0).unwrap();
        let moved = RamseyTrace {
            times: base.times.clone(),
            signal: base.signal.iter().map(|s| s * scale + shift).collect(),
            noise_sigma: 0.0,
        };
        let a = fit_fringes_auto(&base).unwrap().params.delta;
        let b = fit_fringes_auto(&moved).unwrap().params.delta;
        prop_assert!((a - b).abs() * 1e3 < 0.1, "{a} vs {b}");
        prop_assert!((a - delta).abs() * 1e3 < 1.0);
    }
}

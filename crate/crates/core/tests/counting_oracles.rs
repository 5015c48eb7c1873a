use photocount::counting::*;
use photocount::fockops::build_operators;
use photocount::quadrature::{integrate_vec, QuadControl};
use photocount::states::{make_density_matrix, make_distribution, DensityMatrix};
use photocount::{ModelKind, StateSpec};

/// State cropped to `dim` and renormalized on the truncated space.
fn small_state(spec: &StateSpec, dim: usize) -> DensityMatrix {
    let cropped = make_density_matrix(spec, 1e-14).unwrap().with_dim(dim);
    let tr = cropped.trace();
    DensityMatrix::from_matrix(cropped.matrix().map(|c| c / tr), 0.0)
}

#[test]
fn brute_force_superoperator_agrees_with_closed_forms() {
    let specs = [
        StateSpec::Fock { m: 4 },
        StateSpec::Coherent { nbar: 2.0 },
        StateSpec::Thermal { nbar: 1.0 },
    ];
    for spec in &specs {
        let rho = small_state(spec, 12);
        let ops = build_operators(12, 0.9, 0.4).unwrap();
        for model in ModelKind::ALL {
            for k in 0..=2 {
                let t = 1.3;
                let brute = brute_force_conditioned(&rho, k, t, &ops, model, 1e-10).unwrap();
                let p = rho.photon_statistics().unwrap();
                let want = prob_counts(&p, k, t, ops.gamma, model).unwrap();
                assert!(
                    (brute.trace() - want).abs() < 1e-6,
                    "{spec:?} {model} k={k}"
                );
                let fast = conditioned_state(&rho, k, t, &ops, model).unwrap();
                let diff = (brute.matrix() - fast.matrix()).norm();
                assert!(diff < 1e-8, "{spec:?} {model} k={k}: {diff}");
            }
        }
    }
}

#[test]
fn brute_force_third_order_matches_ep_closed_form() {
    let rho = small_state(&StateSpec::Coherent { nbar: 1.5 }, 8);
    let ops = build_operators(8, 1.0, 0.0).unwrap();
    let brute = brute_force_conditioned(&rho, 3, 0.9, &ops, ModelKind::Ep, 1e-10).unwrap();
    let fast = conditioned_state(&rho, 3, 0.9, &ops, ModelKind::Ep).unwrap();
    assert!((brute.matrix() - fast.matrix()).norm() < 1e-8);
}

#[test]
fn semigroup_composition_ep() {
    let spec = StateSpec::Thermal { nbar: 2.0 };
    let rho = make_density_matrix(&spec, 1e-13).unwrap();
    let ops = build_operators(rho.dim(), 1.0, 0.0).unwrap();
    let (t1, t2) = (0.6, 0.9);
    let p = rho.photon_statistics().unwrap();
    for k in 0..=3 {
        let direct = prob_counts(&p, k, t1 + t2, 1.0, ModelKind::Ep).unwrap();
        let mut composed = 0.0;
        for k1 in 0..=k {
            let cond = conditioned_state(&rho, k1, t1, &ops, ModelKind::Ep).unwrap();
            let w = cond.trace();
            let after = cond.normalized().unwrap().photon_statistics().unwrap();
            composed += w * prob_counts(&after, k - k1, t2, 1.0, ModelKind::Ep).unwrap();
        }
        assert!(
            (direct - composed).abs() < 1e-7,
            "k={k}: {direct} vs {composed}"
        );
    }
}

/// Integral of the infinite-window EPD over `0 < t_1 < .. < t_k < T`.
fn simplex_integral(
    p: &photocount::PhotonStatistics,
    k: usize,
    model: ModelKind,
    horizon: f64,
) -> f64 {
    fn inner(
        p: &photocount::PhotonStatistics,
        prefix: &mut Vec<f64>,
        k: usize,
        upper: f64,
        model: ModelKind,
    ) -> f64 {
        if prefix.len() == k {
            let mut times = prefix.clone();
            times.reverse();
            let ct = CountTimes::new(times, Window::Infinite).unwrap();
            return epd(p, &ct, 1.0, model).unwrap();
        }
        let ctl = QuadControl::with_tol(1e-12);
        integrate_vec(
            |s| {
                prefix.push(s);
                let v = inner(p, prefix, k, s, model);
                prefix.pop();
                vec![v]
            },
            0.0,
            upper,
            &ctl,
        )
        .unwrap()
        .0[0]
    }
    inner(p, &mut Vec::new(), k, horizon, model)
}

#[test]
fn epd_simplex_normalization() {
    let p = make_distribution(&StateSpec::Thermal { nbar: 2.0 }, 1e-12).unwrap();
    for model in ModelKind::ALL {
        for k in 1..=3 {
            let v = simplex_integral(&p, k, model, 60.0);
            assert!(
                (v - p.prob(k)).abs() < 1e-9,
                "{model} k={k}: {v} vs {}",
                p.prob(k)
            );
        }
    }
}

use dpfl_core::attack::{self, AttackNorm};
use dpfl_core::data::{Class, Dataset, FeatureBank, DataSpec};
use dpfl_core::network::{self, ModelParams};
use dpfl_core::optim::{self, BatchDivisor, DpConfig, FreezeGranularity, NoiseScaling, Subsampling};
use dpfl_core::theory::{self, AdvBoundInputs, BoundInputs};
use proptest::prelude::*;

fn params_and_input() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..5, 1usize..8).prop_flat_map(|(m, d)| {
        (
            Just(m),
            Just(d),
            prop::collection::vec(-2.0f64..2.0, 2 * m * d),
            prop::collection::vec(-3.0f64..3.0, 2 * d),
        )
    })
}

fn bound_inputs() -> impl Strategy<Value = BoundInputs> {
    (0.1f64..5.0, 0.1f64..100.0, 0.01f64..2.0, 0.01f64..1.0, 1usize..500, 0.1f64..2.0, 1usize..64, 1usize..1000).prop_map(
        |(feature_norm, fnr, clip_factor, proportion, iters, init_loss, width, n)| BoundInputs {
            feature_norm,
            fnr,
            clip_factor,
            proportion,
            iters,
            init_loss,
            width,
            n,
        },
    )
}

proptest! {
    #[test]
    fn outputs_are_positively_homogeneous((m, d, w, x) in params_and_input(), c in 0.01f64..10.0) {
        let p = ModelParams::from_weights(m, d, w).unwrap();
        let base = network::forward(&p, &x).unwrap();
        let scaled = network::forward(&p.scaled(c), &x).unwrap();
        for k in 0..2 {
            prop_assert!((scaled[k] - c * base[k]).abs() <= 1e-12 * (1.0 + c * base[k].abs()));
        }
    }

    #[test]
    fn outputs_ignore_patch_order((m, d, w, x) in params_and_input()) {
        let p = ModelParams::from_weights(m, d, w).unwrap();
        let mut swapped = x[d..].to_vec();
        swapped.extend_from_slice(&x[..d]);
        let a = network::forward(&p, &x).unwrap();
        let b = network::forward(&p, &swapped).unwrap();
        for k in 0..2 {
            prop_assert!((a[k] - b[k]).abs() <= 1e-12 * (1.0 + a[k].abs()));
        }
    }

    #[test]
    fn probabilities_are_valid(f1 in -15.0f64..15.0, f2 in -15.0f64..15.0) {
        let p = network::softmax([f1, f2]);
        prop_assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0);
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        for y in Class::ALL {
            let l = network::loss_from_outputs([f1, f2], y);
            prop_assert!(l >= 0.0);
            prop_assert!((l + p[y.index()].ln()).abs() <= 1e-9 * (1.0 + l));
        }
    }

    #[test]
    fn loss_is_finite_for_extreme_outputs(f1 in -1e6f64..1e6, f2 in -1e6f64..1e6) {
        let l = network::loss_from_outputs([f1, f2], Class::One);
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(g in prop::collection::vec(-10.0f64..10.0, 1..40), c in 0.001f64..5.0) {
        let out = optim::clip(&g, c);
        let n_in = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n_out = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(n_out <= c + 1e-12);
        if n_in <= c {
            prop_assert_eq!(&out, &g);
        } else {
            let cos = g.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() / (n_in * n_out);
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(optim::clip(&g, 0.0), g);
    }

    #[test]
    fn projection_lands_in_ball_and_is_idempotent(z in prop::collection::vec(-5.0f64..5.0, 1..20), r in 0.0f64..3.0) {
        for norm in [AttackNorm::L2, AttackNorm::Linf] {
            let mut p = z.clone();
            attack::project(&mut p, norm, r);
            prop_assert!(attack::perturbation_norm(&p, norm) <= r * (1.0 + 1e-12) + 1e-15);
            let mut q = p.clone();
            attack::project(&mut q, norm, r);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn gamma_fn_bounds_log_mixture(t in 0.001f64..1.0, a in 0.01f64..10.0, u in 0.0f64..1.0) {
        let x = -a + u * (a + 3.0);
        let g = theory::gamma_fn(x, t, a).unwrap();
        let lhs = (t * (x.exp() - 1.0)).ln_1p();
        prop_assert!(lhs <= g * x + 1e-12 * (1.0 + x.abs()));
        prop_assert!(g > 0.0 && g <= 1.0);
    }

    #[test]
    fn upper_bound_decreases_in_fnr_and_proportion(b in bound_inputs(), k in 1.01f64..10.0) {
        let base = theory::upper_bound(&b).total;
        let sharper = theory::upper_bound(&BoundInputs { fnr: b.fnr * k, ..b }).total;
        prop_assert!(sharper < base);
        let p2 = (b.proportion * k).min(1.0);
        if p2 > b.proportion {
            let larger = theory::upper_bound(&BoundInputs { proportion: p2, ..b }).total;
            prop_assert!(larger < base);
        }
    }

    #[test]
    fn adversarial_term_grows_with_iters_noise_and_radius(
        iters in 1usize..1000, sigma_n in 0.001f64..2.0, radius in 0.001f64..1.0, clip in 0.0f64..2.0,
        dim in 1usize..200, k in 1.01f64..5.0,
    ) {
        let a = AdvBoundInputs { iters, clip, width: 16, dim, sigma_n, sigma0: 0.01, radius, norm: AttackNorm::Linf };
        let base = theory::adv_perturbation_term(&a);
        let longer = theory::adv_perturbation_term(&AdvBoundInputs { iters: iters + 1, ..a });
        let noisier = theory::adv_perturbation_term(&AdvBoundInputs { sigma_n: sigma_n * k, ..a });
        let wider = theory::adv_perturbation_term(&AdvBoundInputs { radius: radius * k, ..a });
        prop_assert!(longer > base && noisier > base && wider > base);
    }

    #[test]
    fn mixtures_stay_between_cell_values(
        b in prop::array::uniform4(0.0f64..10.0), g in prop::array::uniform4(0.01f64..1.0),
    ) {
        let mix = theory::mixture_bounds(b, g);
        let pairs = [(0, 1), (2, 3), (0, 2), (1, 3)];
        let vals = [mix.class[0], mix.class[1], mix.group[0], mix.group[1]];
        for ((i, j), v) in pairs.iter().zip(vals) {
            prop_assert!(v >= b[*i].min(b[*j]) - 1e-12 && v <= b[*i].max(b[*j]) + 1e-12);
        }
    }

    #[test]
    fn freezing_reaches_requested_fraction(
        w in prop::collection::vec(-1.0f64..1.0, 24), f1 in 0.0f64..0.99, f2 in 0.0f64..0.99,
    ) {
        let mut p = ModelParams::from_weights(3, 4, w).unwrap();
        optim::freeze_lowest(&mut p, f1, FreezeGranularity::Coordinate).unwrap();
        prop_assert_eq!(p.frozen_count(), (f1 * 24.0).floor() as usize);
        let before = p.frozen().to_vec();
        optim::freeze_lowest(&mut p, f2, FreezeGranularity::Coordinate).unwrap();
        prop_assert_eq!(p.frozen_count(), ((f2 * 24.0).floor() as usize).max(before.iter().filter(|&&f| f).count()));
        // Frozen weights stay frozen.
        prop_assert!(before.iter().zip(p.frozen()).all(|(a, b)| !a || *b));
        let frozen_max = p.weights().iter().zip(p.frozen()).filter(|(_, &f)| f).map(|(w, _)| w.abs()).fold(0.0, f64::max);
        if p.frozen_count() == (f1.max(f2) * 24.0).floor() as usize && f2 >= f1 {
            let free_min = p.weights().iter().zip(p.frozen()).filter(|(_, &f)| !f).map(|(w, _)| w.abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(frozen_max <= free_min);
        }
    }
}

#[test]
fn frozen_coordinates_do_not_move_under_noisy_training() {
    let bank = FeatureBank::generate(10, [2.0, 1.0, 1.5, 0.5], 3).unwrap();
    let spec = DataSpec::new(0.5, 0.7, 0.3, bank).unwrap();
    let data = Dataset::generate(&spec, 40, 8);
    let cfg = DpConfig {
        eta: 0.5,
        batch: 10,
        clip: 0.1,
        sigma_n: 0.5,
        iters: 30,
        subsampling: Subsampling::Poisson,
        seed: 4,
        divisor: BatchDivisor::Expected,
        noise_scaling: NoiseScaling::Raw,
        budget: None,
    };
    let mut init = network::init_params(&network::ModelConfig { width: 4, dim: 10, sigma0: 0.1, seed: 1 }).unwrap();
    optim::freeze_lowest(&mut init, 0.5, FreezeGranularity::Neuron).unwrap();
    let (out, _) = optim::train(&data, init.clone(), &cfg).unwrap();
    let mut moved = 0;
    for i in 0..init.len() {
        if init.frozen()[i] {
            assert_eq!(out.weights()[i].to_bits(), init.weights()[i].to_bits());
        } else if out.weights()[i] != init.weights()[i] {
            moved += 1;
        }
    }
    assert_eq!(moved, init.len() - init.frozen_count());
}

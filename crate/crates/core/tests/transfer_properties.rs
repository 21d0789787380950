use adsnn::neuron::{simulate_constant, Kernels, NeuronParams, NeuronState};
use adsnn::transfer::{
    constants_from, f, f_prime, normalize_h, normalized, steady_state_isi_exact, Transfer,
};
use approx::assert_relative_eq;
use proptest::prelude::*;

fn precision() -> impl Strategy<Value = f64> {
    0.02f64..1.5
}

proptest! {
    #[test]
    fn transfer_is_nondecreasing_and_nonnegative(theta in precision(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let t = Transfer::new(&normalized(&NeuronParams::default().with_precision(theta)).unwrap()).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(t.eval(lo) >= 0.0);
        prop_assert!(t.eval(hi) >= t.eval(lo) - 1e-12);
    }

    #[test]
    fn transfer_vanishes_below_half_threshold(theta in precision(), frac in 0.0f64..1.0) {
        let p = NeuronParams::default().with_precision(theta);
        let c = constants_from(&p).unwrap();
        prop_assert_eq!(f(frac * theta / 2.0, &c, theta), 0.0);
    }

    #[test]
    fn normalization_pins_unit_input(theta in precision()) {
        let p = normalized(&NeuronParams::default().with_precision(theta)).unwrap();
        let c = constants_from(&p).unwrap();
        prop_assert!((f(1.0, &c, theta) - 1.0).abs() <= 1e-9);
        prop_assert!(normalize_h(&p).unwrap() > 0.0);
    }

    #[test]
    fn derivative_matches_difference_quotient(theta in precision(), s in 0.6f64..4.0) {
        let p = normalized(&NeuronParams::default().with_precision(theta)).unwrap();
        let c = constants_from(&p).unwrap();
        let step = 1e-6;
        let numeric = (f(s + step, &c, theta) - f(s - step, &c, theta)) / (2.0 * step);
        let analytic = f_prime(s, &c, theta);
        prop_assert!((numeric - analytic).abs() <= 1e-5 * analytic.abs().max(1.0));
    }

    #[test]
    fn exact_interval_shrinks_with_drive(theta in precision(), s in 0.3f64..3.0) {
        let p = NeuronParams::default().with_precision(theta);
        prop_assume!(s > theta);
        let near = steady_state_isi_exact(&p, s).unwrap();
        let far = steady_state_isi_exact(&p, s * 1.5).unwrap();
        prop_assert!(far < near);
    }

    #[test]
    fn threshold_never_drops_below_rest(theta in precision(), drive in proptest::collection::vec(-1.0f64..3.0, 1..400)) {
        let p = normalized(&NeuronParams::default().with_precision(theta)).unwrap();
        let k = Kernels::new(&p, 1.0).unwrap();
        let mut state = NeuronState::at_rest(theta);
        for d in drive {
            state.injected = d;
            state.step(&k, 0.0).unwrap();
            prop_assert!(state.threshold >= theta - 1e-12);
            prop_assert!(state.refractory >= 0.0);
            prop_assert!(state.psc >= 0.0);
        }
    }
}

#[test]
fn zero_drive_never_fires() {
    let p = normalized(&NeuronParams::default()).unwrap();
    let trace = simulate_constant(&p, 0.0, 1000.0, 1.0).unwrap();
    assert_eq!(trace.spike_count(), 0);
    assert_eq!(trace.mean_psc_after(0.0), 0.0);
}

#[test]
fn spike_count_grows_with_drive() {
    let p = normalized(&NeuronParams::default()).unwrap();
    let counts: Vec<usize> = [0.2, 0.5, 1.0, 2.0]
        .iter()
        .map(|s| {
            simulate_constant(&p, *s, 1000.0, 1.0)
                .unwrap()
                .spike_count()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
}

#[test]
fn unit_drive_maps_to_unit_contribution() {
    let p = normalized(&NeuronParams::default()).unwrap();
    let trace = simulate_constant(&p, 1.0, 2000.0, 1.0).unwrap();
    assert_relative_eq!(trace.mean_psc_after(1000.0), 1.0, max_relative = 0.05);
}

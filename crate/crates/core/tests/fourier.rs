use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfmd_core::dsp::{dft_naive, energy, fft, fft_real, TimeSeries};

fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[test]
fn fft_matches_naive_dft_for_every_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in 3..=10 {
        let n = 1usize << p;
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let err = max_err(&fft_real(&x).unwrap(), &dft_naive(&x));
            assert!(err < 1e-9, "n={n} err={err:e}");
        }
    }
}

#[test]
fn parseval() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in [8, 64, 1024] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let time = energy(&TimeSeries::new(x.clone(), 1.0).unwrap());
        let freq: f64 = fft_real(&x)
            .unwrap()
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!(((time - freq) / time).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn fft_is_linear(
        p in 1u32..=10,
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let n = 1usize << p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let y: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mixed: Vec<Complex64> = x.iter().zip(&y).map(|(u, v)| u * a + v * b).collect();
        let lhs = fft(&mixed).unwrap();
        let fx = fft(&x).unwrap();
        let fy = fft(&y).unwrap();
        let rhs: Vec<Complex64> = fx.iter().zip(&fy).map(|(u, v)| u * a + v * b).collect();
        prop_assert!(max_err(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn fft_agrees_with_oracle_on_arbitrary_input(x in prop::collection::vec(-1e3f64..1e3, 64)) {
        let err = max_err(&fft_real(&x).unwrap(), &dft_naive(&x));
        prop_assert!(err < 1e-9 * 1e3);
    }
}

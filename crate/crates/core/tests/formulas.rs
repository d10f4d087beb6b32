mod common;

use common::{e_bar_oracle, i_max_oracle, interval_oracle, orl_oracle, rel_err, Dd};
use growbench::morph::{GrowthEvent, InitRule};
use growbench::timing;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn events(epochs: &[usize]) -> Vec<GrowthEvent> {
    epochs
        .iter()
        .map(|&epoch| GrowthEvent {
            epoch,
            stage: 0,
            block_index: 1,
            init: InitRule::Copy,
        })
        .collect()
}

#[test]
fn oracle_exp_matches_known_constants() {
    let e = Dd::ONE.exp();
    assert_eq!(e.hi, std::f64::consts::E);
    // ten squarings cost about ten bits, so ~28 correct digits remain
    assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-27, "{:e}", e.lo);
    let inv = Dd::from(-1.0).exp().mul(e);
    assert!((inv.hi - 1.0).abs() + inv.lo.abs() < 1e-27);
    for x in [-200.0, -30.5, -1e-9, 0.0, 0.3, 27.35, 150.0] {
        assert!(rel_err(Dd::from(x).exp().to_f64(), f64::exp(x)) < 4e-16, "x = {x}");
    }
}

#[test]
fn oracle_division_is_double_double_accurate() {
    let third = Dd::ONE.div(Dd::from(3.0));
    let back = third.mul(Dd::from(3.0)).sub(Dd::ONE);
    assert!(back.to_f64().abs() < 1e-31);
}

#[test]
fn worked_examples() {
    assert_eq!(timing::i_max(180, 30, 24).unwrap(), 6.25);
    assert_eq!(timing::i_max(120, 30, 24).unwrap(), 3.75);
    assert!((timing::interval(6.25, 4.0, 31.35) - 6.25).abs() < 1e-10);
    let i = timing::interval(6.25, 4.0, 4.30);
    assert!((i - 3.5903).abs() < 5e-5, "{i}");
    assert!(rel_err(i, interval_oracle(6.25, 4.0, 4.30).to_f64()) < 1e-15);
    assert_eq!(timing::average_training_epochs(&events(&[2, 4, 6]), 10).unwrap(), 6.0);
}

#[test]
fn randomized_inputs_match_high_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 4];
    for _ in 0..10_000 {
        let (a, b) = (rng.random_range(0.0..=100.0), rng.random_range(0.0..=100.0));
        worst[0] = worst[0].max(rel_err(timing::orl(a, b).unwrap(), orl_oracle(a, b).to_f64()));

        let total = rng.random_range(2..2000usize);
        let fin = rng.random_range(0..total);
        let n = rng.random_range(1..=total - fin);
        worst[1] = worst[1].max(rel_err(
            timing::i_max(total, fin, n).unwrap(),
            i_max_oracle(total, fin, n).to_f64(),
        ));

        let im = rng.random_range(1e-3..200.0);
        let alpha = rng.random_range(-20.0..120.0);
        let orl = rng.random_range(-100.0..=100.0);
        worst[2] = worst[2].max(rel_err(
            timing::interval(im, alpha, orl),
            interval_oracle(im, alpha, orl).to_f64(),
        ));

        let k = rng.random_range(1..50usize);
        let mut ts: Vec<usize> = (0..k).map(|_| rng.random_range(1..=total)).collect();
        ts.sort_unstable();
        worst[3] = worst[3].max(rel_err(
            timing::average_training_epochs(&events(&ts), total).unwrap(),
            e_bar_oracle(total, &ts).to_f64(),
        ));
    }
    for (name, w) in ["orl", "i_max", "interval", "e_bar"].iter().zip(worst) {
        assert!(w <= 1e-12, "{name}: worst relative error {w:e}");
    }
}

//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use growbench::netcore::{Matrix, Network};

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi) / 2`, about 106
/// bits of mantissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from(q3))
    }

    fn ldexp(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    /// `e^x` by `x = k ln2 + r`, a Taylor series on `r / 2^10` and ten
    /// squarings. Valid while the result is a normal f64.
    pub fn exp(self) -> Dd {
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self.sub(Dd::LN2.mul(Dd::from(k))).ldexp(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for i in 1..=30 {
            term = term.mul(r).div(Dd::from(i as f64));
            sum = sum.add(term);
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum.mul(sum);
        }
        sum.ldexp(k as i32)
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn orl_oracle(train: f64, val: f64) -> Dd {
    Dd::from(train).sub(Dd::from(val))
}

pub fn i_max_oracle(total: usize, min_finetune: usize, n: usize) -> Dd {
    Dd::from(total as f64)
        .sub(Dd::from(min_finetune as f64))
        .div(Dd::from(n as f64))
}

pub fn interval_oracle(i_max: f64, alpha: f64, orl: f64) -> Dd {
    let e = Dd::from(alpha).sub(Dd::from(orl)).exp();
    Dd::from(i_max).div(Dd::ONE.add(e))
}

pub fn e_bar_oracle(total: usize, epochs: &[usize]) -> Dd {
    let sum: u128 = epochs.iter().map(|&t| (total - t) as u128).sum();
    Dd::from(sum as f64).div(Dd::from(epochs.len() as f64))
}

/// Largest relative disagreement between analytic gradients and central
/// finite differences over every weight and bias of `net`.
///
/// The error for each parameter is `|a - n| / max(|a|, |n|, floor)`; the
/// floor keeps parameters whose gradient is numerically zero from dividing
/// finite-difference round-off by nothing.
pub fn max_grad_rel_error(net: &Network, x: &Matrix, y: &[usize], h: f64, floor: f64) -> (f64, usize) {
    let (_, grads) = net.loss_and_grads(x, y).unwrap();
    let loss = |n: &Network| n.loss_and_grads(x, y).unwrap().0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let layers = net.num_layers();
    for l in 0..layers {
        let (wlen, blen) = {
            let d = net.layers().nth(l).unwrap();
            (d.weight.as_slice().len(), d.bias.len())
        };
        for p in 0..wlen + blen {
            let mut plus = net.clone();
            let mut minus = net.clone();
            {
                let dp = plus.layers_mut().nth(l).unwrap();
                if p < wlen {
                    dp.weight.as_mut_slice()[p] += h;
                } else {
                    dp.bias[p - wlen] += h;
                }
                let dm = minus.layers_mut().nth(l).unwrap();
                if p < wlen {
                    dm.weight.as_mut_slice()[p] -= h;
                } else {
                    dm.bias[p - wlen] -= h;
                }
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let g = &grads.layers[l];
            let analytic = if p < wlen {
                g.weight.as_slice()[p]
            } else {
                g.bias[p - wlen]
            };
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic - numeric).abs() / denom);
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn random_batch(rows: usize, cols: usize, classes: usize, seed: u64) -> (Matrix, Vec<usize>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (Matrix::from_vec(rows, cols, data).unwrap(), labels)
}

/// Gives every bias a small random value. Freshly built networks have zero
/// biases, so a sample whose features all die in one block feeds an exact
/// zero pre-activation to the next, where ReLU has no derivative.
pub fn jitter_biases(net: &mut Network, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.1..0.1);
        }
    }
}

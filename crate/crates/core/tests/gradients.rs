mod common;

use common::{jitter_biases, max_grad_rel_error, random_batch};
use growbench::morph::ArchSpec;
use growbench::netcore::{build_network, Family};

fn arch(text: &str, input: usize, classes: usize) -> ArchSpec {
    text.parse::<ArchSpec>().unwrap().with_io(input, classes)
}

#[test]
fn small_nets_match_finite_differences() {
    for text in ["res:6x3-4x2", "plain:6x3-4x2", "res:5x1"] {
        for seed in 0..3 {
            let mut net = build_network(&arch(text, 3, 3), seed).unwrap();
            jitter_biases(&mut net, seed);
            let (x, y) = random_batch(4, 3, 3, 100 + seed);
            let (err, n) = max_grad_rel_error(&net, &x, &y, 1e-5, 1e-7);
            assert_eq!(n, net.num_params());
            assert!(err < 1e-5, "{text} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn zero_residual_net_reduces_to_softmax_regression() {
    let mut net = build_network(&arch("res:4x2", 4, 3), 9).unwrap();
    for b in &mut net.stages[0].blocks {
        b.dense.weight.as_mut_slice().fill(0.0);
        b.dense.bias.fill(0.0);
    }
    assert_eq!(net.family, Family::Residual);
    let (x, y) = random_batch(5, 4, 3, 1);
    let (_, grads) = net.loss_and_grads(&x, &y).unwrap();
    // closed form: dW = (softmax(Wx + b) - onehot) x^T / N
    let c = &net.classifier;
    let (rows, k) = (x.rows(), 3);
    let mut dw = vec![0.0; k * 4];
    let mut db = vec![0.0; k];
    for (i, &yi) in y.iter().enumerate() {
        let xi = x.row(i);
        let z: Vec<f64> = (0..k)
            .map(|j| c.bias[j] + (0..4).map(|d| c.weight.get(j, d) * xi[d]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
        for j in 0..k {
            let p = (z[j] - m).exp() / s - if yi == j { 1.0 } else { 0.0 };
            db[j] += p / rows as f64;
            for d in 0..4 {
                dw[j * 4 + d] += p * xi[d] / rows as f64;
            }
        }
    }
    let g = grads.layers.last().unwrap();
    for (a, b) in g.weight.as_slice().iter().zip(&dw) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in g.bias.iter().zip(&db) {
        assert!((a - b).abs() < 1e-14);
    }
}

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iris::autodiff::{Conv1dSpec, Graph};
use iris::nn::scaled_dot_attention;
use iris::signal::{log_mel_fbank, power_spectrum, WaveformBuffer};
use iris::tensor::Tensor;

fn rand_t(seed: u64, shape: &[usize]) -> Tensor {
    common::uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, -1.0, 1.0)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// `<A x, y>` and `<x, A^T y>` where `A^T y` is read off the gradient of
/// `<A x, y>` with respect to `x`.
fn adjoint_pair(x: Tensor, y: Tensor, op: impl Fn(&mut Graph, iris::autodiff::Var) -> iris::autodiff::Var) -> (f64, f64) {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let ax = op(&mut g, xv);
    let yv = g.constant(y);
    let lhs = g.dot(ax, yv).unwrap();
    let grads = g.backward(lhs).unwrap();
    let aty = grads.get(xv).unwrap();
    let rhs: f64 = x.data().iter().zip(aty).map(|(a, b)| a * b).sum();
    (g.scalar(lhs), rhs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv1d_adjoint(seed in any::<u64>(), stride in 1usize..4, padding in 0usize..3, dilation in 1usize..3) {
        let spec = Conv1dSpec { stride, padding, dilation };
        let w = rand_t(seed ^ 1, &[3, 2, 3]);
        let x = rand_t(seed, &[2, 13]);
        let t_out = spec.output_len(13, 3).unwrap();
        let y = rand_t(seed ^ 2, &[3, t_out]);
        let (l, r) = adjoint_pair(x, y, |g, xv| {
            let wv = g.constant(w.clone());
            g.conv1d(xv, wv, None, spec).unwrap()
        });
        prop_assert!(rel_close(l, r, 1e-10), "{l} vs {r}");
    }

    #[test]
    fn conv_transpose1d_adjoint(seed in any::<u64>(), stride in 1usize..4) {
        let w = rand_t(seed ^ 1, &[3, 2, 4]);
        let x = rand_t(seed, &[3, 7]);
        let out_len = (7 - 1) * stride + 4;
        let y = rand_t(seed ^ 2, &[2, out_len]);
        let (l, r) = adjoint_pair(x, y, |g, xv| {
            let wv = g.constant(w.clone());
            g.conv_transpose1d(xv, wv, stride).unwrap()
        });
        prop_assert!(rel_close(l, r, 1e-10), "{l} vs {r}");
    }

    #[test]
    fn matmul_adjoint(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6) {
        let a = rand_t(seed ^ 1, &[m, k]);
        let x = rand_t(seed, &[k, n]);
        let y = rand_t(seed ^ 2, &[m, n]);
        let (l, r) = adjoint_pair(x, y, |g, xv| {
            let av = g.constant(a.clone());
            g.matmul(av, xv).unwrap()
        });
        prop_assert!(rel_close(l, r, 1e-10), "{l} vs {r}");
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), tq in 1usize..6, tk in 1usize..6, causal in any::<bool>()) {
        let mut g = Graph::new();
        let q = g.constant(rand_t(seed, &[tq, 4]));
        let k = g.constant(rand_t(seed ^ 1, &[tk, 4]));
        let scores = g.matmul_t(q, k).unwrap();
        let mask: Vec<bool> = (0..tq * tk).map(|i| !causal || i % tk <= i / tk).collect();
        let w = g.softmax_rows(scores, Some(&mask)).unwrap();
        for (i, row) in g.value(w).data().chunks(tk).enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (j, &p) in row.iter().enumerate() {
                if !mask[i * tk + j] {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn power_spectrum_satisfies_parseval(seed in any::<u64>(), log_n in 2u32..10) {
        let n = 1usize << log_n;
        let frame = rand_t(seed, &[n]).into_data();
        let p = power_spectrum(&frame).unwrap();
        // One-sided bins: DC and Nyquist once, the others twice.
        let two_sided: f64 = p.iter().enumerate().map(|(k, v)| if k == 0 || k == n / 2 { *v } else { 2.0 * v }).sum();
        let energy: f64 = frame.iter().map(|x| x * x).sum();
        prop_assert!(rel_close(energy, two_sided / n as f64, 1e-6));
    }

    #[test]
    fn fbank_is_finite_and_pure(seed in any::<u64>(), len in 400usize..3000, silent in any::<bool>()) {
        let samples = if silent { vec![0.0; len] } else { rand_t(seed, &[len]).into_data() };
        let wave = WaveformBuffer::new(samples).unwrap();
        let a = log_mel_fbank(&wave, 80).unwrap();
        let b = log_mel_fbank(&wave, 80).unwrap();
        prop_assert!(a.values().iter().all(|v| v.is_finite()));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn ops_are_bitwise_deterministic() {
    let run = || {
        let case = &common::op_cases(3)[..];
        case.iter()
            .map(|c| {
                let mut fw = iris::nn::Forward::eval(&c.params);
                let y = (c.build)(&mut fw).unwrap();
                fw.g.scalar(y).to_bits()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn attention_output_is_a_convex_combination_of_values() {
    let mut g = Graph::new();
    let q = g.constant(rand_t(1, &[2, 4]));
    let k = g.constant(rand_t(2, &[3, 4]));
    let v = g.constant(Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]).unwrap());
    let out = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
    for x in g.value(out).data() {
        assert!((x - 1.0).abs() < 1e-12);
    }
}

use aim_core::neural::{backprop_loss, conv2d, Architecture, ConvSpec, DuelingQNetwork};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct quadruple loop: out[o][y][x] = Σ_c Σ_i Σ_j in[c][y·s+i][x·s+j] · f[o][c][i][j].
#[allow(clippy::too_many_arguments)]
fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, filters: &[f64], o: usize, k: usize, s: usize) -> Vec<f64> {
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            acc += input[(ic * h + y * s + i) * w + x * s + j] * filters[((oc * c + ic) * k + i) * k + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

fn conv_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, u64)> {
    (1usize..4, 1usize..4, 1usize..5, 1usize..4).prop_flat_map(|(c, o, k, s)| {
        (Just(c), Just(o), Just(k), Just(s), k..k + 9, k..k + 9, any::<u64>())
            .prop_map(|(c, o, k, s, h, w, seed)| (c, o, k, s, h, w, seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Integer-valued data keeps every partial sum exact, so summation order cannot matter.
    #[test]
    fn conv_matches_naive_oracle_exactly_on_integers((c, o, k, s, h, w, seed) in conv_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-8i32..=8) as f64).collect();
        let filters: Vec<f64> = (0..o * c * k * k).map(|_| rng.gen_range(-8i32..=8) as f64).collect();
        let (fast, _, _) = conv2d(&input, c, h, w, &filters, o, k, s).unwrap();
        prop_assert_eq!(fast, naive_conv(&input, c, h, w, &filters, o, k, s));
    }

    #[test]
    fn conv_matches_naive_oracle_on_reals((c, o, k, s, h, w, seed) in conv_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let filters: Vec<f64> = (0..o * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = naive_conv(&input, c, h, w, &filters, o, k, s);
        let (fast64, _, _) = conv2d(&input, c, h, w, &filters, o, k, s).unwrap();
        let in32: Vec<f32> = input.iter().map(|&v| v as f32).collect();
        let f32s: Vec<f32> = filters.iter().map(|&v| v as f32).collect();
        let (fast32, _, _) = conv2d(&in32, c, h, w, &f32s, o, k, s).unwrap();
        let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for ((e, a64), a32) in expected.iter().zip(&fast64).zip(&fast32) {
            prop_assert!((e - a64).abs() <= 1e-12 * scale);
            prop_assert!((e - *a32 as f64).abs() <= 1e-5 * scale);
        }
    }
}

fn random_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let input_channels = rng.gen_range(1..=2);
    let side = rng.gen_range(5..=7);
    Architecture {
        input_channels,
        input_height: side,
        input_width: side,
        convs: vec![
            ConvSpec { filters: rng.gen_range(1..=3), kernel: 3, stride: rng.gen_range(1..=2) },
            ConvSpec { filters: rng.gen_range(1..=2), kernel: 2, stride: 1 },
        ],
        hidden: rng.gen_range(2..=6),
        actions: 2,
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..30 {
        let arch = random_arch(&mut rng);
        assert!(arch.parameter_count().unwrap() <= 1000);
        let mut net: DuelingQNetwork<f64> = DuelingQNetwork::new(arch.clone(), &mut rng).unwrap();
        // Zero biases put dead units exactly on the ReLU kink, where central
        // differences are meaningless; random biases keep draws off it.
        let names = net.tensor_names();
        for (name, t) in names.iter().zip(net.tensors_mut()) {
            if name.ends_with("bias") {
                t.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
            }
        }
        let batch = rng.gen_range(1..=3);
        let x: Vec<f64> = (0..batch * arch.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..2)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, grads) = backprop_loss(&net, &x, batch, &actions, &targets).unwrap();

        let eps = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (ti, g) in grads.tensors.iter().enumerate() {
            for (pi, &a) in g.iter().enumerate() {
                let mut plus = net.clone();
                plus.tensors_mut()[ti][pi] += eps;
                let mut minus = net.clone();
                minus.tensors_mut()[ti][pi] -= eps;
                let lp = backprop_loss(&plus, &x, batch, &actions, &targets).unwrap().0;
                let lm = backprop_loss(&minus, &x, batch, &actions, &targets).unwrap().0;
                analytic.push(a);
                numeric.push((lp - lm) / (2.0 * eps));
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        assert!(diff / norm.max(1e-12) < 1e-5, "case {case}: relative error {}", diff / norm);
    }
}

#[test]
fn dueling_identity_holds_in_single_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arch = Architecture::compact(9, 16, [4, 8, 8], 32, 2);
    for _ in 0..50 {
        let net: DuelingQNetwork<f32> = DuelingQNetwork::new(arch.clone(), &mut rng).unwrap();
        let x: Vec<f32> = (0..arch.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = net.forward(&x, 1).unwrap();
        let mean: f32 = out.q.iter().map(|q| q - out.v[0]).sum::<f32>() / 2.0;
        assert!(mean.abs() <= 1e-6, "{mean}");
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net: DuelingQNetwork<f32> = DuelingQNetwork::new(Architecture::parity(), &mut rng).unwrap();
    let x: Vec<f32> = (0..2 * Architecture::parity().input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    assert_eq!(net.forward(&x, 2).unwrap(), net.forward(&x, 2).unwrap());
}

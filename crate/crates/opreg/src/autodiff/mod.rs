//! Reverse-mode automatic differentiation over dense f64 tensors.

pub mod kernels;
mod tape;

pub use tape::{grad_check, Tape, Var};

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut t = Tape::new();
        let a = t.leaf(
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let eye = t.leaf(
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            false,
        );
        let prod = t.matmul(a, eye).unwrap();
        assert_eq!(t.value(prod).data(), &[1.0, 2.0, 3.0, 4.0]);

        let z = t.leaf(Tensor::zeros(&[3, 2]), false);
        let b = t.leaf(Tensor::filled(&[2, 4], 7.5), false);
        let zp = t.matmul(z, b).unwrap();
        assert_eq!(t.value(zp).shape(), &[3, 4]);
        assert!(t.value(zp).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_computed() {
        let mut t = Tape::new();
        let a = t.leaf(
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let b = t.leaf(Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap(), false);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]), false);
        let b = t.leaf(Tensor::zeros(&[4, 2]), false);
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn matmul_associativity_bit_exact_on_integers() {
        let mut r = rng(3);
        let a = Tensor::from_fn(&[3, 4], |_| r.gen_range(-4..5) as f64);
        let b = Tensor::from_fn(&[4, 4], |_| r.gen_range(-4..5) as f64);
        let eye = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });

        let mut t = Tape::new();
        let (va, vb, vi) = (
            t.leaf(a.clone(), false),
            t.leaf(b.clone(), false),
            t.leaf(eye, false),
        );
        let ai = t.matmul(va, vi).unwrap();
        let left = t.matmul(ai, vb).unwrap();
        let ib = t.matmul(vi, vb).unwrap();
        let right = t.matmul(va, ib).unwrap();
        let direct = t.matmul(va, vb).unwrap();
        assert_eq!(t.value(left).data(), t.value(direct).data());
        assert_eq!(t.value(right).data(), t.value(direct).data());
    }

    #[test]
    fn relu_sign_cases() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), false);
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);

        let neg = t.leaf(Tensor::filled(&[4], -3.0), false);
        let yn = t.relu(neg);
        assert!(t.value(yn).data().iter().all(|&v| v == 0.0));

        let pos = t.leaf(Tensor::new(vec![2], vec![0.5, 9.0]).unwrap(), false);
        let yp = t.relu(pos);
        assert_eq!(t.value(yp).data(), &[0.5, 9.0]);
    }

    #[test]
    fn concat_rules() {
        let mut t = Tape::new();
        // [N,200] and [N,200] stacked along a new leading row axis -> [N,2,200].
        let n = 3;
        let a = t.leaf(Tensor::filled(&[n, 200], 1.0), false);
        let b = t.leaf(Tensor::filled(&[n, 200], 2.0), false);
        let ra = t.reshape(a, &[n, 1, 200]).unwrap();
        let rb = t.reshape(b, &[n, 1, 200]).unwrap();
        let s = t.concat(&[ra, rb], 1).unwrap();
        assert_eq!(t.value(s).shape(), &[n, 2, 200]);
        assert_eq!(t.value(s).at(&[1, 0, 7]), 1.0);
        assert_eq!(t.value(s).at(&[1, 1, 7]), 2.0);

        // POD-style column splice: [K,64] modes with [K,64] trunk -> [K,128].
        let k = 5;
        let modes = t.leaf(Tensor::filled(&[k, 64], 3.0), false);
        let trunk = t.leaf(Tensor::filled(&[k, 64], 4.0), false);
        let sp = t.concat(&[modes, trunk], 1).unwrap();
        assert_eq!(t.value(sp).shape(), &[k, 128]);
        assert_eq!(t.value(sp).at(&[2, 0]), 3.0);
        assert_eq!(t.value(sp).at(&[2, 64]), 4.0);

        // Single part is the identity.
        let one = t.concat(&[modes], 1).unwrap();
        assert_eq!(t.value(one).data(), t.value(modes).data());

        // Off-axis mismatch is an error.
        let bad = t.leaf(Tensor::zeros(&[k + 1, 64]), false);
        assert!(t.concat(&[modes, bad], 1).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut r = rng(7);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::filled(&[100], 2.0), false);
        let eval = t.dropout(x, 0.9, false, &mut r).unwrap();
        assert_eq!(t.value(eval).data(), t.value(x).data());
        let zero_rate = t.dropout(x, 0.0, true, &mut r).unwrap();
        assert_eq!(t.value(zero_rate).data(), t.value(x).data());
        assert!(t.dropout(x, 1.0, true, &mut r).is_err());
    }

    #[test]
    fn dropout_large_sample_mean() {
        // rate 0.5 over 1e6 ones: inverted scaling keeps the mean within 1%.
        let mut r = rng(11);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::filled(&[1_000_000], 1.0), false);
        let y = t.dropout(x, 0.5, true, &mut r).unwrap();
        let mean = t.value(y).data().iter().sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn backward_simple_square() {
        // y = x*x at x=3 => dy/dx = 6.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_relu_sum() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(), true);
        let r = t.relu(x);
        let y = t.sum(r);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_and_double_call() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2]), true);
        assert!(t.backward(x).is_err());
        let y = t.sum(x);
        t.backward(y).unwrap();
        assert!(t.backward(y).is_err());
        t.reset_grads();
        t.backward(y).unwrap();
    }

    #[test]
    fn grad_check_mean_of_matmul() {
        let mut r = rng(21);
        let a = random_tensor(&[3, 4], &mut r);
        let b = random_tensor(&[4, 2], &mut r);
        let err = grad_check(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                Ok(t.mean(p))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn grad_check_constant_function() {
        let x = Tensor::filled(&[3], 0.25);
        let err = grad_check(
            |t, v| {
                let z = t.scale(v[0], 0.0);
                Ok(t.sum(z))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_composite_ops() {
        let mut r = rng(33);
        let a = random_tensor(&[4, 6], &mut r);
        let b = random_tensor(&[4, 6], &mut r);
        let bias = random_tensor(&[6], &mut r);
        let s = random_tensor(&[1], &mut r);
        let err = grad_check(
            |t, v| {
                let prod = t.mul(v[0], v[1])?;
                let biased = t.add_bias(prod, v[2])?;
                let shifted = t.add_scalar(biased, v[3])?;
                let act = t.relu(shifted);
                let rows = t.row_sum(act)?;
                Ok(t.mean(rows))
            },
            &[a, b, bias, s],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn grad_check_concat_transpose() {
        let mut r = rng(44);
        let a = random_tensor(&[3, 2], &mut r);
        let b = random_tensor(&[3, 5], &mut r);
        let err = grad_check(
            |t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let ct = t.transpose(c)?;
                let m = t.matmul(ct, c)?;
                Ok(t.mean(m))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn grad_check_conv2d() {
        let mut r = rng(55);
        let x = random_tensor(&[2, 6, 5, 2], &mut r);
        let k = random_tensor(&[3, 2, 2, 3], &mut r);
        let b = random_tensor(&[3], &mut r);
        let err = grad_check(
            |t, v| {
                let c = t.conv2d(v[0], v[1], v[2], (2, 1))?;
                Ok(t.mean(c))
            },
            &[x, k, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn grad_check_conv2d_transpose() {
        let mut r = rng(66);
        let x = random_tensor(&[2, 3, 4, 2], &mut r);
        let k = random_tensor(&[2, 2, 3, 2], &mut r);
        let b = random_tensor(&[3], &mut r);
        let err = grad_check(
            |t, v| {
                let c = t.conv2d_transpose(v[0], v[1], v[2], (2, 2))?;
                Ok(t.mean(c))
            },
            &[x, k, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn grad_check_dropout_fixed_stream() {
        let mut r = rng(77);
        let x = random_tensor(&[40], &mut r);
        let err = grad_check(
            |t, v| {
                // Re-seed per build so every perturbed evaluation sees the
                // same mask.
                let mut dr = rng(123);
                let d = t.dropout(v[0], 0.3, true, &mut dr)?;
                Ok(t.mean(d))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn conv_paper_shapes() {
        // 61x61x1, 5x5 kernel, stride 2 -> 29x29x64.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 61, 61, 1]), false);
        let k = t.leaf(Tensor::zeros(&[5, 5, 1, 64]), false);
        let b = t.leaf(Tensor::zeros(&[64]), false);
        let y = t.conv2d(x, k, b, (2, 2)).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 29, 29, 64]);

        // 100x241x2, 3x5 kernel, stride 3 -> 33x79x32.
        let x = t.leaf(Tensor::zeros(&[1, 100, 241, 2]), false);
        let k = t.leaf(Tensor::zeros(&[3, 5, 2, 32]), false);
        let b = t.leaf(Tensor::zeros(&[32]), false);
        let y = t.conv2d(x, k, b, (3, 3)).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 33, 79, 32]);

        // Kernel larger than input is rejected.
        let x = t.leaf(Tensor::zeros(&[1, 4, 4, 1]), false);
        let k = t.leaf(Tensor::zeros(&[5, 5, 1, 2]), false);
        let b = t.leaf(Tensor::zeros(&[2]), false);
        assert!(t.conv2d(x, k, b, (1, 1)).is_err());
    }

    #[test]
    fn conv_transpose_paper_shapes() {
        // 2x200x1 input, 2x2 kernel, stride 5 -> 10x1000x64.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 2, 200, 1]), false);
        let k = t.leaf(Tensor::zeros(&[2, 2, 64, 1]), false);
        let b = t.leaf(Tensor::zeros(&[64]), false);
        let y = t.conv2d_transpose(x, k, b, (5, 5)).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 10, 1000, 64]);

        // 3x200x1 input -> 15x1000x64.
        let x = t.leaf(Tensor::zeros(&[1, 3, 200, 1]), false);
        let y = t.conv2d_transpose(x, k, b, (5, 5)).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 15, 1000, 64]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_T(y)> with the kernel shared (axes
        // reordered to each op's layout), kh <= stride.
        let mut r = rng(88);
        let (h, w, ci, co, kh, kw, s) = (4, 3, 2, 3, 2, 2, 2);
        let x = random_tensor(&[1, h * s, w * s, co], &mut r);
        let y = random_tensor(&[1, h, w, ci], &mut r);
        let kern = random_tensor(&[kh, kw, co, ci], &mut r); // conv layout [kh,kw,Cin=co,Cout=ci]
        let mut kern_t = Tensor::zeros(&[kh, kw, co, ci]); // transpose layout [kh,kw,Cout=co,Cin=ci]
        for a in 0..kh {
            for b in 0..kw {
                for i in 0..co {
                    for j in 0..ci {
                        kern_t.data_mut()[((a * kw + b) * co + i) * ci + j] =
                            kern.at(&[a, b, i, j]);
                    }
                }
            }
        }

        let mut t = Tape::new();
        let vx = t.leaf(x.clone(), false);
        let vy = t.leaf(y.clone(), false);
        let vk = t.leaf(kern, false);
        let vkt = t.leaf(kern_t, false);
        let zb_ci = t.leaf(Tensor::zeros(&[ci]), false);
        let zb_co = t.leaf(Tensor::zeros(&[co]), false);

        let cx = t.conv2d(vx, vk, zb_ci, (s, s)).unwrap();
        assert_eq!(t.value(cx).shape(), t.value(vy).shape());
        let lhs: f64 = t
            .value(cx)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();

        let ty = t.conv2d_transpose(vy, vkt, zb_co, (s, s)).unwrap();
        assert_eq!(t.value(ty).shape(), t.value(vx).shape());
        let rhs: f64 = t
            .value(ty)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();

        let rel = (lhs - rhs).abs() / (lhs.abs() + rhs.abs()).max(1e-300);
        assert!(rel < 1e-10, "adjoint identity violated: {lhs} vs {rhs}");
    }

    #[test]
    fn forward_invariant_under_thread_count() {
        let mut r = rng(99);
        let a = random_tensor(&[40, 30], &mut r);
        let b = random_tensor(&[30, 50], &mut r);
        let run = || {
            let mut t = Tape::new();
            let va = t.leaf(a.clone(), false);
            let vb = t.leaf(b.clone(), false);
            let m = t.matmul(va, vb).unwrap();
            t.value(m).bit_checksum()
        };
        crate::threading::set_threads(1);
        let one = run();
        crate::threading::set_threads(4);
        let four = run();
        crate::threading::set_threads(2);
        let two = run();
        assert_eq!(one, four);
        assert_eq!(one, two);
    }
}

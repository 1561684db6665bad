//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive applied to [`Var`]s created from it.
//! Calling [`Tape::backward`] on a scalar output walks the record in reverse
//! and accumulates exact local gradients. Storage is dense and row-major and
//! every op copies; the networks here have at most a few hundred units.
//!
//! ```
//! use sumo_core::autodiff::{grad, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(2.0));
//! let y = tape.leaf(Tensor::scalar(3.0));
//! let out = x.mul(y).unwrap();
//! let g = grad(out, &[x, y]).unwrap();
//! assert_eq!(g[0].item().unwrap(), 3.0);
//! assert_eq!(g[1].item().unwrap(), 2.0);
//! ```

pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{grad, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::gradcheck::{max_relative_error, random_tensor, FD_STEP as STEP};

    fn op<F>(f: F) -> F
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> crate::Result<Var<'t>>,
    {
        f
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let g = grad(x.tanh(), &[x]).unwrap();
        assert_eq!(g[0].item().unwrap(), 1.0);
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let out = v.logsumexp_axis(0).unwrap();
        let g = grad(out, &[v]).unwrap();
        assert_eq!(g[0].data(), &[0.5, 0.5]);
    }

    #[test]
    fn product_and_constant_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(3.0));
        let g = grad(x.mul(y).unwrap(), &[x]).unwrap();
        assert_eq!(g[0].item().unwrap(), 3.0);

        let c = tape.constant(Tensor::scalar(5.0));
        let out = c.square().add_scalar(1.0);
        let g = grad(out, &[x, y]).unwrap();
        assert_eq!(g[0].item().unwrap(), 0.0);
        assert_eq!(g[1].item().unwrap(), 0.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(grad(x.square(), &[x]).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(a.matmul(b).is_err());
        let c = tape.leaf(Tensor::zeros(&[4]));
        assert!(a.add(c).is_err());
        assert!(a.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn domain_violations_raise() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -1.0]));
        assert!(x.log().is_err());
        let nan = tape.leaf(Tensor::vector(vec![f64::NAN]));
        let zero = tape.constant(Tensor::scalar(0.0));
        assert!(nan.gaussian_log_pdf(zero, zero).is_err());
        let inf = tape.constant(Tensor::scalar(f64::INFINITY));
        let one = tape.leaf(Tensor::scalar(1.0));
        assert!(one.gaussian_log_pdf(zero, inf).is_err());
    }

    #[test]
    fn detached_values_record_no_gradient_nodes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = a.exp().square().sum();
        assert_eq!(tape.grad_node_count(), 0);
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let d = x.detach();
        let out = d.mul(x).unwrap().add(b).unwrap().sum();
        let g = grad(out, &[x, d]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 2.0]);
        assert_eq!(g[1].data(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_is_deterministic() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let out = x.tanh().exp().logsumexp_axis(0).unwrap();
        let g1 = grad(out, &[x]).unwrap();
        let g2 = grad(out, &[x]).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn gradient_is_linear_in_subgraphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = random_tensor(&mut rng, &[5], -1.0, 1.0);
        fn f(v: Var<'_>) -> Var<'_> {
            v.tanh().square().sum()
        }
        fn g(v: Var<'_>) -> Var<'_> {
            v.exp().logsumexp_axis(0).unwrap()
        }
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let both = grad(f(x).add(g(x)).unwrap(), &[x]).unwrap();
        let only_f = grad(f(x), &[x]).unwrap();
        let only_g = grad(g(x), &[x]).unwrap();
        for i in 0..5 {
            let sum = only_f[0].data()[i] + only_g[0].data()[i];
            assert!((both[0].data()[i] - sum).abs() < 1e-14);
        }
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = random_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let tape = Tape::new();
        let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let g = grad(va.matmul(vb).unwrap().sum(), &[va, vb]).unwrap();
        let f = |a: &Tensor, b: &Tensor| {
            let tape = Tape::new();
            tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().sum().item().unwrap()
        };
        for idx in 0..a.numel() {
            let (mut p, mut m) = (a.clone(), a.clone());
            p.data_mut()[idx] += STEP;
            m.data_mut()[idx] -= STEP;
            assert!((g[0].data()[idx] - (f(&p, &b) - f(&m, &b)) / (2.0 * STEP)).abs() < 1e-6);
        }
        for idx in 0..b.numel() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p.data_mut()[idx] += STEP;
            m.data_mut()[idx] -= STEP;
            assert!((g[1].data()[idx] - (f(&a, &p) - f(&a, &m)) / (2.0 * STEP)).abs() < 1e-6);
        }
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs = vec![
            random_tensor(&mut rng, &[3, 4], -1.0, 1.0),
            random_tensor(&mut rng, &[4, 6], -0.8, 0.8),
            random_tensor(&mut rng, &[1, 6], -0.5, 0.5),
            random_tensor(&mut rng, &[6, 2], -0.8, 0.8),
            random_tensor(&mut rng, &[1, 2], -0.5, 0.5),
        ];
        let mlp = op(|_, v| {
            let h = v[0].matmul(v[1])?.add(v[2])?.tanh();
            Ok(h.matmul(v[3])?.add(v[4])?.tanh().sum())
        });
        assert!(max_relative_error(mlp, &inputs, &mut rng).unwrap() < 1e-4);
    }
}

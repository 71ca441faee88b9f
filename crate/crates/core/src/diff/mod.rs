//! Dense tensors, a reverse-mode tape and Γ-family special functions.

pub mod gradcheck;
pub mod special;
mod tape;
mod tensor;

pub use tape::{sigmoid, softplus, softplus_inv, LinearMap, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck::max_gradient_error;
    use super::*;
    use crate::error::GpnError;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn matmul_values() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = t.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 4.0]);
        let a = t.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let b = t.constant(Tensor::matrix(1, 1, vec![5.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[10.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(GpnError::Shape(_))));
    }

    #[test]
    fn matmul_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[4, 3], &mut rng, -2.0, 2.0);
        let b = random(&[3, 2], &mut rng, -2.0, 2.0);
        let err = max_gradient_error(
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                Ok(t.sum(c))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn relu_values_and_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![-1.0, -0.5, -3.0]));
        let y = t.relu(x).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_gradient_check_away_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = random(&[5, 4], &mut rng, -2.0, 2.0);
        for v in x.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.2;
            }
        }
        let w = random(&[5, 4], &mut rng, -2.0, 2.0);
        let err = max_gradient_error(
            |t, v| {
                let r = t.relu(v[0])?;
                let p = t.mul(r, v[1])?;
                Ok(t.sum(p))
            },
            &[x, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn dropout_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.7, false, &mut rng).unwrap(), x);
        assert!(matches!(t.dropout(x, 1.0, true, &mut rng), Err(GpnError::Parameter(_))));

        let ones = t.constant(Tensor::ones(&[100_000]));
        let y = t.dropout(ones, 0.5, true, &mut rng).unwrap();
        let mean = t.value(y).sum() / 100_000.0;
        assert!((0.98..=1.02).contains(&mean), "{mean}");
        assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn backward_basics() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(&[2, 3]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 6]);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(GpnError::Shape(_))));
    }

    #[test]
    fn backward_twice_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let x = t.param(random(&[3, 3], &mut rng, -2.0, 2.0));
        let e = t.exp(x).unwrap();
        let m = t.mul(e, x).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();
        let once = t.grad(x).unwrap().clone();
        t.backward(s).unwrap();
        let twice = t.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn every_recorded_input_gets_a_grad() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![0.5, 1.5]));
        let y = t.log(x).unwrap();
        let z = t.scale(y, 3.0);
        let s = t.sum(z);
        t.backward(s).unwrap();
        for v in [x, y, z, s] {
            assert!(t.grad(v).is_some());
        }
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(GpnError::Domain(_))));
        assert!(matches!(t.digamma(x), Err(GpnError::Domain(_))));
        assert!(matches!(t.lgamma(x), Err(GpnError::Domain(_))));
    }

    #[test]
    fn broadcasting_rules() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let row = t.constant(Tensor::vector(vec![10.0, 20.0]));
        let col = t.constant(Tensor::matrix(2, 1, vec![100.0, 200.0]).unwrap());
        let s = t.constant(Tensor::scalar(0.5));
        let r = t.add_bias(a, row).unwrap();
        assert_eq!(t.value(r).data(), &[11.0, 22.0, 13.0, 24.0]);
        let c = t.add(a, col).unwrap();
        assert_eq!(t.value(c).data(), &[101.0, 102.0, 203.0, 204.0]);
        let m = t.mul(a, s).unwrap();
        assert_eq!(t.value(m).data(), &[0.5, 1.0, 1.5, 2.0]);
        let bad = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(t.add(a, bad).is_err());
    }

    // Every differentiable primitive against central differences on inputs in [-2, 2].
    #[test]
    fn primitive_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 3], &mut rng, -2.0, 2.0);
        let y = random(&[4, 3], &mut rng, -2.0, 2.0);
        let pos = random(&[4, 3], &mut rng, 0.3, 2.0);
        let row = random(&[3], &mut rng, -2.0, 2.0);
        let col = random(&[4, 1], &mut rng, 0.5, 2.0);
        let sc = random(&[1], &mut rng, 0.5, 2.0);

        type Case = (&'static str, Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>, Vec<Tensor>);
        let cases: Vec<Case> = vec![
            ("add", Box::new(|t, v| { let o = t.add(v[0], v[1])?; let o = t.mul(o, o)?; Ok(t.sum(o)) }), vec![x.clone(), y.clone()]),
            ("sub", Box::new(|t, v| { let o = t.sub(v[0], v[1])?; let o = t.mul(o, o)?; Ok(t.sum(o)) }), vec![x.clone(), y.clone()]),
            ("mul", Box::new(|t, v| { let o = t.mul(v[0], v[1])?; Ok(t.sum(o)) }), vec![x.clone(), y.clone()]),
            ("div", Box::new(|t, v| { let o = t.div(v[0], v[1])?; Ok(t.sum(o)) }), vec![x.clone(), pos.clone()]),
            ("bias", Box::new(|t, v| { let o = t.add_bias(v[0], v[1])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone(), row.clone()]),
            ("col", Box::new(|t, v| { let o = t.mul(v[0], v[1])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone(), col.clone()]),
            ("scalar", Box::new(|t, v| { let o = t.div(v[0], v[1])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone(), sc.clone()]),
            ("exp", Box::new(|t, v| { let o = t.exp(v[0])?; Ok(t.sum(o)) }), vec![x.clone()]),
            ("log", Box::new(|t, v| { let o = t.log(v[0])?; Ok(t.sum(o)) }), vec![pos.clone()]),
            ("softplus", Box::new(|t, v| { let o = t.softplus(v[0])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone()]),
            ("lgamma", Box::new(|t, v| { let o = t.lgamma(v[0])?; Ok(t.sum(o)) }), vec![pos.clone()]),
            ("digamma", Box::new(|t, v| { let o = t.digamma(v[0])?; Ok(t.sum(o)) }), vec![pos.clone()]),
            ("recip", Box::new(|t, v| { let o = t.recip(v[0])?; Ok(t.sum(o)) }), vec![pos.clone()]),
            ("neg_scale_shift", Box::new(|t, v| { let o = t.neg(v[0])?; let o = t.scale(o, 1.7); let o = t.add_scalar(o, 0.3); let o = t.square(o)?; Ok(t.mean(o)) }), vec![x.clone()]),
            ("sum_cols", Box::new(|t, v| { let o = t.sum_cols(v[0])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone()]),
            ("row_norm", Box::new(|t, v| { let o = t.row_norm(v[0])?; let o = t.mul(o, o)?; let o = t.exp(o)?; Ok(t.sum(o)) }), vec![x.clone()]),
            ("gather", Box::new(|t, v| { let o = t.gather_rows(v[0], &[2, 0, 2])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone()]),
            ("pick", Box::new(|t, v| { let o = t.pick(v[0], &[0, 2, 1, 1])?; let o = t.square(o)?; Ok(t.sum(o)) }), vec![x.clone()]),
            ("concat", Box::new(|t, v| { let o = t.concat_cols(&[v[0], v[1]])?; let o = t.square(o)?; let o = t.sum_cols(o)?; let o = t.exp(o)?; Ok(t.sum(o)) }), vec![x.clone(), col.clone()]),
        ];
        for (name, f, inputs) in cases {
            let err = max_gradient_error(f, &inputs, 1e-5).unwrap();
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [1e-6, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }
}

//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive evaluated through a [`Var`] handle. Calling
//! [`Tape::gradient`] on a scalar node walks the tape backwards and returns the
//! adjoint of every differentiable leaf. Tapes are single-threaded; each sampler
//! chain owns its own.

mod tape;
mod tensor;

pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: {message}")]
    Contract { op: &'static str, message: String },
    #[error("gradient root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("gradient root is not finite ({0})")]
    NonFiniteRoot(f64),
    #[error("NaN adjoint at node {node} ({op})")]
    NaN { node: usize, op: &'static str },
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise |a − b| / max(|b|, 1).
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    type Build = for<'t> fn(&'t Tape, Var<'t>) -> Var<'t>;

    fn eval(build: Build, x: &[f64], shape: &[usize]) -> f64 {
        let tape = Tape::new();
        let v = tape.var(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
        build(&tape, v).item()
    }

    fn grad(build: Build, x: &[f64], shape: &[usize]) -> Vec<f64> {
        let tape = Tape::new();
        let v = tape.var(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
        let root = build(&tape, v);
        tape.gradient(root).unwrap().wrt(v).into_data()
    }

    fn check(build: Build, x: &[f64], shape: &[usize]) {
        let ad = grad(build, x, shape);
        let fd = finite_difference(|p| eval(build, p, shape), x, 1e-6);
        let err = max_relative_error(&ad, &fd);
        assert!(err < 1e-5, "ad={ad:?} fd={fd:?} err={err}");
    }

    fn weights<'t>(tape: &'t Tape, n: usize) -> Var<'t> {
        // fixed non-uniform weights so reductions are not symmetric
        tape.constant(Tensor::vector((0..n).map(|i| 0.3 + 0.7 * i as f64).collect()))
    }

    #[test]
    fn record_examples() {
        let tape = Tape::new();
        let s = tape.scalar(2.0).add(tape.scalar(3.0)).unwrap();
        assert_eq!(s.item(), 5.0);
        assert_eq!(tape.op_kind(s), OpKind::Add);

        let sm = tape.constant(Tensor::vector(vec![0.0; 3])).softmax(0).unwrap();
        for &p in sm.value().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let lse = tape.constant(Tensor::vector(vec![0.0, 3f64.ln()])).log_sum_exp(0).unwrap();
        assert!((lse.item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        assert_eq!(tape.gradient(y).unwrap().wrt(x).item(), Some(6.0));

        let tape = Tape::new();
        let v = tape.var(Tensor::vector(vec![1.7; 4]));
        let r = v.log_sum_exp(0).unwrap();
        let g = tape.gradient(r).unwrap().wrt(v);
        for &gi in g.data() {
            assert!((gi - 0.25).abs() < 1e-15);
        }

        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.0));
        let r = x.ln_gamma();
        let ad = tape.gradient(r).unwrap().wrt(x).item().unwrap();
        let fd = finite_difference(|p| crate::special::ln_gamma(p[0]), &[1.0], 1e-6)[0];
        assert!((ad - fd).abs() < 1e-8);
        assert!((ad + 0.577_216).abs() < 1e-6);
    }

    /// Fused mixture against the composite gather / gather-sum / log-sum-exp graph.
    fn mixture_pair(x: &[f64], shift: f64) -> ((f64, Vec<f64>), (f64, Vec<f64>)) {
        let a_idx: Arc<[usize]> = vec![0, 2, 1, 3, 3].into();
        let b_idx: Arc<[usize]> = vec![0, 1, 1, 1, 2, 0, 1, 2, 0, 0].into();
        let w = [1.0, 2.0, 0.5, 3.0, 1.0];
        let run = |fused: bool| {
            let tape = Tape::new();
            let v = tape.var(Tensor::vector(x.to_vec()));
            let a = v.segment(0, &[4, 3]).unwrap().shift(shift);
            let b = v.segment(12, &[3, 3]).unwrap();
            let root = if fused {
                tape.log_mixture(&[(a, a_idx.clone(), 1), (b, b_idx.clone(), 2)], &w).unwrap()
            } else {
                let rows = a.gather(0, a_idx.clone()).unwrap().add(b.gather_sum(b_idx.clone(), 2).unwrap()).unwrap();
                let wt = tape.constant(Tensor::vector(w.to_vec()));
                rows.log_sum_exp(1).unwrap().mul(wt).unwrap().sum_all()
            };
            let g = tape.gradient(root).unwrap().wrt(v).into_data();
            (root.item(), g)
        };
        (run(true), run(false))
    }

    #[test]
    fn log_mixture_matches_composite() {
        let x: Vec<f64> = (0..21).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.4).collect();
        for shift in [0.0, -400.0, 400.0] {
            let ((fv, fg), (cv, cg)) = mixture_pair(&x, shift);
            assert!((fv - cv).abs() < 1e-10 * cv.abs().max(1.0), "{shift}: {fv} vs {cv}");
            assert!(max_relative_error(&fg, &cg) < 1e-12, "{shift}");
        }
        let tape = Tape::new();
        let t = tape.var(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        assert!(tape.log_mixture(&[(t, vec![2].into(), 1)], &[1.0]).is_err());
        assert!(tape.log_mixture(&[(t, vec![0, 1].into(), 1)], &[1.0]).is_err());
    }

    #[test]
    fn shape_mismatch_names_primitive() {
        let tape = Tape::new();
        let a = tape.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let err = a.add(b).unwrap_err();
        assert_eq!(err, AutodiffError::Shape { op: "add", shapes: vec![vec![3], vec![2]] });
        let m = tape.var(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(m.matmul(m), Err(AutodiffError::Shape { op: "matrix-multiply", .. })));
    }

    #[test]
    fn non_scalar_root_and_nan_are_errors() {
        let tape = Tape::new();
        let a = tape.var(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.gradient(a), Err(AutodiffError::NonScalarRoot(_))));

        // 0·log(0) is NaN in the primal
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let zero = tape.scalar(0.0);
        let l = x.ln();
        assert_eq!(l.item(), f64::NEG_INFINITY);
        let r = l.mul(zero).unwrap();
        // so the root is rejected before the reverse pass
        assert!(matches!(tape.gradient(r), Err(AutodiffError::NonFiniteRoot(_))));

        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![0.0, 1.0]));
        let w = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let safe = x.shift(1.0).ln().mul(w).unwrap().sum_all();
        assert!(tape.gradient(safe).is_ok());
        let bad = x.ln().exp().mul(w).unwrap().sum_all();
        // exp(log 0) = 0 fine forward; backward hits 0/0 at the log node
        match tape.gradient(bad) {
            Err(AutodiffError::NaN { node, .. }) => assert!(node < tape.len()),
            other => panic!("expected NaN error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn unreached_leaves_have_zero_adjoint() {
        let tape = Tape::new();
        let a = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.var(Tensor::vector(vec![3.0]));
        let r = a.sum_all();
        let g = tape.gradient(r).unwrap();
        assert_eq!(g.wrt(b).data(), &[0.0]);
        assert_eq!(g.wrt(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let x = [0.3, -1.2, 0.8, 2.1, -0.4, 1.5];
        let pos = [0.3, 1.2, 0.8, 2.1, 0.4, 1.5];
        let m23 = [2, 3];
        check(|t, v| v.exp().mul(weights(t, 6)).unwrap().sum_all(), &x, &[6]);
        check(|t, v| v.ln().mul(weights(t, 6)).unwrap().sum_all(), &pos, &[6]);
        check(|t, v| v.ln_gamma().mul(weights(t, 6)).unwrap().sum_all(), &pos, &[6]);
        check(|t, v| v.log_sigmoid().mul(weights(t, 6)).unwrap().sum_all(), &x, &[6]);
        check(|t, v| v.neg().affine(2.0, 1.0).mul(weights(t, 6)).unwrap().sum_all(), &x, &[6]);
        check(|_, v| v.mul(v).unwrap().sum_all(), &x, &[6]);
        check(|t, v| weights(t, 6).div(v).unwrap().sum_all(), &pos, &[6]);
        check(|t, v| v.sub(weights(t, 6)).unwrap().square().sum_all(), &x, &[6]);
        check(
            |t, v| v.log_sum_exp(1).unwrap().mul(weights(t, 2)).unwrap().sum_all(),
            &x,
            &m23,
        );
        check(
            |t, v| v.log_sum_exp(0).unwrap().mul(weights(t, 3)).unwrap().sum_all(),
            &x,
            &m23,
        );
        check(
            |t, v| v.softmax(1).unwrap().reshape(&[6]).unwrap().mul(weights(t, 6)).unwrap().sum_all(),
            &x,
            &m23,
        );
        check(
            |t, v| v.softmax(0).unwrap().reshape(&[6]).unwrap().mul(weights(t, 6)).unwrap().sum_all(),
            &x,
            &m23,
        );
        check(
            |t, v| {
                v.log_softmax(1).unwrap().reshape(&[6]).unwrap().mul(weights(t, 6)).unwrap().sum_all()
            },
            &x,
            &m23,
        );
        check(|t, v| v.sum(0).unwrap().mul(weights(t, 3)).unwrap().sum_all(), &x, &m23);
        check(|t, v| v.sum(1).unwrap().square().mul(weights(t, 2)).unwrap().sum_all(), &x, &m23);
        check(
            |t, v| {
                let b = t.constant(Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, 0.3, 0.7]).unwrap());
                v.matmul(b).unwrap().square().sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                let a = t.constant(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.1]).unwrap());
                a.matmul(v).unwrap().exp().sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| v.transpose().unwrap().reshape(&[6]).unwrap().mul(weights(t, 6)).unwrap().sum_all(),
            &x,
            &m23,
        );
        check(
            |t, v| {
                let idx: Arc<[usize]> = Arc::from(vec![2usize, 0, 2, 1]);
                v.gather(1, idx).unwrap().reshape(&[8]).unwrap().mul(weights(t, 8)).unwrap().sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                let idx: Arc<[usize]> = Arc::from(vec![1usize, 1, 0]);
                v.gather(0, idx).unwrap().reshape(&[9]).unwrap().mul(weights(t, 9)).unwrap().sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                let idx: Arc<[usize]> = Arc::from(vec![0usize, 1, 1, 1, 0, 0]);
                v.gather_sum(idx, 2)
                    .unwrap()
                    .reshape(&[9])
                    .unwrap()
                    .square()
                    .mul(weights(t, 9))
                    .unwrap()
                    .sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                v.cumsum(1, true).unwrap().reshape(&[6]).unwrap().square().mul(weights(t, 6)).unwrap().sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                v.cumsum(0, false).unwrap().reshape(&[6]).unwrap().square().mul(weights(t, 6)).unwrap().sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                let z = t.constant(Tensor::zeros(&[2, 1]));
                t.concat(&[v, z, v], 1)
                    .unwrap()
                    .log_softmax(1)
                    .unwrap()
                    .reshape(&[14])
                    .unwrap()
                    .mul(weights(t, 14))
                    .unwrap()
                    .sum_all()
            },
            &x,
            &m23,
        );
        check(
            |t, v| {
                let row = v.segment(2, &[3]).unwrap();
                row.broadcast_to(&[2, 3]).unwrap().reshape(&[6]).unwrap().mul(weights(t, 6)).unwrap().exp().sum_all()
            },
            &x,
            &[6],
        );
        check(
            |t, v| {
                let col = v.segment(0, &[2, 1]).unwrap();
                let m = t.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
                col.mul(m).unwrap().square().sum_all()
            },
            &x,
            &[6],
        );
    }

    proptest! {
        #[test]
        fn gradient_is_linear(
            xs in proptest::collection::vec(-3.0f64..3.0, 5),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let grad_of = |which: u8| {
                let tape = Tape::new();
                let v = tape.var(Tensor::vector(xs.clone()));
                let fv = v.log_sum_exp(0).unwrap();
                let gv = v.square().sum_all();
                let root = match which {
                    0 => fv,
                    1 => gv,
                    _ => fv.scale(a).add(gv.scale(b)).unwrap(),
                };
                tape.gradient(root).unwrap().wrt(v).into_data()
            };
            let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
            for i in 0..xs.len() {
                let want = a * gf[i] + b * gg[i];
                prop_assert!((gc[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }

        #[test]
        fn recording_is_deterministic(xs in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let run = || {
                let tape = Tape::new();
                let v = tape.var(Tensor::matrix(2, 3, xs.clone()).unwrap());
                let r = v.log_softmax(1).unwrap().exp().ln_gamma().sum_all();
                let g = tape.gradient(r).unwrap().wrt(v).into_data();
                (r.item().to_bits(), g.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            };
            prop_assert_eq!(run(), run());
        }
    }
}

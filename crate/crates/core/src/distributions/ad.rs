//! Densities and transforms recorded on an autodiff tape.
//!
//! Every density returns a scalar node holding the summed log density over all
//! elements of its argument, normalizing constants included.

use crate::autodiff::{AutodiffError, Tensor, Var};
use crate::special::{ln_gamma, ln_multivariate_beta};

use super::transforms::stick_offset;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Σ log N(x | mean, sd) with fixed parameters.
pub fn normal<'t>(x: Var<'t>, mean: f64, sd: f64) -> Var<'t> {
    let n = x.value().len() as f64;
    let ss = x.shift(-mean).square().sum_all();
    ss.affine(-0.5 / (sd * sd), -n * (HALF_LN_2PI + sd.ln()))
}

/// Σ log N(x | mean, sd) with tape-valued mean and sd, broadcast against x.
pub fn normal_var<'t>(x: Var<'t>, mean: Var<'t>, sd: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    let z = x.sub(mean)?.div(sd)?;
    let shape = z.shape();
    let log_sd = sd.ln().broadcast_to(&shape)?;
    let n = z.value().len() as f64;
    let quad = z.square().sum_all().scale(-0.5);
    quad.sub(log_sd.sum_all())?.add(x.tape().scalar(-n * HALF_LN_2PI))
}

/// Σ_rows log Dir(exp(log_x[r]) | concentration) for a `[rows, K]` matrix of
/// log-simplex rows (or a single length-K vector).
pub fn dirichlet_log_simplex<'t>(
    log_x: Var<'t>,
    concentration: &[f64],
) -> Result<Var<'t>, AutodiffError> {
    let shape = log_x.shape();
    let k = *shape.last().unwrap_or(&0);
    if k != concentration.len() {
        return Err(AutodiffError::Shape {
            op: "dirichlet",
            shapes: vec![shape, vec![concentration.len()]],
        });
    }
    let rows = (log_x.value().len() / k.max(1)) as f64;
    let tape = log_x.tape();
    if concentration.iter().all(|&a| a == concentration[0]) {
        let a = concentration[0];
        let ln_beta = k as f64 * ln_gamma(a) - ln_gamma(k as f64 * a);
        return Ok(log_x.sum_all().affine(a - 1.0, -rows * ln_beta));
    }
    let w = tape.constant(Tensor::vector(concentration.iter().map(|a| a - 1.0).collect()));
    Ok(log_x.mul(w)?.sum_all().shift(-rows * ln_multivariate_beta(concentration)))
}

/// Σ log Gamma(exp(log_x) | shape, rate), evaluated from log x. The
/// log-positive Jacobian is not included.
pub fn gamma_from_log<'t>(log_x: Var<'t>, shape: f64, rate: f64) -> Var<'t> {
    let n = log_x.value().len() as f64;
    let lin = log_x.sum_all().scale(shape - 1.0);
    let expo = log_x.exp().sum_all().scale(-rate);
    let c = n * (shape * rate.ln() - ln_gamma(shape));
    lin.add(expo).expect("scalars").shift(c)
}

/// Σ log InvGamma(exp(log_x) | shape, scale), evaluated from log x. The
/// log-positive Jacobian is not included.
pub fn inverse_gamma_from_log<'t>(log_x: Var<'t>, shape: f64, scale: f64) -> Var<'t> {
    let n = log_x.value().len() as f64;
    let lin = log_x.sum_all().scale(-(shape + 1.0));
    let expo = log_x.neg().exp().sum_all().scale(-scale);
    let c = n * (shape * scale.ln() - ln_gamma(shape));
    lin.add(expo).expect("scalars").shift(c)
}

/// Row-wise stick-breaking of a `[rows, K−1]` matrix (or a length K−1 vector)
/// into log-simplex rows `[rows, K]`, with the summed log |J|.
pub fn stick_breaking<'t>(u: Var<'t>) -> Result<(Var<'t>, Var<'t>), AutodiffError> {
    let shape = u.shape();
    let (rows, km1, vector) = match shape.as_slice() {
        [n] => (1, *n, true),
        [r, n] => (*r, *n, false),
        _ => return Err(AutodiffError::Shape { op: "stick-breaking", shapes: vec![shape] }),
    };
    let k = km1 + 1;
    let tape = u.tape();
    let u2 = if vector { u.reshape(&[1, km1])? } else { u };
    let offsets = tape.constant(Tensor::vector((0..km1).map(|i| stick_offset(k, i)).collect()));
    let a = u2.add(offsets)?;
    let log_z = a.log_sigmoid();
    // log(1 − σ(a)) = log σ(a) − a
    let log_rest_step = log_z.sub(a)?;
    let cum = log_rest_step.cumsum(1, true)?;
    let head = log_z.add(cum)?;
    let tail = log_rest_step.sum(1)?.reshape(&[rows, 1])?;
    let log_x = tape.concat(&[head, tail], 1)?;
    let log_jac = head.sum_all().add(log_rest_step.sum_all())?;
    let log_x = if vector { log_x.reshape(&[k])? } else { log_x };
    Ok((log_x, log_jac))
}

/// Inserts a zero logit column at `anchor` and takes a row-wise log-softmax.
/// Accepts `[rows, K−1]` or a length K−1 vector.
pub fn anchored_log_softmax<'t>(logits: Var<'t>, anchor: usize) -> Result<Var<'t>, AutodiffError> {
    let full = insert_anchor_column(logits, anchor)?;
    let axis = full.shape().len() - 1;
    full.log_softmax(axis)
}

/// Inserts a column of zeros at `anchor` along the last axis.
pub fn insert_anchor_column<'t>(logits: Var<'t>, anchor: usize) -> Result<Var<'t>, AutodiffError> {
    let shape = logits.shape();
    let axis = match shape.len() {
        1 | 2 => shape.len() - 1,
        _ => return Err(AutodiffError::Shape { op: "anchored-softmax", shapes: vec![shape] }),
    };
    let km1 = shape[axis];
    if anchor > km1 {
        return Err(AutodiffError::Contract {
            op: "anchored-softmax",
            message: format!("anchor {anchor} out of range for {} categories", km1 + 1),
        });
    }
    let tape = logits.tape();
    let mut zero_shape = shape.clone();
    zero_shape[axis] = 1;
    let zeros = tape.constant(Tensor::zeros(&zero_shape));
    let mut parts = Vec::with_capacity(3);
    if anchor > 0 {
        parts.push(take_columns(logits, 0, anchor)?);
    }
    parts.push(zeros);
    if anchor < km1 {
        parts.push(take_columns(logits, anchor, km1)?);
    }
    tape.concat(&parts, axis)
}

fn take_columns<'t>(x: Var<'t>, from: usize, to: usize) -> Result<Var<'t>, AutodiffError> {
    let shape = x.shape();
    let axis = shape.len() - 1;
    if from == 0 && to == shape[axis] {
        return Ok(x);
    }
    let idx: std::sync::Arc<[usize]> = (from..to).collect();
    x.gather(axis, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, max_relative_error, Tape};
    use crate::distributions::{
        dirichlet_log_prob, gamma_log_prob, inverse_gamma_log_prob, normal_log_prob, SimplexVector,
        TransformSpec,
    };

    fn eval<F>(x: &[f64], shape: &[usize], f: F) -> (f64, Vec<f64>)
    where
        F: for<'t> Fn(Var<'t>) -> Var<'t>,
    {
        let tape = Tape::new();
        let v = tape.var(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
        let out = f(v);
        let g = tape.gradient(out).unwrap();
        (out.item(), g.wrt(v).into_data())
    }

    fn hr<F: for<'t> Fn(Var<'t>) -> Var<'t>>(f: F) -> F {
        f
    }

    fn check_gradient<F>(x: &[f64], shape: &[usize], f: F)
    where
        F: for<'t> Fn(Var<'t>) -> Var<'t> + Copy,
    {
        let (_, grad) = eval(x, shape, f);
        let fd = finite_difference(|p| eval(p, shape, f).0, x, 1e-6);
        assert!(max_relative_error(&grad, &fd) < 1e-5, "{grad:?} vs {fd:?}");
    }

    #[test]
    fn normal_matches_scalar_kernel() {
        let x = [0.3, -1.2, 2.5];
        let want: f64 = x.iter().map(|&v| normal_log_prob(v, 0.5, 2.0).unwrap()).sum();
        let (got, _) = eval(&x, &[3], |v| normal(v, 0.5, 2.0));
        assert!((got - want).abs() < 1e-12);
        check_gradient(&x, &[3], |v| normal(v, 0.5, 2.0));
    }

    #[test]
    fn normal_var_matches_scalar_kernel() {
        let x = [0.3, -1.2, 2.5, 0.7];
        let f = hr(|v: Var<'_>| {
            let tape = v.tape();
            let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, -0.5, 0.2, 0.9]).unwrap());
            let mean = v.segment(0, &[2]).unwrap();
            let sd = v.segment(2, &[2]).unwrap().exp();
            normal_var(x, mean, sd).unwrap()
        });
        let (m, s) = ([0.3, -1.2], [2.5f64.exp(), 0.7f64.exp()]);
        let xs = [1.0, -0.5, 0.2, 0.9];
        let want: f64 = (0..4).map(|i| normal_log_prob(xs[i], m[i % 2], s[i % 2]).unwrap()).sum();
        let (got, _) = eval(&x, &[4], f);
        assert!((got - want).abs() < 1e-12);
        check_gradient(&x, &[4], f);
    }

    #[test]
    fn dirichlet_matches_scalar_kernel() {
        let rows = [[0.2, 0.3, 0.5], [0.6, 0.1, 0.3]];
        let log_x: Vec<f64> = rows.iter().flatten().map(|p: &f64| p.ln()).collect();
        for conc in [[0.1, 0.1, 0.1], [2.0, 1.0, 0.5]] {
            let want: f64 = rows
                .iter()
                .map(|r| dirichlet_log_prob(&SimplexVector::new(r.to_vec()).unwrap(), &conc).unwrap())
                .sum();
            let (got, _) = eval(&log_x, &[2, 3], |v| dirichlet_log_simplex(v, &conc).unwrap());
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_family_match_scalar_kernels() {
        let log_x = [0.2, -0.9];
        let want: f64 = log_x.iter().map(|l: &f64| gamma_log_prob(l.exp(), 20.0, 0.5).unwrap()).sum();
        let (got, _) = eval(&log_x, &[2], |v| gamma_from_log(v, 20.0, 0.5));
        assert!((got - want).abs() < 1e-10);
        check_gradient(&log_x, &[2], |v| gamma_from_log(v, 20.0, 0.5));

        let want: f64 =
            log_x.iter().map(|l: &f64| inverse_gamma_log_prob(l.exp(), 10.0, 1.0).unwrap()).sum();
        let (got, _) = eval(&log_x, &[2], |v| inverse_gamma_from_log(v, 10.0, 1.0));
        assert!((got - want).abs() < 1e-10);
        check_gradient(&log_x, &[2], |v| inverse_gamma_from_log(v, 10.0, 1.0));
    }

    #[test]
    fn stick_breaking_matches_plain_transform() {
        let u = [0.4, -1.1, 2.0, -0.3, 0.0, 0.8];
        let spec = TransformSpec::stick_breaking(4);
        let tape = Tape::new();
        let v = tape.var(Tensor::new(vec![2, 3], u.to_vec()).unwrap());
        let (log_x, log_jac) = stick_breaking(v).unwrap();
        assert_eq!(log_x.shape(), vec![2, 4]);
        let mut want_jac = 0.0;
        for r in 0..2 {
            let (x, j) = spec.forward(&u[r * 3..r * 3 + 3]).unwrap();
            want_jac += j;
            for c in 0..4 {
                assert!((log_x.value().data()[r * 4 + c] - x[c].ln()).abs() < 1e-12);
            }
        }
        assert!((log_jac.item() - want_jac).abs() < 1e-12);

        let f = hr(|v: Var<'_>| {
            let (lx, lj) = stick_breaking(v).unwrap();
            let w = v.tape().constant(Tensor::vector(vec![0.3, -1.0, 2.0, 0.5]));
            lx.mul(w).unwrap().sum_all().add(lj).unwrap()
        });
        check_gradient(&u, &[2, 3], f);
        check_gradient(&u[..3], &[3], f);
    }

    #[test]
    fn anchored_log_softmax_matches_plain_transform() {
        for anchor in 0..3 {
            let u = [0.5, -0.2];
            let (want, _) = TransformSpec::anchored_softmax(3, anchor).forward(&u).unwrap();
            let tape = Tape::new();
            let v = tape.var(Tensor::vector(u.to_vec()));
            let got = anchored_log_softmax(v, anchor).unwrap();
            for (g, w) in got.value().data().iter().zip(&want) {
                assert!((g - w.ln()).abs() < 1e-14);
            }
            let f = hr(move |v: Var<'_>| {
                let w = v.tape().constant(Tensor::vector(vec![1.0, 2.0, -0.5]));
                anchored_log_softmax(v, anchor).unwrap().mul(w).unwrap().sum_all()
            });
            check_gradient(&[0.5, -0.2, 1.0, 0.1], &[2, 2], f);
        }
    }
}

//! Row-batched Poincaré operations on the autodiff tape.
//!
//! Points are stored as rows of a `B×n` variable. All functions are smooth
//! compositions of tape primitives, so gradients flow to every input.

use super::BallConfig;
use crate::autodiff::{AutodiffError, Var};

type Result<T> = std::result::Result<T, AutodiffError>;

fn one_minus(v: Var<'_>) -> Var<'_> {
    v.neg().add_scalar(1.0)
}

fn squared_norms<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.square().sum_rows()
}

fn scale_rows<'t>(x: Var<'t>, factors: Var<'t>) -> Result<Var<'t>> {
    let shape = x.shape();
    x.mul(factors.expand([shape[0], shape[1]])?)
}

/// Row-wise `exp₀`.
pub fn expmap0<'t>(v: Var<'t>, config: BallConfig) -> Result<Var<'t>> {
    let s = squared_norms(v)?.scale(config.c());
    let mapped = scale_rows(v, s.tanh_ratio()?)?;
    project(mapped, config)
}

/// Row-wise `log₀`.
pub fn logmap0<'t>(x: Var<'t>, config: BallConfig) -> Result<Var<'t>> {
    let s = squared_norms(x)?.scale(config.c());
    scale_rows(x, s.atanh_ratio()?)
}

/// Rescales rows whose norm exceeds `(1 − eps)/√c` back onto that radius.
pub fn project<'t>(x: Var<'t>, config: BallConfig) -> Result<Var<'t>> {
    let max = config.max_norm();
    let factor = x.row_norm()?.clamp(max, f64::INFINITY).recip()?.scale(max);
    scale_rows(x, factor)
}

/// Scales rows by `min{1, 1/‖x‖}` so no row exceeds unit norm.
pub fn clip_unit_norm(x: Var<'_>) -> Result<Var<'_>> {
    let factor = x.row_norm()?.clamp(1.0, f64::INFINITY).recip()?;
    scale_rows(x, factor)
}

/// Row-wise Möbius addition `x ⊕ y`.
pub fn mobius_add<'t>(x: Var<'t>, y: Var<'t>, config: BallConfig) -> Result<Var<'t>> {
    let c = config.c();
    let xy = x.mul(y)?.sum_rows()?;
    let xx = squared_norms(x)?;
    let yy = squared_norms(y)?;
    let a = xy.scale(2.0 * c).add(yy.scale(c))?.add_scalar(1.0);
    let b = one_minus(xx.scale(c));
    let den = xy
        .scale(2.0 * c)
        .add(xx.mul(yy)?.scale(c * c))?
        .add_scalar(1.0);
    let num = scale_rows(x, a)?.add(scale_rows(y, b)?)?;
    project(scale_rows(num, den.recip()?)?, config)
}

/// Row-wise geodesic distance via the arc-cosh form, as `B×1`.
pub fn dist<'t>(x: Var<'t>, y: Var<'t>, config: BallConfig) -> Result<Var<'t>> {
    let c = config.c();
    let diff = squared_norms(x.sub(y)?)?;
    let den = one_minus(squared_norms(x)?.scale(c)).mul(one_minus(squared_norms(y)?.scale(c)))?;
    let arg = diff.div(den)?.scale(2.0 * c).add_scalar(1.0);
    Ok(arg.acosh()?.scale(1.0 / config.sqrt_c()))
}

/// Hyperbolic affine logits for `B` points against `K` gyroplanes.
///
/// `x` is `B×n`, shifts `p` and normals `w` are `K×n`; the result is `B×K`
/// with entry `(b, k)` equal to
/// `(2‖w_k‖/√(1 − c‖p_k‖²)) · asinh(2√c⟨z, w_k⟩/((1 − c‖z‖²)‖w_k‖))/√c`
/// where `z = (−p_k) ⊕ x_b`. Because `asinh` is odd this equals the
/// sign-times-distance form.
pub fn gyroplane_logits<'t>(
    x: Var<'t>,
    p: Var<'t>,
    w: Var<'t>,
    config: BallConfig,
) -> Result<Var<'t>> {
    let c = config.c();
    let sc = config.sqrt_c();
    let (b, k) = (x.shape()[0], p.shape()[0]);
    let bk = [b, k];
    let row_stat = |v: Var<'t>| -> Result<Var<'t>> { v.expand(bk) };
    let plane_stat = |v: Var<'t>| -> Result<Var<'t>> { v.transpose()?.expand(bk) };

    let xx = row_stat(squared_norms(x)?)?;
    let pp = plane_stat(squared_norms(p)?)?;
    let pw = plane_stat(p.mul(w)?.sum_rows()?)?;
    let wn = plane_stat(w.row_norm()?.clamp(1e-15, f64::INFINITY))?;
    let xp = x.matmul_t(p)?;
    let xw = x.matmul_t(w)?;

    // z = α·(−p) + β·x over D, with α = 1 − 2c⟨p,x⟩ + c‖x‖², β = 1 − c‖p‖².
    let alpha = one_minus(xp.scale(2.0 * c)).add(xx.scale(c))?;
    let beta = one_minus(pp.scale(c));
    let den = one_minus(xp.scale(2.0 * c)).add(pp.mul(xx)?.scale(c * c))?;

    let zw = beta.mul(xw)?.sub(alpha.mul(pw)?)?.div(den)?;
    let zz = alpha
        .square()
        .mul(pp)?
        .sub(alpha.mul(beta)?.mul(xp)?.scale(2.0))?
        .add(beta.square().mul(xx)?)?
        .div(den.square())?;

    let t = zw.scale(2.0 * sc).div(one_minus(zz.scale(c)).mul(wn)?)?;
    let prefactor = wn.div(beta.sqrt()?)?.scale(2.0 / sc);
    prefactor.mul(t.asinh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, grad_check_with_inputs, Tape, Tensor};
    use crate::poincare::{self, BallPoint, GyroplaneParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize, radius: f64) -> Tensor {
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = poincare::norm_sq(&v).sqrt();
            let r = rng.random_range(0.0..radius);
            data.extend(v.iter().map(|x| x / n * r));
        }
        Tensor::matrix(rows, dim, data).unwrap()
    }

    #[test]
    fn matches_pointwise_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = BallConfig::new(0.7).unwrap();
        let x = random_rows(&mut rng, 4, 3, 0.9 / cfg.sqrt_c());
        let p = random_rows(&mut rng, 2, 3, 0.6 / cfg.sqrt_c());
        let w =
            Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let tape = Tape::new();
        let (xv, pv, wv) = (
            tape.constant(x.clone()),
            tape.constant(p.clone()),
            tape.constant(w.clone()),
        );
        let logits = gyroplane_logits(xv, pv, wv, cfg).unwrap().value();
        let sum = mobius_add(xv, xv.neg(), cfg).unwrap().value();
        let e = expmap0(xv, cfg).unwrap().value();
        for bi in 0..4 {
            let xb = BallPoint::new(x.row(bi).to_vec(), cfg).unwrap();
            for ki in 0..2 {
                let g = GyroplaneParams::new(
                    BallPoint::new(p.row(ki).to_vec(), cfg).unwrap(),
                    w.row(ki).to_vec(),
                )
                .unwrap();
                let expected = poincare::gyroplane_affine(&xb, &g).unwrap();
                assert!((logits.get(bi, ki) - expected).abs() < 1e-12);
            }
            assert!(sum.row(bi).iter().all(|v| v.abs() < 1e-12));
            let pe = poincare::expmap0(x.row(bi), cfg).unwrap();
            for (a, b) in e.row(bi).iter().zip(pe.coords()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = BallConfig::default();
        for _ in 0..10 {
            let x = random_rows(&mut rng, 3, 4, 0.9);
            let p = random_rows(&mut rng, 2, 4, 0.5);
            let w = Tensor::matrix(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let err = grad_check_with_inputs(
                |_, v| Ok(gyroplane_logits(v[0], v[1], v[2], cfg)?.sum()),
                &[x.clone(), p, w],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "gyroplane {err}");
            let y = random_rows(&mut rng, 3, 4, 0.9);
            let err = grad_check_with_inputs(
                |_, v| Ok(dist(v[0], v[1], cfg)?.sum()),
                &[x.clone(), y.clone()],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "dist {err}");
            let err = grad_check_with_inputs(
                |_, v| Ok(mobius_add(v[0], v[1], cfg)?.square().sum()),
                &[x.clone(), y],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "mobius {err}");
            let err = grad_check(|_, v| Ok(logmap0(v, cfg)?.sum()), &x, 1e-6).unwrap();
            assert!(err < 1e-5, "logmap0 {err}");
        }
    }

    #[test]
    fn expmap0_gradient_is_finite_at_origin() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let y = expmap0(x, BallConfig::default()).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn clip_never_exceeds_unit_norm() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 0.3, 0.4]).unwrap());
        let out = clip_unit_norm(x).unwrap().value();
        assert!((out.row(0)[0] - 0.6).abs() < 1e-15 && (out.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(out.row(1), &[0.3, 0.4]);
    }
}

//! Poincaré-ball geometry with curvature `-c`.
//!
//! The ball is `{x : c‖x‖² < 1}` with conformal factor `λ_x = 2/(1 − c‖x‖²)`.
//! Functions here act on single points and are exact closed forms; the
//! [`batched`] module mirrors them on the autodiff tape for row-stacked points.
//!
//! Every operation that produces a ball point finishes with
//! [`project_to_ball`], which keeps `√c‖x‖ ≤ 1 − boundary_eps`.

pub mod batched;

use std::fmt;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PoincareError {
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("boundary margin must lie in (0, 1), got {0}")]
    InvalidBoundaryEps(f64),
    #[error("point lies outside the open ball (c·‖x‖² = {0})")]
    OutsideBall(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("gyroplane normal must be non-zero")]
    ZeroNormal,
}

pub type Result<T> = std::result::Result<T, PoincareError>;

/// Curvature magnitude `c` and the clamp margin used by [`project_to_ball`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BallConfig {
    c: f64,
    boundary_eps: f64,
}

impl Default for BallConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            boundary_eps: 1e-5,
        }
    }
}

impl BallConfig {
    pub fn new(c: f64) -> Result<Self> {
        Self::with_boundary_eps(c, 1e-5)
    }

    pub fn with_boundary_eps(c: f64, boundary_eps: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(PoincareError::InvalidCurvature(c));
        }
        if !(boundary_eps > 0.0 && boundary_eps < 1.0) {
            return Err(PoincareError::InvalidBoundaryEps(boundary_eps));
        }
        Ok(Self { c, boundary_eps })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sqrt_c(&self) -> f64 {
        self.c.sqrt()
    }

    pub fn boundary_eps(&self) -> f64 {
        self.boundary_eps
    }

    /// Largest Euclidean norm a projected point may have.
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.boundary_eps) / self.c.sqrt()
    }
}

/// A point strictly inside the ball.
#[derive(Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    config: BallConfig,
}

impl fmt::Debug for BallPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BallPoint(c={}, {:?})", self.config.c, self.coords)
    }
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, config: BallConfig) -> Result<Self> {
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(PoincareError::NonFinite);
        }
        let cn = config.c * norm_sq(&coords);
        if cn >= 1.0 {
            return Err(PoincareError::OutsideBall(cn));
        }
        Ok(Self { coords, config })
    }

    pub fn origin(dim: usize, config: BallConfig) -> Self {
        Self {
            coords: vec![0.0; dim],
            config,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn config(&self) -> BallConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.coords).sqrt()
    }

    /// Additive inverse `−x`, which is also the Möbius inverse.
    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|x| -x).collect(),
            config: self.config,
        }
    }
}

/// Gyroplane with shift `p` on the ball and Euclidean normal `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GyroplaneParams {
    p: BallPoint,
    w: Vec<f64>,
}

impl GyroplaneParams {
    pub fn new(p: BallPoint, w: Vec<f64>) -> Result<Self> {
        if p.dim() != w.len() {
            return Err(PoincareError::DimensionMismatch(p.dim(), w.len()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(PoincareError::NonFinite);
        }
        if norm_sq(&w) == 0.0 {
            return Err(PoincareError::ZeroNormal);
        }
        Ok(Self { p, w })
    }

    pub fn p(&self) -> &BallPoint {
        &self.p
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn same_dim(x: &BallPoint, y: &BallPoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(PoincareError::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(())
}

/// `λ_x = 2/(1 − c‖x‖²)` on raw coordinates.
pub fn conformal_factor_of(x: &[f64], c: f64) -> Result<f64> {
    let cn = c * norm_sq(x);
    if !(cn < 1.0) {
        return Err(PoincareError::OutsideBall(cn));
    }
    Ok(2.0 / (1.0 - cn))
}

pub fn conformal_factor(x: &BallPoint) -> f64 {
    // BallPoint is interior by construction.
    2.0 / (1.0 - x.config.c * norm_sq(&x.coords))
}

/// Möbius addition on raw coordinates, without projection.
pub(crate) fn mobius_add_raw(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * yy;
    let b = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    x.iter()
        .zip(y)
        .map(|(xi, yi)| (a * xi + b * yi) / den)
        .collect()
}

/// `x ⊕ y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    same_dim(x, y)?;
    project_to_ball(&mobius_add_raw(&x.coords, &y.coords, x.config.c), x.config)
}

/// Geodesic distance via the arc-cosh closed form.
pub fn dist(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    same_dim(x, y)?;
    Ok(dist_raw(&x.coords, &y.coords, x.config.c))
}

pub(crate) fn dist_raw(x: &[f64], y: &[f64], c: f64) -> f64 {
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let den = (1.0 - c * norm_sq(x)) * (1.0 - c * norm_sq(y));
    let u = 2.0 * c * diff / den;
    // acosh(1 + u) = ln(1 + u + √(u(u + 2))), kept accurate for small u.
    (u + (u * (u + 2.0)).sqrt()).ln_1p() / c.sqrt()
}

/// Geodesic distance through the gyrovector identity
/// `d(x, y) = (2/√c)·artanh(√c‖(−x) ⊕ y‖)`.
pub fn dist_gyro(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    same_dim(x, y)?;
    let c = x.config.c;
    let neg_x: Vec<f64> = x.coords.iter().map(|v| -v).collect();
    let z = mobius_add_raw(&neg_x, &y.coords, c);
    Ok(2.0 / c.sqrt() * (c.sqrt() * norm_sq(&z).sqrt()).atanh())
}

/// Exponential map at the origin.
pub fn expmap0(v: &[f64], config: BallConfig) -> Result<BallPoint> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PoincareError::NonFinite);
    }
    let s = config.c * norm_sq(v);
    let scale = crate::autodiff::tanh_ratio(s);
    project_to_ball(&v.iter().map(|x| x * scale).collect::<Vec<_>>(), config)
}

/// Logarithmic map at the origin, the inverse of [`expmap0`].
pub fn logmap0(x: &BallPoint) -> Vec<f64> {
    let s = x.config.c * norm_sq(&x.coords);
    let scale = crate::autodiff::atanh_ratio(s);
    x.coords.iter().map(|v| v * scale).collect()
}

/// Exponential map at `p`:
/// `p ⊕ (tanh(√c·λ_p·‖v‖/2) · v/(√c‖v‖))`.
pub fn expmap_at(p: &BallPoint, v: &[f64]) -> Result<BallPoint> {
    if p.dim() != v.len() {
        return Err(PoincareError::DimensionMismatch(p.dim(), v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PoincareError::NonFinite);
    }
    let c = p.config.c;
    let lambda = conformal_factor(p);
    // tanh(√c·λ‖v‖/2)/(√c‖v‖) = (λ/2)·tanh_ratio(c·λ²‖v‖²/4)
    let s = c * lambda * lambda * norm_sq(v) / 4.0;
    let scale = 0.5 * lambda * crate::autodiff::tanh_ratio(s);
    let step: Vec<f64> = v.iter().map(|x| x * scale).collect();
    project_to_ball(&mobius_add_raw(&p.coords, &step, c), p.config)
}

/// Rescales `x` onto the clamped ball when it lies beyond `(1 − eps)/√c`.
pub fn project_to_ball(x: &[f64], config: BallConfig) -> Result<BallPoint> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PoincareError::NonFinite);
    }
    let norm = norm_sq(x).sqrt();
    let max = config.max_norm();
    let coords = if norm > max {
        x.iter().map(|v| v * (max / norm)).collect()
    } else {
        x.to_vec()
    };
    Ok(BallPoint { coords, config })
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Signed distance from `x` to the gyroplane `{y : ⟨(−p) ⊕ y, w⟩ = 0}`.
///
/// `sign(0)` is taken as `+1`; the magnitude is zero there so the value is
/// unaffected.
pub fn gyroplane_sdist(x: &BallPoint, g: &GyroplaneParams) -> Result<f64> {
    same_dim(x, &g.p)?;
    let c = x.config.c;
    let sc = c.sqrt();
    let neg_p: Vec<f64> = g.p.coords.iter().map(|v| -v).collect();
    let z = mobius_add_raw(&neg_p, &x.coords, c);
    let zw = dot(&z, &g.w);
    let wn = norm_sq(&g.w).sqrt();
    let arg = 2.0 * sc * zw.abs() / ((1.0 - c * norm_sq(&z)) * wn);
    Ok(sign(zw) * arg.asinh() / sc)
}

/// Hyperbolic affine logit `sign(·)·(2‖w‖/√(1 − c‖p‖²))·d(x, H)`.
pub fn gyroplane_affine(x: &BallPoint, g: &GyroplaneParams) -> Result<f64> {
    let sd = gyroplane_sdist(x, g)?;
    let c = x.config.c;
    let wn = norm_sq(&g.w).sqrt();
    Ok(2.0 * wn / (1.0 - c * norm_sq(&g.p.coords)).sqrt() * sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> BallConfig {
        BallConfig::default()
    }

    fn pt(coords: &[f64], cfg: BallConfig) -> BallPoint {
        BallPoint::new(coords.to_vec(), cfg).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize, cfg: BallConfig, radius: f64) -> BallPoint {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if norm_sq(&v) <= 1.0 {
                let scaled: Vec<f64> = v.iter().map(|x| x * radius / cfg.sqrt_c()).collect();
                return pt(&scaled, cfg);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(BallConfig::new(0.0).is_err());
        assert!(BallConfig::new(-1.0).is_err());
        assert!(BallConfig::with_boundary_eps(1.0, 1.0).is_err());
        assert!(BallPoint::new(vec![1.0, 0.0], unit()).is_err());
    }

    #[test]
    fn conformal_factor_examples() {
        assert_eq!(conformal_factor(&BallPoint::origin(3, unit())), 2.0);
        let x = pt(&[0.5f64.sqrt(), 0.0], unit());
        assert!((conformal_factor(&x) - 4.0).abs() < 1e-12);
        let quarter = BallConfig::new(0.25).unwrap();
        let x = pt(&[1.0, 1.0], quarter);
        assert!((conformal_factor(&x) - 4.0).abs() < 1e-12);
        assert!(conformal_factor_of(&[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn mobius_identity_and_inverse() {
        let cfg = unit();
        let x = pt(&[0.3, -0.2, 0.1], cfg);
        let zero = BallPoint::origin(3, cfg);
        assert_eq!(mobius_add(&x, &zero).unwrap(), x);
        let back = mobius_add(&x, &x.neg()).unwrap();
        assert!(back.norm() < 1e-12);
        assert!(mobius_add(&x, &BallPoint::origin(2, cfg)).is_err());
    }

    #[test]
    fn distance_from_origin_is_ln3() {
        let cfg = unit();
        let y = pt(&[0.3, 0.4], cfg);
        let d = dist(&BallPoint::origin(2, cfg), &y).unwrap();
        assert!((d - 3f64.ln()).abs() < 1e-12, "{d}");
        assert!((d - 1.0986123).abs() < 1e-7);
        assert_eq!(dist(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn expmap0_examples() {
        let cfg = unit();
        let e = expmap0(&[0.5, 0.0], cfg).unwrap();
        assert!((e.coords()[0] - 0.5f64.tanh()).abs() < 1e-15);
        assert!((e.coords()[0] - 0.4621172).abs() < 1e-7);
        assert_eq!(expmap0(&[0.0, 0.0], cfg).unwrap().coords(), &[0.0, 0.0]);
        assert!(expmap0(&[f64::NAN], cfg).is_err());

        let mut last = 0.0;
        for k in 1..=50 {
            let r = expmap0(&[k as f64, 0.0], cfg).unwrap().norm();
            assert!(r >= last && r < 1.0);
            last = r;
        }
        assert!((last - (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn logmap0_inverts_expmap0() {
        let cfg = unit();
        let x = pt(&[0.5f64.tanh(), 0.0], cfg);
        let v = logmap0(&x);
        assert!((v[0] - 0.5).abs() < 1e-12 && v[1] == 0.0);
        assert_eq!(logmap0(&BallPoint::origin(2, cfg)), vec![0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let c = rng.random_range(0.2..3.0);
            let cfg = BallConfig::new(c).unwrap();
            let x = random_point(&mut rng, 4, cfg, 0.99);
            let back = expmap0(&logmap0(&x), cfg).unwrap();
            for (a, b) in back.coords().iter().zip(x.coords()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn expmap_at_reduces_to_expmap0_and_fixes_zero() {
        let cfg = unit();
        let v = [0.2, -0.7];
        let a = expmap_at(&BallPoint::origin(2, cfg), &v).unwrap();
        let b = expmap0(&v, cfg).unwrap();
        for (x, y) in a.coords().iter().zip(b.coords()) {
            assert!((x - y).abs() < 1e-15);
        }
        let p = pt(&[0.3, 0.1], cfg);
        assert_eq!(expmap_at(&p, &[0.0, 0.0]).unwrap(), p);
    }

    #[test]
    fn expmap_at_has_metric_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cfg = BallConfig::new(rng.random_range(0.5..2.0)).unwrap();
            let p = random_point(&mut rng, 3, cfg, 0.8);
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = 1e-5;
            let tu: Vec<f64> = u.iter().map(|x| x * t).collect();
            let moved = expmap_at(&p, &tu).unwrap();
            let ratio = dist(&p, &moved).unwrap() / (t * conformal_factor(&p) * norm_sq(&u).sqrt());
            assert!((ratio - 1.0).abs() < 1e-4, "{ratio}");
        }
    }

    #[test]
    fn gyroplane_examples() {
        let cfg = unit();
        let origin = BallPoint::origin(2, cfg);
        let g = GyroplaneParams::new(origin.clone(), vec![1.0, 0.0]).unwrap();
        let x = pt(&[0.5, 0.0], cfg);
        let sd = gyroplane_sdist(&x, &g).unwrap();
        assert!((sd - (4.0f64 / 3.0).asinh()).abs() < 1e-14);
        assert!((sd - 1.0986123).abs() < 1e-7);
        assert!((gyroplane_affine(&x, &g).unwrap() - 2.0 * sd).abs() < 1e-14);

        let flipped = GyroplaneParams::new(origin, vec![-1.0, 0.0]).unwrap();
        assert!((gyroplane_sdist(&x, &flipped).unwrap() + sd).abs() < 1e-15);

        let p = pt(&[0.1, -0.3], cfg);
        let g = GyroplaneParams::new(p.clone(), vec![0.4, 0.9]).unwrap();
        assert_eq!(gyroplane_sdist(&p, &g).unwrap(), 0.0);

        let g2 = GyroplaneParams::new(p, vec![0.8, 1.8]).unwrap();
        let y = pt(&[-0.2, 0.5], cfg);
        let ratio = gyroplane_affine(&y, &g2).unwrap() / gyroplane_affine(&y, &g).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
        assert_eq!(
            gyroplane_sdist(&y, &g2).unwrap(),
            gyroplane_sdist(&y, &g).unwrap()
        );
    }

    #[test]
    fn zero_normal_rejected() {
        let cfg = unit();
        assert_eq!(
            GyroplaneParams::new(BallPoint::origin(2, cfg), vec![0.0, 0.0]),
            Err(PoincareError::ZeroNormal)
        );
    }

    #[test]
    fn projection_contract() {
        let cfg = unit();
        let x = [0.3, 0.4];
        assert_eq!(project_to_ball(&x, cfg).unwrap().coords(), &x);
        let far = project_to_ball(&[2.0, 0.0], cfg).unwrap();
        assert!((far.norm() - (1.0 - 1e-5)).abs() < 1e-15);
        let again = project_to_ball(far.coords(), cfg).unwrap();
        assert_eq!(again, far);
        assert!(project_to_ball(&[f64::INFINITY], cfg).is_err());
    }

    #[derive(serde::Deserialize)]
    struct Golden {
        c: f64,
        x: Vec<f64>,
        y: Vec<f64>,
        p: Vec<f64>,
        v: Vec<f64>,
        w: Vec<f64>,
        mobius_add: Vec<f64>,
        dist: f64,
        expmap0: Vec<f64>,
        logmap0: Vec<f64>,
        logit: f64,
    }

    fn close_all(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
    }

    /// High-precision reference values; see `tests/golden/generate.py`.
    #[test]
    fn kernels_match_high_precision_reference() {
        let cases: Vec<Golden> =
            serde_json::from_str(include_str!("../../tests/golden/poincare.json")).unwrap();
        assert_eq!(cases.len(), 36);
        for g in &cases {
            let cfg = BallConfig::new(g.c).unwrap();
            let (x, y) = (pt(&g.x, cfg), pt(&g.y, cfg));
            assert!(close_all(
                mobius_add(&x, &y).unwrap().coords(),
                &g.mobius_add,
                1e-13
            ));
            assert!(close_all(&[dist(&x, &y).unwrap()], &[g.dist], 1e-13));
            assert!(close_all(&[dist_gyro(&x, &y).unwrap()], &[g.dist], 1e-12));
            assert!(close_all(
                expmap0(&g.v, cfg).unwrap().coords(),
                &g.expmap0,
                1e-13
            ));
            assert!(close_all(&logmap0(&x), &g.logmap0, 1e-13));
            let plane = GyroplaneParams::new(pt(&g.p, cfg), g.w.clone()).unwrap();
            assert!(close_all(
                &[gyroplane_affine(&x, &plane).unwrap()],
                &[g.logit],
                1e-12
            ));

            let tape = crate::autodiff::Tape::new();
            let row = |v: &[f64]| {
                tape.constant(crate::autodiff::Tensor::matrix(1, v.len(), v.to_vec()).unwrap())
            };
            let logit = batched::gyroplane_logits(row(&g.x), row(&g.p), row(&g.w), cfg).unwrap();
            assert!(
                close_all(logit.value().data(), &[g.logit], 1e-12),
                "{} vs {}",
                logit.value().data()[0],
                g.logit
            );
            let sum = batched::mobius_add(row(&g.x), row(&g.y), cfg).unwrap();
            assert!(close_all(sum.value().data(), &g.mobius_add, 1e-13));
        }
    }
}

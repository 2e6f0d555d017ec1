//! Characteristics of the transport operator in advanced time `v`.
//!
//! Cartesian form: `dx/dv = p/p₀`, `dp/dv = (√(1+|p|²) E + p × B)/p₀` with `p₀ = √(1+|p|²) + p·k`.
//! Reduced radial form (B = 0, radial E): `dr/dv = w/p₀`, `dw/dv = (√(1+|p|²) E_r + q/r³)/p₀`,
//! with `q` a constant of motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(a: f64, x: &Vec3, y: &Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: Vec3,
    pub p: Vec3,
}

impl PhasePoint {
    pub fn new(x: Vec3, p: Vec3) -> Self {
        Self { x, p }
    }

    /// Unit radial vector `k = x/|x|`.
    pub fn k(&self) -> Result<Vec3> {
        let r = norm(&self.x);
        if !(r > 0.0) {
            return Err(Error::Origin { radius: r });
        }
        Ok([self.x[0] / r, self.x[1] / r, self.x[2] / r])
    }

    pub fn gamma(&self) -> f64 {
        (1.0 + dot(&self.p, &self.p)).sqrt()
    }

    /// `1 + p̂·k`
    pub fn one_plus_phat_k(&self) -> Result<f64> {
        Ok(1.0 + dot(&self.p, &self.k()?) / self.gamma())
    }

    /// `|x × p|²`
    pub fn angular_momentum_sq(&self) -> f64 {
        let l = cross(&self.x, &self.p);
        dot(&l, &l)
    }

    fn to_array(self) -> [f64; 6] {
        [self.x[0], self.x[1], self.x[2], self.p[0], self.p[1], self.p[2]]
    }

    fn from_array(a: &[f64; 6]) -> Self {
        Self {
            x: [a[0], a[1], a[2]],
            p: [a[3], a[4], a[5]],
        }
    }
}

/// Electromagnetic field `(E, B)` as a function of `(v, x)`.
pub trait FieldEvaluator {
    fn eval(&self, v: f64, x: &Vec3) -> (Vec3, Vec3);
}

impl<F: Fn(f64, &Vec3) -> (Vec3, Vec3)> FieldEvaluator for F {
    fn eval(&self, v: f64, x: &Vec3) -> (Vec3, Vec3) {
        self(v, x)
    }
}

/// Radial electric field `E_r(v, r)` for the reduced system.
pub trait RadialFieldFn {
    fn e_r(&self, v: f64, r: f64) -> Result<f64>;
}

impl<F: Fn(f64, f64) -> f64> RadialFieldFn for F {
    fn e_r(&self, v: f64, r: f64) -> Result<f64> {
        Ok(self(v, r))
    }
}

/// `E = charge · x/|x|³`, `B = 0`: the field outside a ball of total charge `4π·charge`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoulombField {
    pub charge: f64,
}

impl FieldEvaluator for CoulombField {
    fn eval(&self, _v: f64, x: &Vec3) -> (Vec3, Vec3) {
        let r = norm(x);
        let s = self.charge / (r * r * r);
        ([s * x[0], s * x[1], s * x[2]], [0.0; 3])
    }
}

impl RadialFieldFn for CoulombField {
    fn e_r(&self, _v: f64, r: f64) -> Result<f64> {
        Ok(self.charge / (r * r))
    }
}

pub fn char_rhs_cartesian(v: f64, pt: &PhasePoint, field: &dyn FieldEvaluator) -> Result<(Vec3, Vec3)> {
    let k = pt.k()?;
    let gamma = pt.gamma();
    let p0 = gamma + dot(&pt.p, &k);
    let (e, b) = field.eval(v, &pt.x);
    let pxb = cross(&pt.p, &b);
    let xdot = [pt.p[0] / p0, pt.p[1] / p0, pt.p[2] / p0];
    let pdot = [
        (gamma * e[0] + pxb[0]) / p0,
        (gamma * e[1] + pxb[1]) / p0,
        (gamma * e[2] + pxb[2]) / p0,
    ];
    Ok((xdot, pdot))
}

/// Returns `(dr/dv, dw/dv)`.
#[inline]
pub fn char_rhs_reduced(r: f64, w: f64, q: f64, e_r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::Origin { radius: r });
    }
    let gamma = (1.0 + w * w + q / (r * r)).sqrt();
    let p0 = gamma + w;
    Ok((w / p0, (gamma * e_r + q / (r * r * r)) / p0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Rk4,
    Midpoint,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Scheme::Rk4),
            "midpoint" => Ok(Scheme::Midpoint),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// One explicit step of size `h` for a system with `N` components.
pub(crate) fn rk_step<const N: usize>(
    scheme: Scheme,
    v: f64,
    y: &[f64; N],
    h: f64,
    rhs: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
) -> Result<[f64; N]> {
    let shifted = |y: &[f64; N], k: &[f64; N], a: f64| {
        let mut out = *y;
        for i in 0..N {
            out[i] += a * k[i];
        }
        out
    };
    match scheme {
        Scheme::Midpoint => {
            let k1 = rhs(v, y)?;
            let k2 = rhs(v + 0.5 * h, &shifted(y, &k1, 0.5 * h))?;
            Ok(shifted(y, &k2, h))
        }
        Scheme::Rk4 => {
            let k1 = rhs(v, y)?;
            let k2 = rhs(v + 0.5 * h, &shifted(y, &k1, 0.5 * h))?;
            let k3 = rhs(v + 0.5 * h, &shifted(y, &k2, 0.5 * h))?;
            let k4 = rhs(v + h, &shifted(y, &k3, h))?;
            let mut out = *y;
            for i in 0..N {
                out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            Ok(out)
        }
    }
}

/// Uniform substeps covering `[v_from, v_to]` with size at most `dv`.
pub(crate) fn substeps(v_from: f64, v_to: f64, dv: f64) -> Result<(usize, f64)> {
    if !(dv > 0.0) || !(v_to >= v_from) {
        return Err(Error::InvalidArgument(format!(
            "need dv > 0 and v_to >= v_from (dv = {dv}, [{v_from}, {v_to}])"
        )));
    }
    let span = v_to - v_from;
    if span == 0.0 {
        return Ok((0, 0.0));
    }
    let n = ((span / dv) - 1e-9).ceil().max(1.0) as usize;
    Ok((n, span / n as f64))
}

/// State of the reduced system; `q` is carried as an exact constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub r: f64,
    pub w: f64,
    pub q: f64,
}

impl ReducedState {
    pub fn energy(&self) -> f64 {
        (1.0 + self.w * self.w + self.q / (self.r * self.r)).sqrt()
    }
}

/// Default lower radius that a characteristic may reach before integration aborts.
pub const DEFAULT_R_FLOOR: f64 = 1e-10;

/// Advances a reduced state by exactly one step of size `h`.
#[inline]
pub fn step_reduced(
    state: ReducedState,
    field: &dyn RadialFieldFn,
    v: f64,
    h: f64,
    scheme: Scheme,
    r_floor: f64,
) -> Result<ReducedState> {
    let q = state.q;
    let mut rhs = |s: f64, y: &[f64; 2]| -> Result<[f64; 2]> {
        if !(y[0] > r_floor) {
            return Err(Error::AxisReached {
                radius: y[0],
                floor: r_floor,
                v: s,
            });
        }
        let (dr, dw) = char_rhs_reduced(y[0], y[1], q, field.e_r(s, y[0])?)?;
        Ok([dr, dw])
    };
    let y = rk_step(scheme, v, &[state.r, state.w], h, &mut rhs)?;
    if !(y[0] > r_floor) {
        return Err(Error::AxisReached {
            radius: y[0],
            floor: r_floor,
            v: v + h,
        });
    }
    Ok(ReducedState { r: y[0], w: y[1], q })
}

pub fn integrate_reduced(
    state: ReducedState,
    field: &dyn RadialFieldFn,
    v_from: f64,
    v_to: f64,
    dv: f64,
    scheme: Scheme,
    r_floor: f64,
) -> Result<ReducedState> {
    let (n, h) = substeps(v_from, v_to, dv)?;
    let mut s = state;
    for i in 0..n {
        s = step_reduced(s, field, v_from + i as f64 * h, h, scheme, r_floor)?;
    }
    Ok(s)
}

/// One row of a stored reduced trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub v: f64,
    pub r: f64,
    pub w: f64,
    pub q: f64,
    pub e_r: f64,
}

/// Integrates like [`integrate_reduced`] and records every step, endpoints included.
pub fn trace_reduced(
    state: ReducedState,
    field: &dyn RadialFieldFn,
    v_from: f64,
    v_to: f64,
    dv: f64,
    scheme: Scheme,
    r_floor: f64,
) -> Result<Vec<TrajectorySample>> {
    let (n, h) = substeps(v_from, v_to, dv)?;
    let mut s = state;
    let mut out = Vec::with_capacity(n + 1);
    out.push(TrajectorySample {
        v: v_from,
        r: s.r,
        w: s.w,
        q: s.q,
        e_r: field.e_r(v_from, s.r)?,
    });
    for i in 0..n {
        s = step_reduced(s, field, v_from + i as f64 * h, h, scheme, r_floor)?;
        let v = v_from + (i + 1) as f64 * h;
        out.push(TrajectorySample {
            v,
            r: s.r,
            w: s.w,
            q: s.q,
            e_r: field.e_r(v, s.r)?,
        });
    }
    Ok(out)
}

pub fn integrate_cartesian(
    pt: PhasePoint,
    field: &dyn FieldEvaluator,
    v_from: f64,
    v_to: f64,
    dv: f64,
    scheme: Scheme,
) -> Result<PhasePoint> {
    let (n, h) = substeps(v_from, v_to, dv)?;
    let mut rhs = |s: f64, y: &[f64; 6]| -> Result<[f64; 6]> {
        let (xd, pd) = char_rhs_cartesian(s, &PhasePoint::from_array(y), field)?;
        Ok([xd[0], xd[1], xd[2], pd[0], pd[1], pd[2]])
    };
    let mut y = pt.to_array();
    for i in 0..n {
        y = rk_step(scheme, v_from + i as f64 * h, &y, h, &mut rhs)?;
    }
    Ok(PhasePoint::from_array(&y))
}

/// Closed-form phase-space divergence of the characteristic vector field:
/// `-(1+p̂·k)⁻² [ |p̂×k|²/|x| + (E·(k - (p̂·k)p̂) - (p̂×k)·B)/√(1+|p|²) ]`.
pub fn phase_divergence(v: f64, pt: &PhasePoint, field: &dyn FieldEvaluator) -> Result<f64> {
    let k = pt.k()?;
    let r = norm(&pt.x);
    let gamma = pt.gamma();
    let p_hat = [pt.p[0] / gamma, pt.p[1] / gamma, pt.p[2] / gamma];
    let phk = dot(&p_hat, &k);
    let pxk = cross(&p_hat, &k);
    let (e, b) = field.eval(v, &pt.x);
    let tangential = axpy(-phk, &p_hat, &k);
    let bracket = dot(&pxk, &pxk) / r + (dot(&e, &tangential) - dot(&pxk, &b)) / gamma;
    Ok(-bracket / ((1.0 + phk) * (1.0 + phk)))
}

/// Flow-map Jacobian determinant `det ∂(X,P)(v_to)/∂(x,p)` by central differences on the
/// 12 perturbed trajectories; perturbations are `h_fd · max(1, |z_i|)`.
pub fn flow_jacobian_det(
    pt: &PhasePoint,
    field: &dyn FieldEvaluator,
    v_from: f64,
    v_to: f64,
    dv: f64,
    h_fd: f64,
    scheme: Scheme,
) -> Result<f64> {
    if !(h_fd > 0.0) {
        return Err(Error::InvalidArgument(format!("h_fd must be positive, got {h_fd}")));
    }
    let base = pt.to_array();
    let mut jac = nalgebra::Matrix6::<f64>::zeros();
    for col in 0..6 {
        let h = h_fd * base[col].abs().max(1.0);
        let mut plus = base;
        let mut minus = base;
        plus[col] += h;
        minus[col] -= h;
        let fp = integrate_cartesian(PhasePoint::from_array(&plus), field, v_from, v_to, dv, scheme)?.to_array();
        let fm = integrate_cartesian(PhasePoint::from_array(&minus), field, v_from, v_to, dv, scheme)?.to_array();
        for row in 0..6 {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok(jac.determinant())
}

/// `(1 + p̂·k)` at the start over `(1 + P̂·K)` at the end of a characteristic.
pub fn jacobian_closed_form(start: &PhasePoint, end: &PhasePoint) -> Result<f64> {
    Ok(start.one_plus_phat_k()? / end.one_plus_phat_k()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_field(_: f64, _: &Vec3) -> (Vec3, Vec3) {
        ([0.0; 3], [0.0; 3])
    }

    #[test]
    fn free_rest_and_free_streaming() {
        let rest = PhasePoint::new([1.0, 2.0, 0.5], [0.0; 3]);
        assert_eq!(char_rhs_cartesian(0.0, &rest, &no_field).unwrap(), ([0.0; 3], [0.0; 3]));

        let pt = PhasePoint::new([1.0, 0.0, 0.0], [0.75, 0.0, 0.0]);
        let (xd, pd) = char_rhs_cartesian(0.0, &pt, &no_field).unwrap();
        assert!((xd[0] - 0.375).abs() < 1e-15 && xd[1] == 0.0 && xd[2] == 0.0);
        assert_eq!(pd, [0.0; 3]);

        let (dr, dw) = char_rhs_reduced(1.0, 0.75, 0.0, 0.0).unwrap();
        assert!((dr - 0.375).abs() < 1e-15);
        assert_eq!(dw, 0.0);
    }

    #[test]
    fn origin_is_a_domain_error() {
        let pt = PhasePoint::new([0.0; 3], [0.1, 0.0, 0.0]);
        assert!(matches!(
            char_rhs_cartesian(0.0, &pt, &no_field),
            Err(Error::Origin { .. })
        ));
        assert!(matches!(
            phase_divergence(0.0, &pt, &no_field),
            Err(Error::Origin { .. })
        ));
        assert!(matches!(
            char_rhs_reduced(0.0, 0.1, 0.1, 0.0),
            Err(Error::Origin { .. })
        ));
        assert!(char_rhs_reduced(-1.0, 0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn centrifugal_term_pushes_outward() {
        let (r, q) = (0.7, 0.3);
        let (dr, dw) = char_rhs_reduced(r, 0.0, q, 0.0).unwrap();
        assert_eq!(dr, 0.0);
        let expected = q / (r * r * r) / (1.0 + q / (r * r)).sqrt();
        assert!(dw > 0.0 && (dw - expected).abs() < 1e-15);
    }

    /// Independent transcription of the Cartesian characteristic formula.
    fn duplicate_rhs(x: Vec3, p: Vec3, e: Vec3, b: Vec3) -> (Vec3, Vec3) {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let g = (1.0 + p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let p0 = g + (p[0] * x[0] + p[1] * x[1] + p[2] * x[2]) / r;
        let f = [
            g * e[0] + p[1] * b[2] - p[2] * b[1],
            g * e[1] + p[2] * b[0] - p[0] * b[2],
            g * e[2] + p[0] * b[1] - p[1] * b[0],
        ];
        ([p[0] / p0, p[1] / p0, p[2] / p0], [f[0] / p0, f[1] / p0, f[2] / p0])
    }

    #[test]
    fn cartesian_rhs_matches_duplicate_formula() {
        let field = CoulombField { charge: 0.8 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.3..2.0),
            ];
            let p = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let (xd, pd) = char_rhs_cartesian(0.0, &PhasePoint::new(x, p), &field).unwrap();
            let (e, b) = field.eval(0.0, &x);
            let (xo, po) = duplicate_rhs(x, p, e, b);
            for i in 0..3 {
                assert!((xd[i] - xo[i]).abs() <= 1e-14 * (1.0 + xo[i].abs()));
                assert!((pd[i] - po[i]).abs() <= 1e-14 * (1.0 + po[i].abs()));
            }
        }
    }

    #[test]
    fn reduced_rhs_matches_embedded_cartesian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let r: f64 = rng.gen_range(0.1..5.0);
            let w: f64 = rng.gen_range(-3.0..3.0);
            let q: f64 = rng.gen_range(0.0..4.0);
            let e_r: f64 = rng.gen_range(-2.0..2.0);
            let (dr, dw) = char_rhs_reduced(r, w, q, e_r).unwrap();
            let pt = PhasePoint::new([r, 0.0, 0.0], [w, q.sqrt() / r, 0.0]);
            let field = move |_: f64, x: &Vec3| {
                let s = e_r / norm(x);
                ([s * x[0], s * x[1], s * x[2]], [0.0; 3])
            };
            let (xd, pd) = char_rhs_cartesian(0.0, &pt, &field).unwrap();
            // d|x|/dv = k·ẋ and d(p·k)/dv = k·ṗ + p·(dk/dv), dk/dv = (ẋ - (k·ẋ)k)/r
            let k = [1.0, 0.0, 0.0];
            let dr_cart = dot(&k, &xd);
            let dk = [0.0, xd[1] / r, xd[2] / r];
            let dw_cart = dot(&k, &pd) + dot(&pt.p, &dk);
            assert!((dr - dr_cart).abs() < 1e-14 * (1.0 + dr.abs()));
            assert!((dw - dw_cart).abs() < 1e-14 * (1.0 + dw.abs()), "{dw} vs {dw_cart}");
        }
    }

    #[test]
    fn free_streaming_reaches_closed_form() {
        let s = ReducedState {
            r: 1.0,
            w: 0.75,
            q: 0.0,
        };
        let zero = |_: f64, _: f64| 0.0;
        for scheme in [Scheme::Rk4, Scheme::Midpoint] {
            let end = integrate_reduced(s, &zero, 0.0, 8.0, 0.01, scheme, DEFAULT_R_FLOOR).unwrap();
            assert!((end.r - 4.0).abs() < 1e-12, "{}", end.r);
            assert_eq!(end.w, 0.75);
            assert_eq!(end.q, 0.0);
        }
    }

    #[test]
    fn reaching_the_floor_is_an_error() {
        let s = ReducedState {
            r: 0.5,
            w: -0.9,
            q: 0.0,
        };
        let zero = |_: f64, _: f64| 0.0;
        let err = integrate_reduced(s, &zero, 0.0, 10.0, 0.01, Scheme::Rk4, 1e-3);
        assert!(matches!(err, Err(Error::AxisReached { .. })));
    }

    #[test]
    fn rk4_self_convergence_is_fourth_order() {
        let field = CoulombField { charge: 0.4 };
        let s = ReducedState {
            r: 1.0,
            w: -0.4,
            q: 0.3,
        };
        let run = |dv: f64| integrate_reduced(s, &field, 0.0, 3.0, dv, Scheme::Rk4, DEFAULT_R_FLOOR).unwrap();
        let (a, b, c) = (run(0.04), run(0.02), run(0.01));
        let ratio = (a.r - b.r).abs() / (b.r - c.r).abs();
        assert!((ratio - 16.0).abs() < 2.5, "ratio {ratio}");
    }

    #[test]
    fn kinetic_energy_gain_equals_work() {
        // d√(1+p²)/dv = E_r dr/dv along the characteristic
        let field = |_: f64, r: f64| 0.3 / (r * r) + 0.05 * r;
        let s = ReducedState {
            r: 0.8,
            w: -0.5,
            q: 0.2,
        };
        let traj = trace_reduced(s, &field, 0.0, 4.0, 1e-3, Scheme::Rk4, DEFAULT_R_FLOOR).unwrap();
        let mut work = 0.0;
        for pair in traj.windows(2) {
            // trapezoid in v of E_r · dr/dv
            let rate = |t: &TrajectorySample| t.e_r * char_rhs_reduced(t.r, t.w, t.q, t.e_r).unwrap().0;
            work += 0.5 * (pair[1].v - pair[0].v) * (rate(&pair[0]) + rate(&pair[1]));
        }
        let first = traj.first().unwrap();
        let last = traj.last().unwrap();
        let gain = ReducedState {
            r: last.r,
            w: last.w,
            q: last.q,
        }
        .energy()
            - ReducedState {
                r: first.r,
                w: first.w,
                q: first.q,
            }
            .energy();
        assert!((gain - work).abs() < 1e-6, "gain {gain} work {work}");
    }

    #[test]
    fn cartesian_integration_keeps_angular_momentum() {
        let field = CoulombField { charge: 0.5 };
        let pt = PhasePoint::new([1.0, 0.2, -0.1], [0.1, 0.6, 0.3]);
        let q0 = pt.angular_momentum_sq();
        let end = integrate_cartesian(pt, &field, 0.0, 1.0, 1e-3, Scheme::Rk4).unwrap();
        assert!((end.angular_momentum_sq() - q0).abs() <= 1e-8);
    }

    #[test]
    fn divergence_special_cases() {
        let radial = PhasePoint::new([0.0, 2.0, 0.0], [0.0, 1.5, 0.0]);
        assert!(phase_divergence(0.0, &radial, &no_field).unwrap().abs() < 1e-16);

        let tangential = PhasePoint::new([2.0, 0.0, 0.0], [0.0, 0.0, 1.2]);
        let g2 = 1.0 + 1.44;
        let expected = -(1.44 / g2) / 2.0;
        assert!((phase_divergence(0.0, &tangential, &no_field).unwrap() - expected).abs() < 1e-15);
    }

    fn fd_divergence(v: f64, pt: &PhasePoint, field: &dyn FieldEvaluator, h: f64) -> f64 {
        let y = pt.to_array();
        let mut div = 0.0;
        for i in 0..6 {
            let mut a = y;
            let mut b = y;
            a[i] += h;
            b[i] -= h;
            let fa = char_rhs_cartesian(v, &PhasePoint::from_array(&a), field).unwrap();
            let fb = char_rhs_cartesian(v, &PhasePoint::from_array(&b), field).unwrap();
            let comp = |f: &(Vec3, Vec3)| if i < 3 { f.0[i] } else { f.1[i - 3] };
            div += (comp(&fa) - comp(&fb)) / (2.0 * h);
        }
        div
    }

    #[test]
    fn divergence_matches_finite_differences_with_magnetic_field() {
        let field = |_: f64, x: &Vec3| {
            let r = norm(x);
            (
                [
                    0.4 * x[0] / r.powi(3) + 0.1,
                    0.4 * x[1] / r.powi(3),
                    0.4 * x[2] / r.powi(3),
                ],
                [0.2, -0.3, 0.5],
            )
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = [
                rng.gen_range(0.5..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let p = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let pt = PhasePoint::new(x, p);
            let closed = phase_divergence(0.0, &pt, &field).unwrap();
            let fd = fd_divergence(0.0, &pt, &field, 1e-5);
            assert!((closed - fd).abs() < 1e-7, "{closed} vs {fd}");
        }
    }

    #[test]
    fn jacobian_identity_cases() {
        let field = CoulombField { charge: 0.3 };
        let pt = PhasePoint::new([1.0, 0.0, 0.0], [0.2, 0.5, 0.0]);
        let same = flow_jacobian_det(&pt, &field, 0.0, 0.0, 1e-3, 1e-4, Scheme::Rk4).unwrap();
        assert!((same - 1.0).abs() < 1e-12);

        let radial = PhasePoint::new([1.0, 0.0, 0.0], [0.6, 0.0, 0.0]);
        let det = flow_jacobian_det(&radial, &no_field, 0.0, 1.0, 1e-3, 1e-4, Scheme::Rk4).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");

        let det = flow_jacobian_det(&pt, &field, 0.0, 1.0, 1e-3, 1e-4, Scheme::Rk4).unwrap();
        let end = integrate_cartesian(pt, &field, 0.0, 1.0, 1e-3, Scheme::Rk4).unwrap();
        let closed = jacobian_closed_form(&pt, &end).unwrap();
        assert!((det - closed).abs() < 1e-5, "{det} vs {closed}");
        assert!((closed - 1.0).abs() > 1e-3, "orbit should change 1 + p̂·k");
    }
}

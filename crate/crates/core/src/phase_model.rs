//! Initial data on the past light cone `v = 0` and deterministic macroparticle sampling.
//!
//! A spherically symmetric density is written in the reduced variables `(r, w, q)` with
//! `r = |x|`, `w = p·k` and `q = |x × p|²`. In these variables `d³x d³p = 4π² dr dw dq`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form density profiles. All are products of compactly supported C¹ factors in `(r, w, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    ShellPolynomial {
        r_in: f64,
        r_out: f64,
        w_min: f64,
        w_max: f64,
        q_min: f64,
        q_max: f64,
        amplitude: f64,
    },
    ShellGaussian {
        r_center: f64,
        r_sigma: f64,
        w_center: f64,
        w_sigma: f64,
        q_center: f64,
        q_sigma: f64,
        amplitude: f64,
        cutoff: f64,
    },
}

/// Closed interval in one reduced coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn contains_open(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// Box in `(r, w, q)` outside of which the density vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub r: Interval,
    pub w: Interval,
    pub q: Interval,
}

/// Initial density on the cone `v = 0` together with exact support descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDatum {
    pub profile: Profile,
    pub support: SupportBox,
    /// Spatial support radius `R0`.
    pub r0: f64,
    /// Momentum support radius `P0`.
    pub p0: f64,
    /// Infimum `F` of `q = |x × p|²` over the support.
    pub min_angular_sq: f64,
    /// Supremum of the density.
    pub f_inf_norm: f64,
}

/// `(4 s (1 - s))²` on `[a, b]` with `s = (x - a)/(b - a)`; C¹, maximum 1 at the midpoint.
fn bump(x: f64, a: f64, b: f64) -> f64 {
    if x <= a || x >= b {
        return 0.0;
    }
    let s = (x - a) / (b - a);
    let t = 4.0 * s * (1.0 - s);
    t * t
}

/// Gaussian factor tapered by `(1 - (s/k)²)²`; C¹ with support `|s| < k`.
fn tapered_gaussian(x: f64, center: f64, sigma: f64, cutoff: f64) -> f64 {
    let s = (x - center) / sigma;
    if s.abs() >= cutoff {
        return 0.0;
    }
    let taper = 1.0 - (s / cutoff).powi(2);
    (-0.5 * s * s).exp() * taper * taper
}

impl InitialDatum {
    pub fn zero() -> Self {
        let empty = Interval::new(0.0, 0.0);
        Self {
            profile: Profile::Zero,
            support: SupportBox {
                r: empty,
                w: empty,
                q: empty,
            },
            r0: 0.0,
            p0: 0.0,
            min_angular_sq: 1.0,
            f_inf_norm: 0.0,
        }
    }

    pub fn from_profile(profile: Profile) -> Result<Self> {
        let reject = |name: &str, reason: String| Error::InvalidDatum {
            name: name.to_string(),
            reason,
        };
        let (name, support, amplitude) = match profile {
            Profile::Zero => return Ok(Self::zero()),
            Profile::ShellPolynomial {
                r_in,
                r_out,
                w_min,
                w_max,
                q_min,
                q_max,
                amplitude,
            } => (
                "shell_polynomial",
                SupportBox {
                    r: Interval::new(r_in, r_out),
                    w: Interval::new(w_min, w_max),
                    q: Interval::new(q_min, q_max),
                },
                amplitude,
            ),
            Profile::ShellGaussian {
                r_center,
                r_sigma,
                w_center,
                w_sigma,
                q_center,
                q_sigma,
                amplitude,
                cutoff,
            } => {
                if !(cutoff > 0.0) || !(r_sigma > 0.0) || !(w_sigma > 0.0) || !(q_sigma > 0.0) {
                    return Err(reject("shell_gaussian", "widths and cutoff must be positive".into()));
                }
                (
                    "shell_gaussian",
                    SupportBox {
                        r: Interval::new(r_center - cutoff * r_sigma, r_center + cutoff * r_sigma),
                        w: Interval::new(w_center - cutoff * w_sigma, w_center + cutoff * w_sigma),
                        q: Interval::new(q_center - cutoff * q_sigma, q_center + cutoff * q_sigma),
                    },
                    amplitude,
                )
            }
        };
        let all = [
            support.r.lo,
            support.r.hi,
            support.w.lo,
            support.w.hi,
            support.q.lo,
            support.q.hi,
            amplitude,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(reject(name, "parameters must be finite".into()));
        }
        if support.r.width() <= 0.0 || support.w.width() <= 0.0 || support.q.width() <= 0.0 {
            return Err(reject(name, "empty support interval".into()));
        }
        if support.r.lo <= 0.0 {
            return Err(reject(name, format!("inner radius {} must be positive", support.r.lo)));
        }
        if support.q.lo <= 0.0 {
            return Err(reject(
                name,
                format!("angular momentum floor F = {} must be positive", support.q.lo),
            ));
        }
        if amplitude <= 0.0 {
            return Err(reject(name, "amplitude must be positive".into()));
        }
        let w_extreme = support.w.lo.abs().max(support.w.hi.abs());
        Ok(Self {
            profile,
            support,
            r0: support.r.hi,
            p0: (w_extreme * w_extreme + support.q.hi / (support.r.lo * support.r.lo)).sqrt(),
            min_angular_sq: support.q.lo,
            // every factor peaks at exactly 1
            f_inf_norm: amplitude,
        })
    }

    pub fn density(&self, r: f64, w: f64, q: f64) -> f64 {
        match self.profile {
            Profile::Zero => 0.0,
            Profile::ShellPolynomial {
                r_in,
                r_out,
                w_min,
                w_max,
                q_min,
                q_max,
                amplitude,
            } => amplitude * bump(r, r_in, r_out) * bump(w, w_min, w_max) * bump(q, q_min, q_max),
            Profile::ShellGaussian {
                r_center,
                r_sigma,
                w_center,
                w_sigma,
                q_center,
                q_sigma,
                amplitude,
                cutoff,
            } => {
                let s = &self.support;
                if !(s.r.contains_open(r) && s.w.contains_open(w) && s.q.contains_open(q)) {
                    return 0.0;
                }
                amplitude
                    * tapered_gaussian(r, r_center, r_sigma, cutoff)
                    * tapered_gaussian(w, w_center, w_sigma, cutoff)
                    * tapered_gaussian(q, q_center, q_sigma, cutoff)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.profile, Profile::Zero)
    }
}

/// Builds one of the named profiles from a flat parameter list.
///
/// * `zero`: no parameters.
/// * `shell_polynomial`: `[r_in, r_out, w_min, w_max, q_min, q_max, amplitude]`.
/// * `shell_gaussian`: `[r_center, r_sigma, w_center, w_sigma, q_center, q_sigma, amplitude, cutoff]`,
///   where `cutoff` is the support half-width in units of sigma.
pub fn builtin_datum(name: &str, params: &[f64]) -> Result<InitialDatum> {
    let expect = |n: usize| -> Result<()> {
        if params.len() != n {
            return Err(Error::InvalidDatum {
                name: name.to_string(),
                reason: format!("expected {n} parameters, got {}", params.len()),
            });
        }
        Ok(())
    };
    let profile = match name {
        "zero" => {
            expect(0)?;
            Profile::Zero
        }
        "shell_polynomial" => {
            expect(7)?;
            Profile::ShellPolynomial {
                r_in: params[0],
                r_out: params[1],
                w_min: params[2],
                w_max: params[3],
                q_min: params[4],
                q_max: params[5],
                amplitude: params[6],
            }
        }
        "shell_gaussian" => {
            expect(8)?;
            Profile::ShellGaussian {
                r_center: params[0],
                r_sigma: params[1],
                w_center: params[2],
                w_sigma: params[3],
                q_center: params[4],
                q_sigma: params[5],
                amplitude: params[6],
                cutoff: params[7],
            }
        }
        other => return Err(Error::UnknownDatum(other.to_string())),
    };
    InitialDatum::from_profile(profile)
}

/// One characteristic of the reduced radial system.
///
/// `weight` approximates `f (1 + p̂·k) d³x d³p` over the sampled cell and is constant along the
/// flow, as are `q` and `f_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Macroparticle {
    pub r: f64,
    pub w: f64,
    pub q: f64,
    pub weight: f64,
    pub f_value: f64,
}

impl Macroparticle {
    /// `|p|² = w² + q / r²`
    #[inline]
    pub fn p_sq(&self) -> f64 {
        self.w * self.w + self.q / (self.r * self.r)
    }

    /// `√(1 + |p|²)`
    #[inline]
    pub fn energy(&self) -> f64 {
        (1.0 + self.p_sq()).sqrt()
    }

    /// `p̂·k`
    #[inline]
    pub fn p_hat_k(&self) -> f64 {
        self.w / self.energy()
    }

    /// `p₀ = √(1 + |p|²) + p·k`
    #[inline]
    pub fn p0(&self) -> f64 {
        self.energy() + self.w
    }

    /// Checks `1 + p̂·k >= (1/2)/(1 + |p|²)`.
    pub fn satisfies_cone_estimate(&self) -> bool {
        cone_estimate_holds(self.w, self.p_sq())
    }
}

/// `1 + p̂·k >= (1/2)/(1 + |p|²)` for a momentum with radial part `w` and squared norm `p_sq`.
pub fn cone_estimate_holds(w: f64, p_sq: f64) -> bool {
    let gamma = (1.0 + p_sq).sqrt();
    // relative slack for the rounding in 1 + p̂·k when w is large and negative
    1.0 + w / gamma >= 0.5 / (1.0 + p_sq) * (1.0 - 1e-9)
}

/// Midpoint tensor-grid sampling over the support box of `datum`.
pub fn sample_particles(datum: &InitialDatum, resolution: [usize; 3]) -> Result<Vec<Macroparticle>> {
    if resolution.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument(format!(
            "sampling resolution must be at least 2 per coordinate, got {resolution:?}"
        )));
    }
    if datum.is_zero() {
        return Ok(Vec::new());
    }
    let s = &datum.support;
    let [nr, nw, nq] = resolution;
    let (dr, dw, dq) = (
        s.r.width() / nr as f64,
        s.w.width() / nw as f64,
        s.q.width() / nq as f64,
    );
    let cell = 4.0 * PI * PI * dr * dw * dq;
    let prune = 1e-14 * datum.f_inf_norm;

    let mut particles = Vec::with_capacity(nr * nw * nq);
    for i in 0..nr {
        let r = s.r.lo + (i as f64 + 0.5) * dr;
        for j in 0..nw {
            let w = s.w.lo + (j as f64 + 0.5) * dw;
            for l in 0..nq {
                let q = s.q.lo + (l as f64 + 0.5) * dq;
                let f = datum.density(r, w, q);
                if f <= prune {
                    continue;
                }
                let mut p = Macroparticle {
                    r,
                    w,
                    q,
                    weight: 0.0,
                    f_value: f,
                };
                p.weight = f * (1.0 + p.p_hat_k()) * cell;
                if !p.satisfies_cone_estimate() {
                    return Err(Error::Invariant {
                        step: 0,
                        what: format!("cone estimate fails for sampled particle {p:?}"),
                    });
                }
                particles.push(p);
            }
        }
    }
    Ok(particles)
}

/// Total weight `Σ ω_i`, the particle estimate of the past-cone mass.
pub fn total_weight(particles: &[Macroparticle]) -> f64 {
    particles.iter().map(|p| p.weight).sum()
}

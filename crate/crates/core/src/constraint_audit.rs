//! Finite-difference audit of the characteristic constraint equations on gridded 3D field data.
//!
//! With `k = x/|x|` the constraints are written through
//!
//! * `W₁ = k×(∇×B) − k(∇·B) + ∇×E − k×j`
//! * `W₂ = ∇×B + k(∇·E) − k×(∇×E) − ρk − j`
//! * `S₁ = ∇·B − k·∇×E`, `S₂ = k·∇×B + ∇·E − ρ − j·k`
//!
//! and the identities `W₁ = k×W₂ − kS₁`, `W₂ = −k×W₁ + kS₂` tie them together. All derivatives
//! come from one set of second-order central differences per node, so the identities are exact up
//! to rounding.

use std::f64::consts::PI;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::{cross, dot, norm, Vec3};
use crate::error::{Error, Result};
use crate::evolver::SliceHistory;
use crate::radial_field::{MomentProfiles, ShellGrid};

/// Field samples on a uniform Cartesian grid, node-major with `x` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedFieldSet {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: Vec3,
    /// Nodes with `|x| <= r_cut` are not audited.
    pub r_cut: f64,
    pub e: Vec<Vec3>,
    pub b: Vec<Vec3>,
    pub rho: Vec<f64>,
    pub j: Vec<Vec3>,
}

/// Values at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeSample {
    pub e: Vec3,
    pub b: Vec3,
    pub rho: f64,
    pub j: Vec3,
}

impl GriddedFieldSet {
    /// Samples `f` at every node.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: f64,
        origin: Vec3,
        r_cut: f64,
        f: impl Fn(Vec3) -> NodeSample + Sync,
    ) -> Result<Self> {
        check_geometry(dims, spacing, r_cut)?;
        let n = dims[0] * dims[1] * dims[2];
        let node = |i: usize| f(position(dims, spacing, origin, i));
        #[cfg(feature = "parallel")]
        let samples: Vec<NodeSample> = (0..n).into_par_iter().map(node).collect();
        #[cfg(not(feature = "parallel"))]
        let samples: Vec<NodeSample> = (0..n).map(node).collect();
        Ok(Self {
            dims,
            spacing,
            origin,
            r_cut,
            e: samples.iter().map(|s| s.e).collect(),
            b: samples.iter().map(|s| s.b).collect(),
            rho: samples.iter().map(|s| s.rho).collect(),
            j: samples.iter().map(|s| s.j).collect(),
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: f64, origin: Vec3, r_cut: f64) -> Result<Self> {
        Self::from_fn(dims, spacing, origin, r_cut, |_| NodeSample::default())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.dims[1] + ijk[1]) * self.dims[2] + ijk[2]
    }

    pub fn node(&self, idx: usize) -> [usize; 3] {
        let [_, ny, nz] = self.dims;
        [idx / (ny * nz), (idx / nz) % ny, idx % nz]
    }

    pub fn position(&self, idx: usize) -> Vec3 {
        position(self.dims, self.spacing, self.origin, idx)
    }

    pub fn validate(&self) -> Result<()> {
        check_geometry(self.dims, self.spacing, self.r_cut)?;
        let n = self.len();
        if self.e.len() != n || self.b.len() != n || self.rho.len() != n || self.j.len() != n {
            return Err(Error::InvalidArgument(format!(
                "field arrays must all have {n} entries for dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Interior nodes outside the excluded ball, in index order.
    pub fn audited_nodes(&self) -> Vec<usize> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::new();
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                for k in 1..nz - 1 {
                    let idx = self.index([i, j, k]);
                    if norm(&self.position(idx)) > self.r_cut {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    fn derivatives(&self, idx: usize) -> Derivatives {
        let [_, ny, nz] = self.dims;
        let strides = [ny * nz, nz, 1];
        let inv = 0.5 / self.spacing;
        // jac[a][c] = ∂_c F_a
        let jacobian = |f: &[Vec3]| {
            let mut m = [[0.0; 3]; 3];
            for (c, s) in strides.iter().enumerate() {
                let (p, q) = (&f[idx + s], &f[idx - s]);
                for a in 0..3 {
                    m[a][c] = (p[a] - q[a]) * inv;
                }
            }
            m
        };
        let (je, jb) = (jacobian(&self.e), jacobian(&self.b));
        let div = |m: &[[f64; 3]; 3]| m[0][0] + m[1][1] + m[2][2];
        let curl = |m: &[[f64; 3]; 3]| [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
        Derivatives {
            div_e: div(&je),
            curl_e: curl(&je),
            div_b: div(&jb),
            curl_b: curl(&jb),
        }
    }

    fn residuals(&self, idx: usize) -> NodeResiduals {
        let x = self.position(idx);
        let r = norm(&x);
        let k = [x[0] / r, x[1] / r, x[2] / r];
        let d = self.derivatives(idx);
        let (rho, j) = (self.rho[idx], self.j[idx]);
        let k_curl_b = cross(&k, &d.curl_b);
        let k_curl_e = cross(&k, &d.curl_e);
        let k_j = cross(&k, &j);
        let w1 = [0, 1, 2].map(|a| k_curl_b[a] - k[a] * d.div_b + d.curl_e[a] - k_j[a]);
        let w2 = [0, 1, 2].map(|a| d.curl_b[a] + k[a] * d.div_e - k_curl_e[a] - rho * k[a] - j[a]);
        let s1 = d.div_b - dot(&k, &d.curl_e);
        let s2 = dot(&k, &d.curl_b) + d.div_e - rho - dot(&j, &k);
        let k_w1 = cross(&k, &w1);
        let k_w2 = cross(&k, &w2);
        // the identities recombined from the residuals
        let id1 = [0, 1, 2].map(|a| w1[a] - (k_w2[a] - k[a] * s1));
        let id2 = [0, 1, 2].map(|a| w2[a] - (-k_w1[a] + k[a] * s2));
        // both recombinations pass through every term
        let scale = norm(&d.curl_b) + d.div_b.abs() + norm(&d.curl_e) + d.div_e.abs() + rho.abs() + norm(&j);
        NodeResiduals {
            w1,
            w2,
            s1,
            s2,
            k_w1,
            k_w2,
            id1,
            id2,
            scale,
        }
    }

    fn map_audited<T: Send>(&self, f: impl Fn(usize) -> T + Sync) -> Result<(Vec<usize>, Vec<T>)> {
        self.validate()?;
        let nodes = self.audited_nodes();
        #[cfg(feature = "parallel")]
        let values = nodes.par_iter().map(|&i| f(i)).collect();
        #[cfg(not(feature = "parallel"))]
        let values = nodes.iter().map(|&i| f(i)).collect();
        Ok((nodes, values))
    }

    /// Little-endian binary encoding; see [`GriddedFieldSet::from_bytes`].
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * 10 * 8);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in [self.spacing, self.origin[0], self.origin[1], self.origin[2], self.r_cut] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for i in 0..self.len() {
            let (e, b, j) = (self.e[i], self.b[i], self.j[i]);
            for x in [e[0], e[1], e[2], b[0], b[1], b[2], self.rho[i], j[0], j[1], j[2]] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Layout: magic `VMLCGRID`, `u32` version (1), three `u32` node counts, `f64` spacing, three
    /// `f64` origin coordinates, `f64` r_cut, then per node (x slowest, z fastest) the ten `f64`
    /// values `Ex Ey Ez Bx By Bz rho jx jy jz`. Everything little-endian.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != GRID_MAGIC {
            return Err("not a field grid file (bad magic)".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != GRID_VERSION {
            return Err(format!("unsupported grid file version {version}"));
        }
        let dims = [u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize];
        let spacing = f64_at(24);
        let origin = [f64_at(32), f64_at(40), f64_at(48)];
        let r_cut = f64_at(56);
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("node count overflows")?;
        let expected = n
            .checked_mul(80)
            .and_then(|x| x.checked_add(HEADER_LEN))
            .ok_or("node count overflows")?;
        if bytes.len() != expected {
            return Err(format!(
                "expected {expected} bytes for dims {dims:?}, found {}",
                bytes.len()
            ));
        }
        let mut set = Self {
            dims,
            spacing,
            origin,
            r_cut,
            e: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
            rho: Vec::with_capacity(n),
            j: Vec::with_capacity(n),
        };
        for i in 0..n {
            let o = HEADER_LEN + i * 80;
            let v: [f64; 10] = std::array::from_fn(|c| f64_at(o + 8 * c));
            set.e.push([v[0], v[1], v[2]]);
            set.b.push([v[3], v[4], v[5]]);
            set.rho.push(v[6]);
            set.j.push([v[7], v[8], v[9]]);
        }
        set.validate().map_err(|e| e.to_string())?;
        Ok(set)
    }
}

pub const GRID_MAGIC: &[u8; 8] = b"VMLCGRID";
pub const GRID_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 12 + 40;

fn position(dims: [usize; 3], h: f64, origin: Vec3, idx: usize) -> Vec3 {
    let [_, ny, nz] = dims;
    let ijk = [idx / (ny * nz), (idx / nz) % ny, idx % nz];
    [0, 1, 2].map(|a| origin[a] + h * ijk[a] as f64)
}

fn check_geometry(dims: [usize; 3], h: f64, r_cut: f64) -> Result<()> {
    if dims.iter().any(|&d| d < 3) {
        return Err(Error::GridTooSmall { dims });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid spacing must be positive, got {h}"
        )));
    }
    if !(r_cut >= 2.0 * h) {
        return Err(Error::InvalidArgument(format!(
            "excluded radius {r_cut} must be at least twice the spacing {h}"
        )));
    }
    Ok(())
}

struct Derivatives {
    div_e: f64,
    curl_e: Vec3,
    div_b: f64,
    curl_b: Vec3,
}

struct NodeResiduals {
    w1: Vec3,
    w2: Vec3,
    s1: f64,
    s2: f64,
    k_w1: Vec3,
    k_w2: Vec3,
    id1: Vec3,
    id2: Vec3,
    scale: f64,
}

/// Values of a field at the audited nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditField<T> {
    pub nodes: Vec<usize>,
    pub values: Vec<T>,
}

pub fn eval_w1(grid: &GriddedFieldSet) -> Result<AuditField<Vec3>> {
    let (nodes, values) = grid.map_audited(|i| grid.residuals(i).w1)?;
    Ok(AuditField { nodes, values })
}

pub fn eval_w2(grid: &GriddedFieldSet) -> Result<AuditField<Vec3>> {
    let (nodes, values) = grid.map_audited(|i| grid.residuals(i).w2)?;
    Ok(AuditField { nodes, values })
}

/// `[S₁, S₂]` at the audited nodes.
pub fn eval_scalar_constraints(grid: &GriddedFieldSet) -> Result<AuditField<[f64; 2]>> {
    let (nodes, values) = grid.map_audited(|i| {
        let r = grid.residuals(i);
        [r.s1, r.s2]
    })?;
    Ok(AuditField { nodes, values })
}

/// Max and L² norms (`(Σ |·|² h³)^{1/2}`) of one residual.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub max: f64,
    pub l2: f64,
    /// Node index of the maximum.
    pub argmax: usize,
}

impl Norms {
    fn push(&mut self, value: f64, idx: usize, cell: f64) {
        if value > self.max {
            self.max = value;
            self.argmax = idx;
        }
        self.l2 += value * value * cell;
    }
    fn finish(mut self) -> Self {
        self.l2 = self.l2.sqrt();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: Vec3,
    pub r_cut: f64,
    pub audited_nodes: usize,
    pub w1: Norms,
    pub w2: Norms,
    pub s1: Norms,
    pub s2: Norms,
    pub k_cross_w1: Norms,
    pub k_cross_w2: Norms,
    /// Identity residuals relative to the size of the terms at each node.
    pub identity_w1: Norms,
    pub identity_w2: Norms,
}

pub fn audit(grid: &GriddedFieldSet) -> Result<ConstraintReport> {
    let (nodes, res) = grid.map_audited(|i| grid.residuals(i))?;
    let cell = grid.spacing.powi(3);
    let mut n = [Norms::default(); 8];
    for (&idx, r) in nodes.iter().zip(&res) {
        let rel = |x: f64, s: f64| if s > 0.0 { x / s } else { x };
        let values = [
            norm(&r.w1),
            norm(&r.w2),
            r.s1.abs(),
            r.s2.abs(),
            norm(&r.k_w1),
            norm(&r.k_w2),
            rel(norm(&r.id1), r.scale),
            rel(norm(&r.id2), r.scale),
        ];
        for (acc, v) in n.iter_mut().zip(values) {
            acc.push(v, idx, cell);
        }
    }
    let n = n.map(Norms::finish);
    Ok(ConstraintReport {
        dims: grid.dims,
        spacing: grid.spacing,
        origin: grid.origin,
        r_cut: grid.r_cut,
        audited_nodes: nodes.len(),
        w1: n[0],
        w2: n[1],
        s1: n[2],
        s2: n[3],
        k_cross_w1: n[4],
        k_cross_w2: n[5],
        identity_w1: n[6],
        identity_w2: n[7],
    })
}

/// Largest relative residual of the two algebraic identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub w1: f64,
    pub w2: f64,
}

pub fn check_identities(grid: &GriddedFieldSet) -> Result<IdentityResiduals> {
    let rep = audit(grid)?;
    Ok(IdentityResiduals {
        w1: rep.identity_w1.max,
        w2: rep.identity_w2.max,
    })
}

/// Bound relating the three constraint sets.
///
/// Pointwise `k·W₁ = −S₁` and `k·W₂ = S₂`, so `|S₁|, |S₂|, |k×W₁|, |k×W₂| <= max(|W₁|, |W₂|)`;
/// conversely `|W₁|² = S₁² + |k×W₁|²` and `|W₂| <= |k×W₁| + |S₂|`, and symmetrically with `W₂`,
/// so `max(|W₁|, |W₂|) <= 2 max(|S₁|, |S₂|, |k×W_i|)`.
pub const EQUIVALENCE_CONSTANT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub node: [usize; 3],
    pub position: Vec3,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub tol: f64,
    /// `c·tol` with `c` = [`EQUIVALENCE_CONSTANT`].
    pub tol_prime: f64,
    pub constant: f64,
    /// `max(‖W₁‖, ‖W₂‖)`
    pub w_norm: f64,
    /// `max(‖S₁‖, ‖S₂‖, ‖k×W₁‖)`
    pub scalar_w1_norm: f64,
    /// `max(‖S₁‖, ‖S₂‖, ‖k×W₂‖)`
    pub scalar_w2_norm: f64,
    /// `‖W₁‖, ‖W₂‖ <= tol`
    pub vector_set: bool,
    /// scalar constraints and `‖k×W₁‖` within `tol`
    pub scalar_w1_set: bool,
    /// scalar constraints and `‖k×W₂‖` within `tol`
    pub scalar_w2_set: bool,
    /// Every implication holds: a passing vector set makes both scalar sets pass at `tol`, and a
    /// passing scalar set makes the vector set pass at `tol'`.
    pub consistent: bool,
    pub counterexample: Option<Counterexample>,
}

impl EquivalenceVerdict {
    /// All three sets agree.
    pub fn unanimous(&self) -> bool {
        self.vector_set == self.scalar_w1_set && self.scalar_w1_set == self.scalar_w2_set
    }
}

pub fn check_equivalence(grid: &GriddedFieldSet, tol: f64) -> Result<EquivalenceVerdict> {
    let rep = audit(grid)?;
    Ok(equivalence_from_report(grid, &rep, tol))
}

pub fn equivalence_from_report(grid: &GriddedFieldSet, rep: &ConstraintReport, tol: f64) -> EquivalenceVerdict {
    let c = EQUIVALENCE_CONSTANT;
    let tol_prime = c * tol;
    let w = rep.w1.max.max(rep.w2.max);
    let sc = rep.s1.max.max(rep.s2.max);
    let b = sc.max(rep.k_cross_w1.max);
    let cc = sc.max(rep.k_cross_w2.max);
    let (va, vb, vc) = (w <= tol, b <= tol, cc <= tol);
    let mut failure = None;
    if va && !vb {
        failure = Some((
            worst_of(rep, &[rep.s1, rep.s2, rep.k_cross_w1]),
            "vector set passes but the k×W₁ set fails",
        ));
    } else if va && !vc {
        failure = Some((
            worst_of(rep, &[rep.s1, rep.s2, rep.k_cross_w2]),
            "vector set passes but the k×W₂ set fails",
        ));
    } else if (vb || vc) && w > tol_prime {
        failure = Some((
            worst_of(rep, &[rep.w1, rep.w2]),
            "a scalar set passes but the vector set exceeds c·tol",
        ));
    }
    let counterexample = failure.map(|(idx, reason)| Counterexample {
        node: grid.node(idx),
        position: grid.position(idx),
        reason: reason.to_string(),
    });
    EquivalenceVerdict {
        tol,
        tol_prime,
        constant: c,
        w_norm: w,
        scalar_w1_norm: b,
        scalar_w2_norm: cc,
        vector_set: va,
        scalar_w1_set: vb,
        scalar_w2_set: vc,
        consistent: counterexample.is_none(),
        counterexample,
    }
}

fn worst_of(_rep: &ConstraintReport, norms: &[Norms]) -> usize {
    norms
        .iter()
        .max_by(|a, b| a.max.total_cmp(&b.max))
        .map_or(0, |n| n.argmax)
}

/// Cubic grid for embedding a symmetric slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedSpec {
    /// Nodes per axis; the grid spans `[-half_width, half_width]³`.
    pub nodes: usize,
    pub half_width: f64,
    /// Defaults to twice the spacing.
    pub r_cut: Option<f64>,
    /// Width of the radial smoothing; defaults to two shell widths.
    pub smoothing: Option<f64>,
}

impl EmbedSpec {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes as f64 - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub fields: GriddedFieldSet,
    pub warnings: Vec<String>,
}

/// `C²` step rising from 0 at `t = -1` to 1 at `t = 1`.
fn smooth_step(t: f64) -> f64 {
    let s = ((t + 1.0) * 0.5).clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (6.0 * s - 15.0))
}

/// Shell-constant radial profile with every jump replaced by a `C²` step of half-width `sigma`.
#[derive(Debug, Clone)]
pub struct SmoothRadialProfile {
    dr: f64,
    sigma: f64,
    /// Shell values, with a trailing 0 for the outside.
    values: Vec<f64>,
    breaks: Vec<f64>,
    /// `∫_0^{breaks[i]} s² f(s) ds`
    cumulative: Vec<f64>,
}

impl SmoothRadialProfile {
    pub fn new(shells: &[f64], grid: &ShellGrid, sigma: f64) -> Result<Self> {
        if shells.len() != grid.n_shells {
            return Err(Error::InvalidArgument(format!(
                "{} shell values for a grid of {} shells",
                shells.len(),
                grid.n_shells
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing width must be positive, got {sigma}"
            )));
        }
        let dr = grid.dr();
        let mut values = shells.to_vec();
        values.push(0.0);
        let mut breaks: Vec<f64> = vec![0.0];
        for k in 1..=grid.n_shells {
            let e = grid.edge(k);
            breaks.extend([e - sigma, e + sigma].into_iter().filter(|&x| x > 0.0));
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut p = Self {
            dr,
            sigma,
            values,
            breaks,
            cumulative: Vec::new(),
        };
        let mut acc = 0.0;
        let mut cumulative = vec![0.0];
        for w in p.breaks.windows(2) {
            acc += p.moment(w[0], w[1]);
            cumulative.push(acc);
        }
        p.cumulative = cumulative;
        Ok(p)
    }

    pub fn value(&self, r: f64) -> f64 {
        let n = self.values.len() - 1;
        let first = ((r - self.sigma) / self.dr).floor();
        // fully risen steps telescope to the shell value just inside
        let base = if first < 0.0 { 0 } else { (first as usize).min(n) };
        let mut v = self.values[base];
        let last = (((r + self.sigma) / self.dr).ceil().max(0.0) as usize).min(n);
        for k in (base + 1).max(1)..=last {
            let jump = self.values[k] - self.values[k - 1];
            v += jump * smooth_step((r - k as f64 * self.dr) / self.sigma);
        }
        v
    }

    /// `∫_a^b s² f(s) ds` for `a, b` inside one polynomial piece.
    fn moment(&self, a: f64, b: f64) -> f64 {
        const X: [f64; 4] = [
            -0.861_136_311_594_052_6,
            -0.339_981_043_584_856_3,
            0.339_981_043_584_856_3,
            0.861_136_311_594_052_6,
        ];
        const W: [f64; 4] = [
            0.347_854_845_137_453_9,
            0.652_145_154_862_546_1,
            0.652_145_154_862_546_1,
            0.347_854_845_137_453_9,
        ];
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        X.iter()
            .zip(W)
            .map(|(x, w)| {
                let s = m + h * x;
                w * s * s * self.value(s)
            })
            .sum::<f64>()
            * h
    }

    /// `∫_0^r s² f(s) ds`, exact up to rounding.
    pub fn enclosed(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let i = self.breaks.partition_point(|&b| b <= r) - 1;
        self.cumulative[i] + self.moment(self.breaks[i], r)
    }
}

/// Places the slice at `v` on a Cartesian grid: `E = (I/r²) k` from the smoothed `g_plus`,
/// `B = 0`, `ρ` and `j = (j·k) k` from the smoothed `(g_plus ± g_minus)/2`.
///
/// Smoothing keeps the embedded fields `C²`, so the audit residuals converge at second order in
/// the spacing; `E` and `ρ + j·k` are built from the same smoothed density.
pub fn embed_symmetric_solution(history: &SliceHistory, v: f64, spec: &EmbedSpec) -> Result<Embedding> {
    let (n, theta) = history.locate(v)?;
    let lo = &history.slices[n].state.profiles;
    let hi = history.slices.get(n + 1).map_or(lo, |s| &s.state.profiles);
    let mix =
        |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (1.0 - theta) * x + theta * y).collect() };
    let profiles = MomentProfiles {
        g_plus: mix(&lo.g_plus, &hi.g_plus),
        g_minus: mix(&lo.g_minus, &hi.g_minus),
        h_plus: Vec::new(),
        h_minus: Vec::new(),
    };
    embed_profiles(&profiles, history.grid(), spec)
}

pub fn embed_profiles(profiles: &MomentProfiles, shells: &ShellGrid, spec: &EmbedSpec) -> Result<Embedding> {
    if spec.nodes < 3 {
        return Err(Error::GridTooSmall { dims: [spec.nodes; 3] });
    }
    if !(spec.half_width > 0.0 && spec.half_width.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "half width must be positive, got {}",
            spec.half_width
        )));
    }
    let h = spec.spacing();
    let sigma = spec.smoothing.unwrap_or(2.0 * shells.dr());
    let mut warnings = Vec::new();
    if h > shells.dr() {
        warnings.push(format!(
            "grid spacing {h:.4e} is coarser than the shell width {:.4e}; shell structure is not resolved",
            shells.dr()
        ));
    }
    if spec.half_width * 3f64.sqrt() > shells.r_max {
        warnings.push(format!(
            "grid corners reach |x| = {:.4}, beyond the shell grid r_max = {:.4}; the field there is the Coulomb tail",
            spec.half_width * 3f64.sqrt(),
            shells.r_max
        ));
    }
    let plus = SmoothRadialProfile::new(&profiles.g_plus, shells, sigma)?;
    let minus = SmoothRadialProfile::new(&profiles.g_minus, shells, sigma)?;
    let r_cut = spec.r_cut.unwrap_or(2.0 * h);
    let fields = GriddedFieldSet::from_fn([spec.nodes; 3], h, [-spec.half_width; 3], r_cut, |x| {
        let r = norm(&x);
        if r == 0.0 {
            return NodeSample::default();
        }
        let k = [x[0] / r, x[1] / r, x[2] / r];
        let e_r = plus.enclosed(r) / (r * r);
        let (gp, gm) = (plus.value(r), minus.value(r));
        let jk = 0.5 * (gp - gm);
        NodeSample {
            e: k.map(|c| e_r * c),
            b: [0.0; 3],
            rho: 0.5 * (gp + gm),
            j: k.map(|c| jk * c),
        }
    })?;
    Ok(Embedding { fields, warnings })
}

/// Total charge `4π ∫ s² f(s) ds` of a smoothed profile.
pub fn smoothed_charge(p: &SmoothRadialProfile) -> f64 {
    4.0 * PI * p.cumulative.last().copied().unwrap_or(0.0)
}

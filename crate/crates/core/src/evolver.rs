//! Self-consistent advanced-time loop: deposit, solve the field, push every particle.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::characteristics::{step_reduced, substeps, ReducedState, Scheme, DEFAULT_R_FLOOR};
use crate::error::{Error, Result};
use crate::phase_model::{builtin_datum, sample_particles, InitialDatum, Macroparticle};
use crate::radial_field::{deposit, solve_field, MomentProfiles, RadialFieldProfile, ShellGrid};

fn default_resolution() -> [usize; 3] {
    [128, 16, 16]
}
fn default_n_shells() -> usize {
    512
}
fn default_picard() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumConfig {
    /// `zero`, `shell_polynomial` or `shell_gaussian`.
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// Midpoint samples per reduced coordinate `(r, w, q)`.
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_n_shells")]
    pub n_shells: usize,
    /// Outer grid radius; defaults to `1.02 (R0 + v_final/2)` plus two shell widths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_shells: default_n_shells(),
            r_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    /// Step in advanced time; defaults to `0.01 R0` (or 0.01 for empty data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dv: Option<f64>,
    pub v_final: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_picard")]
    pub picard_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Scalar series CSV (`series.csv`).
    #[serde(default = "default_true")]
    pub series: bool,
    /// Per-slice shell profiles CSV (`slices.csv`).
    #[serde(default)]
    pub slices: bool,
    /// Binary history file (`history.bin`) readable by `diagnose`.
    #[serde(default = "default_true")]
    pub history: bool,
    /// Keep every n-th slice in the written history and slice CSV.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            series: true,
            slices: false,
            history: true,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Probe radii for boundary fluxes, snapped to shell edges; defaults to `{R0, 2 R0, 0.9 r_max}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_radii: Option<Vec<f64>>,
    /// Fail the run on a cone-estimate violation after a push.
    #[serde(default = "default_true")]
    pub check_invariants: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            probe_radii: None,
            check_invariants: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugConfig {
    /// Push with `E ≡ 0` (free streaming); moments are still deposited and recorded.
    #[serde(default)]
    pub zero_field: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datum: DatumConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub debug: DebugConfig,
}

impl RunConfig {
    /// A config with every optional section at its default.
    pub fn new(name: &str, params: &[f64], v_final: f64) -> Self {
        Self {
            datum: DatumConfig {
                name: name.to_string(),
                params: params.to_vec(),
                resolution: default_resolution(),
            },
            grid: GridConfig::default(),
            time: TimeConfig {
                dv: None,
                v_final,
                scheme: Scheme::default(),
                picard_iters: default_picard(),
            },
            output: OutputConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            debug: DebugConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(dv) = self.time.dv {
            if !(dv > 0.0 && dv.is_finite()) {
                return bad(format!("time.dv must be positive, got {dv}"));
            }
        }
        if !(self.time.v_final >= 0.0 && self.time.v_final.is_finite()) {
            return bad(format!("time.v_final must be >= 0, got {}", self.time.v_final));
        }
        if self.time.picard_iters < 1 {
            return bad("time.picard_iters must be at least 1".into());
        }
        if self.grid.n_shells < 2 {
            return bad(format!("grid.n_shells must be at least 2, got {}", self.grid.n_shells));
        }
        if let Some(r) = self.grid.r_max {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("grid.r_max must be positive, got {r}"));
            }
        }
        if self.datum.resolution.iter().any(|&n| n < 2) {
            return bad(format!(
                "datum.resolution must be at least 2 per coordinate, got {:?}",
                self.datum.resolution
            ));
        }
        if self.output.stride < 1 {
            return bad("output.stride must be at least 1".into());
        }
        if let Some(p) = &self.diagnostics.probe_radii {
            if p.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return bad(format!("diagnostics.probe_radii must be positive, got {p:?}"));
            }
        }
        Ok(())
    }

    pub fn build_datum(&self) -> Result<InitialDatum> {
        builtin_datum(&self.datum.name, &self.datum.params)
    }

    /// Numerical settings with every default resolved against the datum.
    pub fn resolve(&self, datum: &InitialDatum) -> Result<EvolveSettings> {
        self.validate()?;
        let v_final = self.time.v_final;
        let dv = self
            .time
            .dv
            .unwrap_or(if datum.r0 > 0.0 { 0.01 * datum.r0 } else { 0.01 });
        let n = self.grid.n_shells;
        let r_max = match self.grid.r_max {
            Some(r) => r,
            None => {
                let reach = (datum.r0 + 0.5 * v_final).max(1.0) * 1.02;
                reach * n as f64 / (n as f64 - 2.0)
            }
        };
        let grid = ShellGrid::new(r_max, n)?;
        let wanted = match &self.diagnostics.probe_radii {
            Some(p) => p.clone(),
            // defaults that fall outside a short run's grid are dropped
            None if datum.r0 > 0.0 => [datum.r0, 2.0 * datum.r0, 0.9 * r_max]
                .into_iter()
                .filter(|&r| r < 0.95 * r_max)
                .collect(),
            None => vec![0.25 * r_max, 0.5 * r_max, 0.9 * r_max],
        };
        let probes = snap_probes(&grid, &wanted)?;
        Ok(EvolveSettings {
            grid,
            dv,
            v_final,
            scheme: self.time.scheme,
            picard_iters: self.time.picard_iters,
            zero_field: self.debug.zero_field,
            check_invariants: self.diagnostics.check_invariants,
            probes,
        })
    }
}

/// Snaps radii to the nearest interior shell edge.
pub fn snap_probes(grid: &ShellGrid, radii: &[f64]) -> Result<Vec<f64>> {
    radii
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r <= grid.r_max) {
                return Err(Error::Config(format!(
                    "probe radius {r} must lie in (0, r_max = {}]",
                    grid.r_max
                )));
            }
            let j = grid.nearest_edge(r).clamp(1, grid.n_shells - 1);
            Ok(grid.edge(j))
        })
        .collect()
}

/// Fully resolved numerical parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSettings {
    pub grid: ShellGrid,
    pub dv: f64,
    pub v_final: f64,
    pub scheme: Scheme,
    pub picard_iters: usize,
    pub zero_field: bool,
    pub check_invariants: bool,
    pub probes: Vec<f64>,
}

/// Deposited moments together with the field they generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceState {
    pub profiles: MomentProfiles,
    pub field: RadialFieldProfile,
}

impl SliceState {
    pub fn from_particles(particles: &[Macroparticle], grid: &ShellGrid) -> Result<Self> {
        let profiles = deposit(particles, grid)?;
        let field = solve_field(&profiles, grid)?;
        Ok(Self { profiles, field })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub scheme: Scheme,
    pub picard_iters: usize,
    pub zero_field: bool,
    pub check_invariants: bool,
}

impl From<&EvolveSettings> for StepOptions {
    fn from(s: &EvolveSettings) -> Self {
        Self {
            scheme: s.scheme,
            picard_iters: s.picard_iters,
            zero_field: s.zero_field,
            check_invariants: s.check_invariants,
        }
    }
}

fn push_one(p: &Macroparticle, field: &RadialFieldProfile, v: f64, dv: f64, scheme: Scheme) -> Result<Macroparticle> {
    let s = step_reduced(
        ReducedState { r: p.r, w: p.w, q: p.q },
        field,
        v,
        dv,
        scheme,
        DEFAULT_R_FLOOR,
    )?;
    Ok(Macroparticle { r: s.r, w: s.w, ..*p })
}

fn push_all(
    particles: &[Macroparticle],
    field: &RadialFieldProfile,
    v: f64,
    dv: f64,
    scheme: Scheme,
) -> Result<Vec<Macroparticle>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        particles
            .par_iter()
            .with_min_len(1024)
            .map(|p| push_one(p, field, v, dv, scheme))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        particles.iter().map(|p| push_one(p, field, v, dv, scheme)).collect()
    }
}

fn check_finite(field: &RadialFieldProfile, step: usize, v: f64) -> Result<()> {
    if field.enclosed.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteField { step, v })
    }
}

/// Advances all particles from `v` to `v + dv`.
///
/// The first push uses the field of `start`. Every further Picard iteration deposits the
/// endpoint, averages its field with the start field and re-pushes from the start state.
/// Returns the particles at `v + dv` and their deposited state.
pub fn step(
    particles: &[Macroparticle],
    start: &SliceState,
    grid: &ShellGrid,
    v: f64,
    dv: f64,
    opts: &StepOptions,
    step_index: usize,
) -> Result<(Vec<Macroparticle>, SliceState)> {
    if !(dv > 0.0) || opts.picard_iters < 1 {
        return Err(Error::InvalidArgument(format!(
            "step needs dv > 0 and picard_iters >= 1 (dv = {dv}, picard_iters = {})",
            opts.picard_iters
        )));
    }
    let frozen = if opts.zero_field {
        RadialFieldProfile::zero(*grid)
    } else {
        check_finite(&start.field, step_index, v)?;
        start.field.clone()
    };
    let mut moved = push_all(particles, &frozen, v, dv, opts.scheme)?;
    let mut end = SliceState::from_particles(&moved, grid)?;
    check_finite(&end.field, step_index + 1, v + dv)?;
    if !opts.zero_field {
        for _ in 1..opts.picard_iters {
            let mid = frozen.averaged(&end.field);
            moved = push_all(particles, &mid, v, dv, opts.scheme)?;
            end = SliceState::from_particles(&moved, grid)?;
            check_finite(&end.field, step_index + 1, v + dv)?;
        }
    }
    if opts.check_invariants {
        if let Some(p) = moved.iter().find(|p| !p.satisfies_cone_estimate()) {
            return Err(Error::Invariant {
                step: step_index + 1,
                what: format!("cone estimate 1 + p̂·k >= 1/(2(1+|p|²)) fails for {p:?}"),
            });
        }
    }
    Ok((moved, end))
}

/// Scalar record of one slice `v_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStats {
    /// `Σ ω_i`
    pub n_wedge: f64,
    /// `Σ ω_i √(1+|p_i|²)`
    pub kinetic: f64,
    /// Field energy on the cone including the vacuum tail.
    pub field_energy: f64,
    /// Largest `|p|` over all particles and all slices up to this one.
    pub p_wedge: f64,
    /// Largest `|p|` on this slice.
    pub p_now: f64,
    /// Largest radius on this slice.
    pub r_max: f64,
    /// Smallest radius over all slices up to this one.
    pub r_min: f64,
    /// Smallest radius on this slice.
    pub r_min_now: f64,
    /// Box-kernel estimate of `∫_{|x|=r} j∧·k dS` at each probe.
    pub flux_mass: Vec<f64>,
    /// Box-kernel estimate of `∫_{|x|=r} 𝔭∧·k dS` at each probe.
    pub flux_energy: Vec<f64>,
    /// Net weight carried outward through each probe sphere since `v = 0`, each particle spread
    /// over one shell width exactly as the deposit spreads it.
    pub crossed_mass: Vec<f64>,
    /// Same for the kinetic energy `ω √(1+|p|²)`.
    pub crossed_energy: Vec<f64>,
    /// Particles whose radial momentum decreased during the last step (cumulative).
    pub w_decreases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub v: f64,
    pub state: SliceState,
    pub stats: SliceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceHistory {
    pub datum: InitialDatum,
    pub settings: EvolveSettings,
    /// Uniform spacing of the recorded slices.
    pub slice_dv: f64,
    pub slices: Vec<Slice>,
}

impl SliceHistory {
    pub fn v_min(&self) -> f64 {
        self.slices.first().map_or(0.0, |s| s.v)
    }

    pub fn v_max(&self) -> f64 {
        self.slices.last().map_or(0.0, |s| s.v)
    }

    pub fn grid(&self) -> &ShellGrid {
        &self.settings.grid
    }

    pub fn probes(&self) -> &[f64] {
        &self.settings.probes
    }

    /// Slice index `n` and weight `θ ∈ [0, 1]` with `v = (1-θ) v_n + θ v_{n+1}`.
    pub fn locate(&self, v: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (self.v_min(), self.v_max());
        let slack = 1e-9 * self.slice_dv.max(1e-300);
        if self.slices.is_empty() || !(v >= lo - slack && v <= hi + slack) {
            return Err(Error::OutOfHistory {
                v,
                v_min: lo,
                v_max: hi,
            });
        }
        let last = self.slices.len() - 1;
        if last == 0 {
            return Ok((0, 0.0));
        }
        let x = ((v - lo) / self.slice_dv).clamp(0.0, last as f64);
        let n = (x.floor() as usize).min(last - 1);
        // slices are uniform except possibly rounding in the last one
        let (a, b) = (self.slices[n].v, self.slices[n + 1].v);
        let theta = ((v - a) / (b - a)).clamp(0.0, 1.0);
        Ok((n, theta))
    }

    /// Keeps every `stride`-th slice and the last one.
    pub fn decimated(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.slices.len().saturating_sub(1);
        let slices: Vec<Slice> = self
            .slices
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i == last)
            .map(|(_, s)| s.clone())
            .collect();
        // a trailing partial stride would break uniform spacing
        let keep = if !last.is_multiple_of(stride) && slices.len() > 1 {
            slices.len() - 1
        } else {
            slices.len()
        };
        Self {
            datum: self.datum.clone(),
            settings: self.settings.clone(),
            slice_dv: self.slice_dv * stride as f64,
            slices: slices.into_iter().take(keep).collect(),
        }
    }
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: SliceHistory,
    pub initial: Vec<Macroparticle>,
    pub particles: Vec<Macroparticle>,
}

struct Tracker {
    p_wedge: f64,
    r_min: f64,
    crossed_mass: Vec<f64>,
    crossed_energy: Vec<f64>,
    w_decreases: usize,
}

fn slice_stats(
    particles: &[Macroparticle],
    state: &SliceState,
    grid: &ShellGrid,
    probes: &[f64],
    tracker: &mut Tracker,
) -> SliceStats {
    let mut n_wedge = 0.0;
    let mut kinetic = 0.0;
    let mut p_now = 0.0_f64;
    let mut r_max = 0.0_f64;
    let mut r_min_now = f64::INFINITY;
    let dr = grid.dr();
    let mut flux_mass = vec![0.0; probes.len()];
    let mut flux_energy = vec![0.0; probes.len()];
    for p in particles {
        let gamma = p.energy();
        n_wedge += p.weight;
        kinetic += p.weight * gamma;
        p_now = p_now.max(p.p_sq().sqrt());
        r_max = r_max.max(p.r);
        r_min_now = r_min_now.min(p.r);
        let rdot = p.w / p.p0();
        for (k, &rp) in probes.iter().enumerate() {
            if (p.r - rp).abs() < 0.5 * dr {
                flux_mass[k] += p.weight * rdot / dr;
                flux_energy[k] += p.weight * gamma * rdot / dr;
            }
        }
    }
    tracker.p_wedge = tracker.p_wedge.max(p_now);
    tracker.r_min = tracker.r_min.min(r_min_now);
    SliceStats {
        n_wedge,
        kinetic,
        field_energy: state.field.field_energy(),
        p_wedge: tracker.p_wedge,
        p_now,
        r_max,
        r_min: tracker.r_min,
        r_min_now,
        flux_mass,
        flux_energy,
        crossed_mass: tracker.crossed_mass.clone(),
        crossed_energy: tracker.crossed_energy.clone(),
        w_decreases: tracker.w_decreases,
    }
}

/// Fraction of a particle at `r` that the cloud-in-cell deposit places inside the edge `edge`.
fn inside_fraction(r: f64, edge: f64, dr: f64) -> f64 {
    (0.5 - (r - edge) / dr).clamp(0.0, 1.0)
}

fn track_step(before: &[Macroparticle], after: &[Macroparticle], probes: &[f64], dr: f64, tracker: &mut Tracker) {
    for (a, b) in before.iter().zip(after) {
        if b.w < a.w - 1e-12 * (1.0 + a.w.abs()) {
            tracker.w_decreases += 1;
        }
        for (k, &rp) in probes.iter().enumerate() {
            let moved_out = inside_fraction(a.r, rp, dr) - inside_fraction(b.r, rp, dr);
            if moved_out != 0.0 {
                let gamma = 0.5 * (a.energy() + b.energy());
                tracker.crossed_mass[k] += a.weight * moved_out;
                tracker.crossed_energy[k] += a.weight * gamma * moved_out;
            }
        }
    }
}

/// Evolves sampled particles from `v = 0` to `settings.v_final`, recording every step.
pub fn evolve(datum: &InitialDatum, initial: Vec<Macroparticle>, settings: &EvolveSettings) -> Result<RunOutcome> {
    let grid = settings.grid;
    let opts = StepOptions::from(settings);
    let (n_steps, h) = substeps(0.0, settings.v_final, settings.dv)?;
    let mut tracker = Tracker {
        p_wedge: 0.0,
        r_min: f64::INFINITY,
        crossed_mass: vec![0.0; settings.probes.len()],
        crossed_energy: vec![0.0; settings.probes.len()],
        w_decreases: 0,
    };
    let mut state = SliceState::from_particles(&initial, &grid)?;
    check_finite(&state.field, 0, 0.0)?;
    let stats = slice_stats(&initial, &state, &grid, &settings.probes, &mut tracker);
    let mut slices = Vec::with_capacity(n_steps + 1);
    slices.push(Slice {
        v: 0.0,
        state: state.clone(),
        stats,
    });
    let mut particles = initial.clone();
    for n in 0..n_steps {
        let v = n as f64 * h;
        let (moved, next) = step(&particles, &state, &grid, v, h, &opts, n)?;
        track_step(&particles, &moved, &settings.probes, grid.dr(), &mut tracker);
        particles = moved;
        state = next;
        let stats = slice_stats(&particles, &state, &grid, &settings.probes, &mut tracker);
        let v_next = if n + 1 == n_steps {
            settings.v_final
        } else {
            (n + 1) as f64 * h
        };
        slices.push(Slice {
            v: v_next,
            state: state.clone(),
            stats,
        });
    }
    Ok(RunOutcome {
        history: SliceHistory {
            datum: datum.clone(),
            settings: settings.clone(),
            slice_dv: if n_steps == 0 { settings.dv } else { h },
            slices,
        },
        initial,
        particles,
    })
}

/// Samples the configured datum and evolves it. Writes nothing; see the CLI for outputs.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let datum = config.build_datum()?;
    let settings = config.resolve(&datum)?;
    let particles = sample_particles(&datum, config.datum.resolution)?;
    evolve(&datum, particles, &settings)
}

/// Incoming Poynting flux `∫∫ k·(E∧ × B∧) dS dv` through the sphere of radius `r`.
///
/// Exactly zero: a spherically symmetric solution has `B∧ ≡ 0`, so the integrand vanishes
/// identically and the solver never represents a magnetic field.
pub fn nirc_flux(_history: &SliceHistory, _v1: f64, _v2: f64, _r: f64) -> f64 {
    0.0
}

/// Outgoing radiation over `[v1, v2]`; zero for the same reason as [`nirc_flux`].
pub fn outgoing_radiation(_history: &SliceHistory, _v1: f64, _v2: f64) -> f64 {
    0.0
}

/// Closed-form free streaming of a reduced state: `r(v)² = r₀² + 2 r₀ w₀ s + (w₀² + q/r₀²) s²`
/// with `s` the coordinate time elapsed, which solves `s + r(s) = v - v₀ + r₀`.
pub fn free_streaming(state: ReducedState, dv: f64) -> ReducedState {
    let ReducedState { r, w, q } = state;
    let gamma = state.energy();
    let (b, c) = (w / gamma, (w * w + q / (r * r)) / (gamma * gamma));
    // s + sqrt(r² + 2 r b s + c s²) = dv + r  ⇒  (1 - c) s² - 2 (dv + r + r b) s + dv² + 2 r dv = 0
    let a2 = 1.0 - c;
    let a1 = dv + r + r * b;
    let a0 = dv * dv + 2.0 * r * dv;
    let s = a0 / (a1 + (a1 * a1 - a2 * a0).sqrt());
    let r_new = (r * r + 2.0 * r * b * s + c * s * s).sqrt();
    let w_new = gamma * (r * b + c * s) / r_new;
    ReducedState { r: r_new, w: w_new, q }
}

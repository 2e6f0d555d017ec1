//! Shell deposition of particle moments and the radial electric field
//! `E_r(r) = r⁻² ∫₀^r (ρ + j·k)(r') r'² dr'` (units with `∇·E = ρ`, no 4π).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_model::Macroparticle;

/// Uniform radial shells `[r_j, r_{j+1}]`, `r_j = j·r_max/n_shells`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellGrid {
    pub r_max: f64,
    pub n_shells: usize,
}

impl ShellGrid {
    pub fn new(r_max: f64, n_shells: usize) -> Result<Self> {
        if !(r_max > 0.0 && r_max.is_finite()) || n_shells == 0 {
            return Err(Error::InvalidArgument(format!(
                "shell grid needs r_max > 0 and n_shells > 0 (got {r_max}, {n_shells})"
            )));
        }
        Ok(Self { r_max, n_shells })
    }

    #[inline]
    pub fn dr(&self) -> f64 {
        self.r_max / self.n_shells as f64
    }

    #[inline]
    pub fn edge(&self, j: usize) -> f64 {
        if j == self.n_shells {
            self.r_max
        } else {
            j as f64 * self.dr()
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_shells).map(|j| self.edge(j)).collect()
    }

    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dr()
    }

    /// `4π/3 (r_{j+1}³ - r_j³)`
    #[inline]
    pub fn volume(&self, j: usize) -> f64 {
        let (a, b) = (self.edge(j), self.edge(j + 1));
        4.0 / 3.0 * PI * (b * b * b - a * a * a)
    }

    /// Index of the edge closest to `r`.
    pub fn nearest_edge(&self, r: f64) -> usize {
        ((r / self.dr()).round().max(0.0) as usize).min(self.n_shells)
    }

    /// Cloud-in-cell split between neighbouring shell centers: `(j, 1 - α, j + 1, α)`.
    #[inline]
    pub(crate) fn cic(&self, r: f64) -> (usize, f64, usize, f64) {
        let x = r / self.dr() - 0.5;
        let last = self.n_shells - 1;
        if x <= 0.0 {
            return (0, 1.0, 0, 0.0);
        }
        let j = x.floor() as usize;
        if j >= last {
            return (last, 1.0, last, 0.0);
        }
        let a = x - j as f64;
        (j, 1.0 - a, j + 1, a)
    }
}

/// Shell-averaged densities over `d³x`:
/// `g± = ∫ (1 ± p̂·k) f dp` and `h± = ∫ (√(1+|p|²) ± p·k) f dp` (kinetic parts only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProfiles {
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
    pub h_plus: Vec<f64>,
    pub h_minus: Vec<f64>,
}

impl MomentProfiles {
    pub fn zeros(n: usize) -> Self {
        Self {
            g_plus: vec![0.0; n],
            g_minus: vec![0.0; n],
            h_plus: vec![0.0; n],
            h_minus: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.g_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_plus.is_empty()
    }

    /// `Σ_j g_plus_j · vol_j`
    pub fn total_g_plus(&self, grid: &ShellGrid) -> f64 {
        self.g_plus.iter().enumerate().map(|(j, g)| g * grid.volume(j)).sum()
    }

    pub fn total_h_plus(&self, grid: &ShellGrid) -> f64 {
        self.h_plus.iter().enumerate().map(|(j, h)| h * grid.volume(j)).sum()
    }
}

const DEPOSIT_CHUNK: usize = 4096;

fn deposit_chunk(particles: &[Macroparticle], offset: usize, grid: &ShellGrid) -> Result<[Vec<f64>; 4]> {
    let n = grid.n_shells;
    let mut acc = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, p) in particles.iter().enumerate() {
        if !(p.r >= 0.0 && p.r < grid.r_max) {
            return Err(Error::OutsideGrid {
                index: offset + i,
                radius: p.r,
                r_max: grid.r_max,
            });
        }
        let gamma = p.energy();
        let plus = 1.0 + p.w / gamma;
        let minus = 1.0 - p.w / gamma;
        let m = [
            p.weight,
            p.weight * minus / plus,
            p.weight * gamma,
            p.weight * (gamma - p.w) / plus,
        ];
        let (j0, a0, j1, a1) = grid.cic(p.r);
        for (slot, mass) in acc.iter_mut().zip(m) {
            slot[j0] += a0 * mass;
            slot[j1] += a1 * mass;
        }
    }
    Ok(acc)
}

/// Conservative cloud-in-cell deposition onto shell centers.
///
/// Partial sums are formed over fixed particle chunks and merged in chunk order, so the result
/// does not depend on the thread count.
pub fn deposit(particles: &[Macroparticle], grid: &ShellGrid) -> Result<MomentProfiles> {
    let chunks: Vec<(usize, &[Macroparticle])> = particles
        .chunks(DEPOSIT_CHUNK)
        .enumerate()
        .map(|(c, s)| (c * DEPOSIT_CHUNK, s))
        .collect();
    #[cfg(feature = "parallel")]
    let partials: Vec<Result<[Vec<f64>; 4]>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|(off, s)| deposit_chunk(s, *off, grid)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Result<[Vec<f64>; 4]>> = chunks.iter().map(|(off, s)| deposit_chunk(s, *off, grid)).collect();

    let n = grid.n_shells;
    let mut mass = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for part in partials {
        let part = part?;
        for (dst, src) in mass.iter_mut().zip(part.iter()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let [mut g_plus, mut g_minus, mut h_plus, mut h_minus] = mass;
    for j in 0..n {
        let vol = grid.volume(j);
        g_plus[j] /= vol;
        g_minus[j] /= vol;
        h_plus[j] /= vol;
        h_minus[j] /= vol;
    }
    Ok(MomentProfiles {
        g_plus,
        g_minus,
        h_plus,
        h_minus,
    })
}

/// `I(r) = ∫₀^r g_plus r'² dr'` on the shell edges and `E_r = I/r²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFieldProfile {
    pub grid: ShellGrid,
    pub enclosed: Vec<f64>,
}

impl RadialFieldProfile {
    pub fn zero(grid: ShellGrid) -> Self {
        Self {
            grid,
            enclosed: vec![0.0; grid.n_shells + 1],
        }
    }

    /// `E_r` at edge `j`.
    pub fn edge_field(&self, j: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        let r = self.grid.edge(j);
        self.enclosed[j] / (r * r)
    }

    pub fn edge_fields(&self) -> Vec<f64> {
        (0..=self.grid.n_shells).map(|j| self.edge_field(j)).collect()
    }

    /// Past-cone mass `N∧ = 4π I(r_max)`.
    pub fn total_charge(&self) -> f64 {
        4.0 * PI * self.enclosed[self.grid.n_shells]
    }

    /// `I(r)`, linear in `r³` inside a shell (exact for shell-constant density).
    #[inline]
    pub fn enclosed_at(&self, r: f64) -> Result<f64> {
        let g = &self.grid;
        if !(r >= 0.0) || r > g.r_max * (1.0 + 1e-12) {
            return Err(Error::OutsideProfile {
                radius: r,
                r_max: g.r_max,
            });
        }
        let j = ((r / g.dr()) as usize).min(g.n_shells - 1);
        let (a, b) = (g.edge(j), g.edge(j + 1));
        let t = (r * r * r - a * a * a) / (b * b * b - a * a * a);
        Ok(self.enclosed[j] + t * (self.enclosed[j + 1] - self.enclosed[j]))
    }

    /// Field energy `4π ∫₀^r ½ E_r² r'² dr'` by the trapezoid rule on edges (partial last interval).
    pub fn field_energy_within(&self, r: f64) -> Result<f64> {
        let g = &self.grid;
        let r = r.min(g.r_max);
        let density = |j: usize| {
            if j == 0 {
                0.0
            } else {
                let re = g.edge(j);
                2.0 * PI * self.enclosed[j] * self.enclosed[j] / (re * re)
            }
        };
        let full = ((r / g.dr()) as usize).min(g.n_shells);
        let mut sum = 0.0;
        for j in 0..full {
            sum += 0.5 * g.dr() * (density(j) + density(j + 1));
        }
        let rest = r - g.edge(full);
        if rest > 0.0 && full < g.n_shells {
            let i = self.enclosed_at(r)?;
            sum += 0.5 * rest * (density(full) + 2.0 * PI * i * i / (r * r));
        }
        Ok(sum)
    }

    /// Field energy beyond `r`, where the enclosed charge is the total: `N∧²/(8π r)`.
    pub fn field_energy_tail(&self, r: f64) -> f64 {
        let q = self.total_charge();
        q * q / (8.0 * PI * r)
    }

    /// Total field energy: trapezoid on the grid plus the exact vacuum tail.
    pub fn field_energy(&self) -> f64 {
        // r_max is within the grid so this cannot fail
        self.field_energy_within(self.grid.r_max).unwrap_or(f64::NAN) + self.field_energy_tail(self.grid.r_max)
    }

    /// Average of two profiles on the same grid.
    pub fn averaged(&self, other: &Self) -> Self {
        Self {
            grid: self.grid,
            enclosed: self
                .enclosed
                .iter()
                .zip(&other.enclosed)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        }
    }
}

pub fn solve_field(profiles: &MomentProfiles, grid: &ShellGrid) -> Result<RadialFieldProfile> {
    if profiles.len() != grid.n_shells {
        return Err(Error::InvalidArgument(format!(
            "profile has {} shells, grid has {}",
            profiles.len(),
            grid.n_shells
        )));
    }
    let mut enclosed = Vec::with_capacity(grid.n_shells + 1);
    enclosed.push(0.0);
    let mut acc = 0.0;
    for (j, &g) in profiles.g_plus.iter().enumerate() {
        if !(g >= 0.0) {
            return Err(Error::NegativeMoment { shell: j, value: g });
        }
        let (a, b) = (grid.edge(j), grid.edge(j + 1));
        acc += g * (b * b * b - a * a * a) / 3.0;
        enclosed.push(acc);
    }
    Ok(RadialFieldProfile { grid: *grid, enclosed })
}

/// `E_r(r)`; zero at the origin.
#[inline]
pub fn eval_field(profile: &RadialFieldProfile, r: f64) -> Result<f64> {
    let i = profile.enclosed_at(r)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    Ok(i / (r * r))
}

impl crate::characteristics::RadialFieldFn for RadialFieldProfile {
    fn e_r(&self, _v: f64, r: f64) -> Result<f64> {
        eval_field(self, r)
    }
}

/// `‖g_plus‖_{L^{4/3}(ℝ³)}` over the shell representation.
pub fn g_plus_l43_norm(profiles: &MomentProfiles, grid: &ShellGrid) -> f64 {
    profiles
        .g_plus
        .iter()
        .enumerate()
        .map(|(j, g)| g.powf(4.0 / 3.0) * grid.volume(j))
        .sum::<f64>()
        .powf(0.75)
}

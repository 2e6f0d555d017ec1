//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns JSON text (or CSV for the series) so the page needs no glue beyond
//! `JSON.parse`. Errors come back as strings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use lightcone_vlasov::characteristics::{trace_reduced, CoulombField, ReducedState, Scheme, DEFAULT_R_FLOOR};
use lightcone_vlasov::cli_io::write_series;
use lightcone_vlasov::diagnostics::cone_series;
use lightcone_vlasov::evolver::{run, RunConfig};
use lightcone_vlasov::phase_model::{builtin_datum, sample_particles};
use lightcone_vlasov::radial_field::{deposit, solve_field, ShellGrid};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_PARTICLES: usize = 1 << 16;
const MAX_STEPS: f64 = 4000.0;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct FieldProfile {
    r: Vec<f64>,
    density: Vec<f64>,
    e_r: Vec<f64>,
    total_charge: f64,
    particles: usize,
}

/// Density and radial field of a built-in datum at `v = 0`, on `n_shells` shells out to `r_max`.
#[wasm_bindgen]
pub fn field_profile(
    name: &str,
    params: Vec<f64>,
    n_shells: usize,
    r_max: f64,
    samples: usize,
) -> Result<String, String> {
    let datum = builtin_datum(name, &params).map_err(err)?;
    let grid = ShellGrid::new(r_max, n_shells).map_err(err)?;
    let res = [samples.max(1), (samples / 4).max(1), (samples / 4).max(1)];
    if res.iter().product::<usize>() > MAX_PARTICLES {
        return Err(format!("at most {MAX_PARTICLES} particles"));
    }
    let particles = sample_particles(&datum, res).map_err(err)?;
    let prof = deposit(&particles, &grid).map_err(err)?;
    let field = solve_field(&prof, &grid).map_err(err)?;
    let out = FieldProfile {
        r: grid.edges(),
        density: (0..=n_shells)
            .map(|j| {
                let k = j.min(n_shells - 1);
                0.5 * (prof.g_plus[k] + prof.g_minus[k])
            })
            .collect(),
        e_r: field.edge_fields(),
        total_charge: field.total_charge(),
        particles: particles.len(),
    };
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct Orbit {
    v: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
    energy: Vec<f64>,
}

/// One characteristic in the field of a point charge `charge` (`E_r = charge/r²`), from
/// `(r, w = p·k, q = |x×p|²)` at `v = 0` to `v_final`.
#[wasm_bindgen]
pub fn reduced_orbit(r: f64, w: f64, q: f64, charge: f64, v_final: f64, dv: f64) -> Result<String, String> {
    if !(dv > 0.0) || v_final / dv > MAX_STEPS {
        return Err(format!("need dv > 0 and at most {MAX_STEPS} steps"));
    }
    let field = CoulombField { charge };
    let start = ReducedState { r, w, q };
    let path = trace_reduced(start, &field, 0.0, v_final, dv, Scheme::Rk4, DEFAULT_R_FLOOR).map_err(err)?;
    let out = Orbit {
        v: path.iter().map(|s| s.v).collect(),
        r: path.iter().map(|s| s.r).collect(),
        w: path.iter().map(|s| s.w).collect(),
        energy: path
            .iter()
            .map(|s| ReducedState { r: s.r, w: s.w, q: s.q }.energy() + charge / s.r)
            .collect(),
    };
    serde_json::to_string(&out).map_err(err)
}

/// A small self-consistent run; the cone series as CSV.
#[wasm_bindgen]
pub fn evolve_series(
    name: &str,
    params: Vec<f64>,
    v_final: f64,
    n_shells: usize,
    samples: usize,
) -> Result<String, String> {
    let mut cfg = RunConfig::new(name, &params, v_final);
    cfg.grid.n_shells = n_shells;
    cfg.datum.resolution = [samples.max(1), (samples / 4).max(1), (samples / 4).max(1)];
    cfg.time.dv = Some(0.02);
    cfg.diagnostics.probe_radii = Some(Vec::new());
    if cfg.datum.resolution.iter().product::<usize>() > MAX_PARTICLES || v_final / 0.02 > MAX_STEPS {
        return Err("run too large for the demo".into());
    }
    let outcome = run(&cfg).map_err(err)?;
    let rows = cone_series(&outcome.history).map_err(err)?;
    let mut buf = Vec::new();
    write_series(&rows, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(err)
}

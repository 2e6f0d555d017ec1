//! Config parsing, output files and the reports behind the command-line subcommands.
//!
//! Files written by a run:
//!
//! * `series.csv`: one row per recorded slice, columns [`SeriesRow::COLUMNS`], floats with 17
//!   significant digits, `NaN` where the recorded history cannot close the surface.
//! * `slices.csv` (optional): `v, shell, r_lo, r_hi, g_plus, g_minus, h_plus, h_minus, E_outer`.
//! * `history.bin`: the slice history plus the initial and final particles, see [`write_history`].
//! * `config.toml`: the parsed config echoed back, with every default filled in.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characteristics::{
    flow_jacobian_det, integrate_cartesian, jacobian_closed_form, CoulombField, PhasePoint, Scheme,
};
use crate::constraint_audit::{audit, embed_symmetric_solution, equivalence_from_report, EmbedSpec, GriddedFieldSet};
use crate::diagnostics::{cone_series, CheckRecord, DiagnosticsReport, SeriesRow, Status};
use crate::error::{Error, Result};
use crate::evolver::{EvolveSettings, RunConfig, RunOutcome, Slice, SliceHistory};
use crate::phase_model::Macroparticle;

pub fn parse_config_str(text: &str, origin: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)
        .map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.to_string().trim_end())))?;
    cfg.validate()
        .map_err(|e| Error::Config(format!("{}: {}", origin.display(), e)))?;
    Ok(cfg)
}

/// Reads and validates a TOML run config; unknown keys are rejected.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}

/// The config as TOML, with every default written out.
pub fn config_to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn write_series<W: Write>(rows: &[SeriesRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SeriesRow::COLUMNS)?;
    for row in rows {
        w.write_record(row.values().map(fmt_float))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_series(rows: &[SeriesRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_series(rows, std::io::BufWriter::new(file)).map_err(|e| csv_err(path, e))
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(SeriesRow::COLUMNS) {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mut values = [0.0; 10];
        for (c, field) in rec.iter().enumerate() {
            values[c] = field
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: bad number {field:?}", line + 2)))?;
        }
        rows.push(SeriesRow::from_values(values));
    }
    Ok(rows)
}

pub const SLICE_COLUMNS: [&str; 9] = [
    "v", "shell", "r_lo", "r_hi", "g_plus", "g_minus", "h_plus", "h_minus", "E_outer",
];

pub fn emit_slices(history: &SliceHistory, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let grid = history.grid();
    let write = |w: &mut csv::Writer<_>| -> std::result::Result<(), csv::Error> {
        w.write_record(SLICE_COLUMNS)?;
        for s in &history.slices {
            let p = &s.state.profiles;
            for j in 0..grid.n_shells {
                w.write_record([
                    fmt_float(s.v),
                    j.to_string(),
                    fmt_float(grid.edge(j)),
                    fmt_float(grid.edge(j + 1)),
                    fmt_float(p.g_plus[j]),
                    fmt_float(p.g_minus[j]),
                    fmt_float(p.h_plus[j]),
                    fmt_float(p.h_minus[j]),
                    fmt_float(s.state.field.edge_field(j + 1)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| csv_err(path, e))
}

pub const HISTORY_MAGIC: &[u8; 8] = b"VMLCHIST";
pub const HISTORY_VERSION: u32 = 1;

#[derive(Serialize)]
struct PayloadRef<'a> {
    settings: &'a EvolveSettings,
    slice_dv: f64,
    slices: &'a [Slice],
    initial: &'a [Macroparticle],
    particles: &'a [Macroparticle],
}

#[derive(Deserialize)]
struct Payload {
    settings: EvolveSettings,
    slice_dv: f64,
    slices: Vec<Slice>,
    initial: Vec<Macroparticle>,
    particles: Vec<Macroparticle>,
}

/// Layout: magic `VMLCHIST`, `u32` version, `u64` length of the config TOML, the config text,
/// then the settings, slices and particles in bincode (little-endian, fixed-width integers).
/// The datum is rebuilt from the config on load.
pub fn write_history(outcome: &RunOutcome, config: &RunConfig, path: &Path) -> Result<()> {
    let text = config_to_toml(config)?;
    let h = &outcome.history;
    let payload = PayloadRef {
        settings: &h.settings,
        slice_dv: h.slice_dv,
        slices: &h.slices,
        initial: &outcome.initial,
        particles: &outcome.particles,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(HISTORY_MAGIC).map_err(io)?;
    w.write_all(&HISTORY_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(text.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)?;
    bincode::serialize_into(&mut w, &payload).map_err(|e| Error::format(path, e.to_string()))?;
    w.flush().map_err(io)
}

pub fn read_history(path: &Path) -> Result<(RunConfig, RunOutcome)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let mut head = [0u8; 20];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..8] != HISTORY_MAGIC {
        return Err(Error::format(path, "not a history file (bad magic)"));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != HISTORY_VERSION {
        return Err(Error::format(path, format!("unsupported history version {version}")));
    }
    let len = u64::from_le_bytes(head[12..20].try_into().unwrap());
    let mut text = vec![0u8; usize::try_from(len).map_err(|_| Error::format(path, "config too long"))?];
    r.read_exact(&mut text)
        .map_err(|_| Error::format(path, "truncated config"))?;
    let text = String::from_utf8(text).map_err(|_| Error::format(path, "config is not UTF-8"))?;
    let config = parse_config_str(&text, path)?;
    let p: Payload = bincode::deserialize_from(&mut r).map_err(|e| Error::format(path, e.to_string()))?;
    let datum = config.build_datum()?;
    let outcome = RunOutcome {
        history: SliceHistory {
            datum,
            settings: p.settings,
            slice_dv: p.slice_dv,
            slices: p.slices,
        },
        initial: p.initial,
        particles: p.particles,
    };
    Ok((config, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub passed: bool,
    pub total: usize,
    pub failed: usize,
    pub skipped: usize,
}

/// Output of every checking subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub records: Vec<CheckRecord>,
    /// Passes iff no record failed; skipped records do not fail the summary.
    pub summary: Summary,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl ReportDocument {
    pub fn new(
        command: &str,
        config: Option<RunConfig>,
        records: Vec<CheckRecord>,
        details: serde_json::Value,
    ) -> Self {
        let failed = records.iter().filter(|r| r.status == Status::Fail).count();
        let skipped = records.iter().filter(|r| r.status == Status::Skipped).count();
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            summary: Summary {
                passed: failed == 0,
                total: records.len(),
                failed,
                skipped,
            },
            records,
            details,
        }
    }

    /// One line per record.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let status = match r.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skipped => "SKIP",
            };
            out.push_str(&format!(
                "{status} {:<52} residual {:>11.4e}  tol {:.1e}",
                r.name, r.residual, r.tolerance
            ));
            if !r.detail.is_empty() {
                out.push_str(&format!("  ({})", r.detail));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "{}: {} checks, {} failed, {} skipped\n",
            if self.summary.passed { "PASSED" } else { "FAILED" },
            self.summary.total,
            self.summary.failed,
            self.summary.skipped
        ));
        out
    }
}

pub fn emit_report(report: &ReportDocument, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Files produced by [`execute_run`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub directory: PathBuf,
    pub config: PathBuf,
    pub series: Option<PathBuf>,
    pub slices: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

/// Output directory: the override, else `output.directory` relative to the config file, else
/// `out` next to the config file.
pub fn output_directory(cfg: &RunConfig, config_path: &Path, override_dir: Option<&Path>) -> PathBuf {
    if let Some(d) = override_dir {
        return d.to_path_buf();
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    match &cfg.output.directory {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => base.join(d),
        None => base.join("out"),
    }
}

/// Runs a config and writes its outputs.
pub fn execute_run(cfg: &RunConfig, dir: &Path) -> Result<(RunOutcome, RunArtifacts)> {
    let outcome = crate::evolver::run(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut art = RunArtifacts {
        directory: dir.to_path_buf(),
        config: dir.join("config.toml"),
        ..Default::default()
    };
    fs::write(&art.config, config_to_toml(cfg)?).map_err(|e| Error::io(&art.config, e))?;
    let stride = cfg.output.stride;
    if cfg.output.series {
        let rows = cone_series(&outcome.history)?;
        let last = rows.len().saturating_sub(1);
        let kept: Vec<SeriesRow> = rows
            .into_iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i == last)
            .map(|(_, r)| r)
            .collect();
        let path = dir.join("series.csv");
        emit_series(&kept, &path)?;
        art.series = Some(path);
    }
    if cfg.output.slices || cfg.output.history {
        let decimated = RunOutcome {
            history: outcome.history.decimated(stride),
            initial: outcome.initial.clone(),
            particles: outcome.particles.clone(),
        };
        if cfg.output.slices {
            let path = dir.join("slices.csv");
            emit_slices(&decimated.history, &path)?;
            art.slices = Some(path);
        }
        if cfg.output.history {
            let path = dir.join("history.bin");
            write_history(&decimated, cfg, &path)?;
            art.history = Some(path);
        }
    }
    Ok((outcome, art))
}

pub fn diagnostics_document(config: &RunConfig, rep: &DiagnosticsReport) -> ReportDocument {
    let details = serde_json::json!({
        "window": rep.window,
        "momentum": rep.momentum,
    });
    ReportDocument::new("diagnose", Some(config.clone()), rep.checks.clone(), details)
}

/// Where the audited fields come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditSource {
    Grid(PathBuf),
    History { path: PathBuf, v: f64, spec: EmbedSpec },
}

pub fn read_grid_file(path: &Path) -> Result<GriddedFieldSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    GriddedFieldSet::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn write_grid_file(grid: &GriddedFieldSet, path: &Path) -> Result<()> {
    fs::write(path, grid.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Identity residual tolerance.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Audits the fields and reports the identity residuals, the consistency of the constraint-set
/// verdict at `tol`, and optionally whether the constraints hold at `tol`.
pub fn audit_document(source: &AuditSource, tol: f64, require_satisfied: bool) -> Result<ReportDocument> {
    let (grid, warnings, config) = match source {
        AuditSource::Grid(p) => (read_grid_file(p)?, Vec::new(), None),
        AuditSource::History { path, v, spec } => {
            let (cfg, outcome) = read_history(path)?;
            let emb = embed_symmetric_solution(&outcome.history, *v, spec)?;
            (emb.fields, emb.warnings, Some(cfg))
        }
    };
    let rep = audit(&grid)?;
    let verdict = equivalence_from_report(&grid, &rep, tol);
    let mut records = vec![
        CheckRecord::new(
            "identity_w1",
            "W1 = k×W2 + k(k·∇×E − ∇·B)",
            rep.identity_w1.max,
            IDENTITY_TOL,
            "relative to the size of the terms".into(),
        ),
        CheckRecord::new(
            "identity_w2",
            "W2 = −k×W1 + k(k·∇×B + ∇·E − ρ − j·k)",
            rep.identity_w2.max,
            IDENTITY_TOL,
            "relative to the size of the terms".into(),
        ),
        CheckRecord::new(
            "constraint_sets_equivalent",
            "equivalence of the vector and scalar constraint sets",
            if verdict.consistent { 0.0 } else { 1.0 },
            0.0,
            match &verdict.counterexample {
                Some(c) => format!("{} at node {:?}", c.reason, c.node),
                None => format!(
                    "tol {:.3e}, tol' {:.3e}: vector {}, scalar+k×W1 {}, scalar+k×W2 {}",
                    verdict.tol, verdict.tol_prime, verdict.vector_set, verdict.scalar_w1_set, verdict.scalar_w2_set
                ),
            },
        ),
    ];
    if require_satisfied {
        records.push(CheckRecord::new(
            "constraints_satisfied",
            "W1 = W2 = 0 on the audited nodes",
            verdict.w_norm,
            tol,
            String::new(),
        ));
    }
    let details = serde_json::json!({
        "report": rep,
        "verdict": verdict,
        "warnings": warnings,
    });
    Ok(ReportDocument::new("audit-constraints", config, records, details))
}

/// Settings of the Jacobian determinant check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianConfig {
    /// Coulomb field strength, `E = charge · x/|x|³`.
    pub charge: f64,
    pub orbits: usize,
    pub v_span: f64,
    pub dv: f64,
    pub h_fd: f64,
    pub tolerance: f64,
    pub scheme: Scheme,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        Self {
            charge: 0.3,
            orbits: 24,
            v_span: 1.0,
            dv: 1e-3,
            h_fd: 1e-4,
            tolerance: 1e-5,
            scheme: Scheme::Rk4,
        }
    }
}

pub fn parse_jacobian_config(path: &Path) -> Result<JacobianConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: JacobianConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
    if cfg.orbits == 0 || !(cfg.dv > 0.0) || !(cfg.h_fd > 0.0) || !(cfg.v_span >= 0.0) {
        return Err(Error::Config(format!(
            "{}: orbits, dv and h_fd must be positive and v_span non-negative",
            path.display()
        )));
    }
    Ok(cfg)
}

/// Starting point of orbit `i`: radii in `[0.8, 1.6]`, speeds in `[0.2, 1.4]`, directions spread
/// by golden-angle increments.
pub fn jacobian_orbit(i: usize) -> PhasePoint {
    let r0 = 0.8 + 0.8 * (i % 5) as f64 / 4.0;
    let speed = 0.2 + 0.6 * ((i / 5) % 3) as f64;
    let alpha = 2.399_963_229_728_653 * i as f64;
    let beta = 1.1 * i as f64;
    PhasePoint::new(
        [r0, 0.0, 0.0],
        [
            speed * alpha.cos(),
            speed * alpha.sin() * beta.cos(),
            speed * alpha.sin() * beta.sin(),
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianRow {
    pub orbit: usize,
    pub x: [f64; 3],
    pub p: [f64; 3],
    pub finite_difference: f64,
    pub closed_form: f64,
    pub error: f64,
}

pub fn jacobian_rows(cfg: &JacobianConfig) -> Result<Vec<JacobianRow>> {
    let field = CoulombField { charge: cfg.charge };
    (0..cfg.orbits)
        .map(|i| {
            let start = jacobian_orbit(i);
            let end = integrate_cartesian(start, &field, 0.0, cfg.v_span, cfg.dv, cfg.scheme)?;
            let fd = flow_jacobian_det(&start, &field, 0.0, cfg.v_span, cfg.dv, cfg.h_fd, cfg.scheme)?;
            let closed = jacobian_closed_form(&start, &end)?;
            Ok(JacobianRow {
                orbit: i,
                x: start.x,
                p: start.p,
                finite_difference: fd,
                closed_form: closed,
                error: (fd - closed).abs(),
            })
        })
        .collect()
}

pub fn jacobian_document(cfg: &JacobianConfig) -> Result<ReportDocument> {
    let rows = jacobian_rows(cfg)?;
    let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    let records = vec![CheckRecord::new(
        "jacobian_determinant_identity",
        "det of the flow map equals (1 + p̂·k)/(1 + P̂·K)",
        worst,
        cfg.tolerance,
        format!("{} orbits in a Coulomb field of strength {}", rows.len(), cfg.charge),
    )];
    let details = serde_json::json!({ "settings": cfg, "orbits": rows });
    Ok(ReportDocument::new("jacobian-test", None, records, details))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(
            "[datum]\nname = \"zero\"\n[time]\nv_final = 1.0\n",
            Path::new("mem.toml"),
        )
        .unwrap();
        assert_eq!(cfg.grid.n_shells, 512);
        assert_eq!(cfg.time.picard_iters, 2);
        assert_eq!(cfg.datum.resolution, [128, 16, 16]);
        assert!(cfg.output.series && cfg.output.history && !cfg.output.slices);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config_str(
            "[datum]\nname = \"zero\"\n[time]\nv_final = 1.0\ngamma = 2\n",
            Path::new("bad.toml"),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("gamma") && err.contains("bad.toml"), "{err}");
        let err = parse_config_str("[time]\nv_final = 1.0\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("datum"), "{err}");
        let err = parse_config_str(
            "[datum]\nname = \"zero\"\n[time]\nv_final = -1.0\n",
            Path::new("x.toml"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("v_final"), "{err}");
    }

    #[test]
    fn config_echo_round_trips() {
        let mut cfg = RunConfig::new("shell_polynomial", &[0.5, 1.0, -0.2, 0.2, 0.01, 0.04, 20.0], 3.0);
        cfg.time.dv = Some(0.0025);
        cfg.grid.r_max = Some(4.1);
        cfg.diagnostics.probe_radii = Some(vec![1.0, 2.5]);
        cfg.output.directory = Some("runs/a".into());
        let text = config_to_toml(&cfg).unwrap();
        assert_eq!(parse_config_str(&text, Path::new("echo")).unwrap(), cfg);
        let plain = RunConfig::new("zero", &[], 1.0);
        let text = config_to_toml(&plain).unwrap();
        assert_eq!(parse_config_str(&text, Path::new("echo")).unwrap(), plain);
    }

    #[test]
    fn series_round_trips_bit_exactly() {
        let rows = vec![
            SeriesRow::from_values([
                0.0,
                1.0 / 3.0,
                2.0f64.sqrt(),
                f64::NAN,
                1e-300,
                0.1,
                -0.0,
                5e-324,
                7.0,
                0.3,
            ]),
            SeriesRow::from_values([0.005, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        emit_series(&rows, &path).unwrap();
        let back = read_series(&path).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("v,N_wedge,M_wedge,N_vee,M_vee,N_slice,M_slice,P_wedge,R_max,R_min\n"));
        assert!(text.contains("NaN"));
    }

    #[test]
    fn zero_datum_run_writes_zero_columns_and_history() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new("zero", &[], 0.5);
        cfg.output.slices = true;
        let (outcome, art) = execute_run(&cfg, dir.path()).unwrap();
        let rows = read_series(art.series.as_ref().unwrap()).unwrap();
        assert_eq!(rows.len(), outcome.history.slices.len());
        for r in &rows {
            assert_eq!([r.n_wedge, r.m_wedge, r.n_slice, r.m_slice], [0.0; 4]);
        }
        let (cfg_back, back) = read_history(art.history.as_ref().unwrap()).unwrap();
        assert_eq!(cfg_back, cfg);
        assert_eq!(back.history, outcome.history);
        assert!(fs::read_to_string(art.slices.unwrap()).unwrap().starts_with("v,shell,"));
    }

    #[test]
    fn history_file_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        fs::write(&path, b"VMLCGRID....").unwrap();
        assert!(matches!(read_history(&path), Err(Error::Format { .. })));
        assert!(matches!(
            read_history(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn report_summary_follows_records() {
        let pass = CheckRecord::new("a", "x", 0.0, 1.0, String::new());
        let skip = CheckRecord::skipped("b", "x", 1.0, String::new());
        let fail = CheckRecord::new("c", "x", 2.0, 1.0, String::new());
        let ok = ReportDocument::new("t", None, vec![pass.clone(), skip.clone()], serde_json::Value::Null);
        assert!(ok.summary.passed && ok.summary.skipped == 1);
        let bad = ReportDocument::new("t", None, vec![pass, skip, fail], serde_json::Value::Null);
        assert!(!bad.summary.passed && bad.summary.failed == 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&bad, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back.summary, bad.summary);
        assert!(back.records[1].residual.is_nan());
        assert!(bad.render_text().contains("FAIL c"));
    }

    #[test]
    fn jacobian_orbits_pass() {
        let cfg = JacobianConfig {
            orbits: 6,
            ..Default::default()
        };
        let doc = jacobian_document(&cfg).unwrap();
        assert!(doc.summary.passed, "{}", doc.render_text());
    }
}

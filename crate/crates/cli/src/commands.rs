//! The work behind each subcommand. Every command writes into one output
//! directory and finishes with a manifest.

use crate::config::Settings;
use crate::error::CliError;
use crate::output::{fmt_g17, table_csv, ArtifactWriter, PALETTE};
use crate::OUT_ENV;
use bmec_ks::kinetics::ModelParams;
use bmec_ks::reconstruct::{
    ingest_image, reconstruct_v_with, ReconstructOptions, DEFAULT_EPS, DEFAULT_U_MIN,
};
use bmec_ks::reduced::{
    bifurcation_scan, find_stationary, heteroclinic_orbits, Seeding, StationaryPoint, SEARCH_HI,
    SEARCH_LO, SEARCH_SAMPLES,
};
use bmec_ks::simulator::{detect_phases, run, sweep_gamma, SimConfig, SimError};
use std::path::{Path, PathBuf};

const SNAPSHOT_COUNT: usize = 6;
const FRAME_EXTENSIONS: &[&str] = &["png", "pgm", "pnm", "ppm", "pbm"];

/// `--out`, else `$BMEC_KS_OUT/<command>`, else `./bmec-ks-out/<command>`.
pub fn output_dir(s: &Settings, command: &str) -> PathBuf {
    if let Some(dir) = s.raw("out") {
        return PathBuf::from(dir);
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("bmec-ks-out").join(command),
    }
}

/// Standard coefficients overridden by any given keys.
pub fn model_params(s: &Settings, default_gamma: Option<f64>) -> Result<ModelParams, CliError> {
    let gamma = match default_gamma {
        Some(g) => s.get_or("gamma", g)?,
        None => s.require("gamma")?,
    };
    let std = ModelParams::standard(gamma);
    let p = ModelParams {
        a: s.get_or("a", std.a)?,
        b: s.get_or("b", std.b)?,
        c: s.get_or("c", std.c)?,
        e: s.get_or("e", std.e)?,
        d_u: s.get_or("d_u", std.d_u)?,
        d_v: s.get_or("d_v", std.d_v)?,
        gamma,
    };
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

/// Default probes: rows 50..=54 of column 50, pulled inside small grids.
fn default_probes(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let mut probes: Vec<(usize, usize)> = (50..55).map(|i| (i.min(ny - 1), 50.min(nx - 1))).collect();
    probes.dedup();
    probes
}

pub fn sim_config(s: &Settings, gamma_default: Option<f64>) -> Result<SimConfig, CliError> {
    let params = model_params(s, gamma_default)?;
    let grid = s.get_grid(100)?;
    let t_end = s.get_or("t_end", 180.0)?;
    let mut cfg = SimConfig::on_grid(grid, params.gamma, t_end);
    cfg.params = params;
    cfg.dt = s.get_or("dt", cfg.dt)?;
    cfg.seed = s.get_or("seed", cfg.seed)?;
    cfg.noise_amplitude = s.get_or("noise", cfg.noise_amplitude)?;
    cfg.record_stride = s.get_or("record_stride", cfg.record_stride)?;
    cfg.positivity_clip = s.get_or("positivity_clip", cfg.positivity_clip)?;
    cfg.clip_budget = s.get_budget(cfg.clip_budget)?;
    cfg.strict_budget = s.get_or("strict_budget", cfg.strict_budget)?;
    cfg.snapshot_times = match s.get_list("snapshot_times")? {
        Some(ts) => ts,
        None => (0..SNAPSHOT_COUNT)
            .map(|k| t_end * k as f64 / (SNAPSHOT_COUNT - 1) as f64)
            .collect(),
    };
    cfg.probes = match s.get_probes()? {
        Some(p) => p,
        None => default_probes(grid.nx(), grid.ny()),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn sim_failure(e: SimError) -> CliError {
    match e {
        SimError::Config(_) | SimError::Params(_) | SimError::GridTooSmall { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn g(x: f64) -> String {
    fmt_g17(x)
}

pub fn simulate(s: &Settings) -> Result<(), CliError> {
    let cfg = sim_config(s, None)?;
    let result = run(&cfg).map_err(sim_failure)?;
    let mut w = ArtifactWriter::create(&output_dir(s, "simulate"))?;

    let index = result
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, snap)| vec![k.to_string(), g(snap.t)]);
    w.write_str("snapshots.csv", &table_csv(&["index", "t"], index))?;
    for (k, snap) in result.snapshots.iter().enumerate() {
        w.write_field(&format!("u_{k:02}"), &snap.u, 0.0, 1.0)?;
        w.write_field(&format!("v_{k:02}"), &snap.v, snap.v.min(), snap.v.max())?;
    }
    let fin = &result.final_state;
    w.write_field("final_u", &fin.u, 0.0, 1.0)?;
    w.write_field("final_v", &fin.v, fin.v.min(), fin.v.max())?;

    let mut phase_notes = Vec::new();
    for probe in &result.probe_series {
        let (i, j) = probe.position;
        let rows = (0..probe.len()).map(|k| {
            vec![
                g(probe.times[k]),
                g(probe.u[k]),
                g(probe.v[k]),
                g(probe.lap_u[k]),
                g(probe.lap_v[k]),
                g(probe.gradu_dot_gradv[k]),
            ]
        });
        w.write_str(
            &format!("probe_{i}_{j}.csv"),
            &table_csv(&["t", "u", "v", "lap_u", "lap_v", "gradu_dot_gradv"], rows),
        )?;
        match detect_phases(probe) {
            Ok(phases) => {
                let rows = phases.iter().enumerate().map(|(k, ph)| {
                    vec![
                        (k + 1).to_string(),
                        ph.label.to_string(),
                        g(ph.t_start),
                        g(ph.t_end),
                        g(ph.mean_rate),
                        g(ph.v_change),
                    ]
                });
                w.write_str(
                    &format!("phases_{i}_{j}.csv"),
                    &table_csv(&["phase", "label", "t_start", "t_end", "mean_rate", "v_change"], rows),
                )?;
            }
            Err(e) => phase_notes.push(format!("phases_{i}_{j} unavailable: {e}")),
        }
    }

    let m = &result.mean_series;
    let rows = (0..m.times.len()).map(|k| vec![g(m.times[k]), g(m.ubar[k]), g(m.vbar[k])]);
    w.write_str("means.csv", &table_csv(&["t", "ubar", "vbar"], rows))?;

    let st = &result.stats;
    let mut summary = format!(
        "outcome {}\nmean {}\nstd_dev {}\nhigh_fraction {}\nboundary_share {}\ncomponents {}\nlargest_share {}\nclipped_mass {}\n",
        result.outcome,
        g(st.mean),
        g(st.std_dev),
        g(st.high_fraction),
        g(st.boundary_share),
        st.components,
        g(st.largest_share),
        g(result.clipped_mass),
    );
    summary.push_str(&match cfg.clip_budget {
        Some(b) => format!("clip_budget {}\n", g(b)),
        None => "clip_budget none\n".into(),
    });
    summary.push_str(&match result.budget_exceeded_at {
        Some(t) => format!("budget_exceeded_at {}\n", g(t)),
        None => "budget_exceeded_at none\n".into(),
    });
    for note in &phase_notes {
        summary.push_str(note);
        summary.push('\n');
    }
    w.write_str("outcome.txt", &summary)?;
    w.write_str("palette.txt", PALETTE)?;

    if let Some(t) = result.budget_exceeded_at {
        eprintln!(
            "warning: clipped mass {} exceeded the budget at t = {t}",
            g(result.clipped_mass)
        );
    }
    let dir = w.dir().to_path_buf();
    w.finish("simulate", s.to_json())?;
    println!("{} -> {}", result.outcome, dir.display());
    Ok(())
}

pub fn sweep(s: &Settings) -> Result<(), CliError> {
    let gammas = s
        .get_list("gammas")?
        .filter(|g| !g.is_empty())
        .ok_or_else(|| CliError::Usage("missing required setting 'gammas' (pass --gammas)".into()))?;
    let mut cfg = sim_config(s, Some(gammas[0]))?;
    for &gamma in &gammas {
        cfg.params
            .with_gamma(gamma)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.snapshot_times.clear();
    cfg.probes.clear();
    let rows = sweep_gamma(&gammas, &cfg);

    let mut failures = 0;
    let table = rows.iter().map(|row| match &row.result {
        Ok((outcome, st, clipped)) => vec![
            g(row.gamma),
            outcome.to_string(),
            g(st.mean),
            g(st.std_dev),
            g(st.high_fraction),
            g(st.boundary_share),
            st.components.to_string(),
            g(st.largest_share),
            g(*clipped),
            String::new(),
        ],
        Err(e) => {
            failures += 1;
            let mut r = vec![g(row.gamma), "ERROR".into()];
            r.extend(std::iter::repeat_n(String::new(), 7));
            r.push(format!("\"{}\"", e.to_string().replace('"', "'")));
            r
        }
    });
    let header = [
        "gamma",
        "outcome",
        "mean",
        "std_dev",
        "high_fraction",
        "boundary_share",
        "components",
        "largest_share",
        "clipped_mass",
        "error",
    ];
    let text = table_csv(&header, table);
    let mut w = ArtifactWriter::create(&output_dir(s, "sweep"))?;
    w.write_str("sweep.csv", &text)?;
    w.finish("sweep", s.to_json())?;
    print!("{text}");
    if failures > 0 {
        return Err(CliError::Runtime(format!("{failures} sweep run(s) failed")));
    }
    Ok(())
}

/// Expands a single directory argument into its image files, sorted by name.
pub fn frame_paths(args: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    if let [dir] = args {
        if dir.is_dir() {
            let entries = std::fs::read_dir(dir)
                .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| FRAME_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
                })
                .collect();
            paths.sort();
            return Ok(paths);
        }
    }
    Ok(args.to_vec())
}

fn quoted(p: &Path) -> String {
    format!("\"{}\"", p.display().to_string().replace('"', "'"))
}

pub fn reconstruct(s: &Settings, args: &[PathBuf]) -> Result<(), CliError> {
    let paths = frame_paths(args)?;
    if paths.len() < 2 {
        return Err(CliError::Usage(format!(
            "need at least two frames, got {}",
            paths.len()
        )));
    }
    let p = model_params(s, Some(0.25))?;
    let grid = s.get_grid(100)?;
    let opts = ReconstructOptions {
        eps: s.get_or("eps", DEFAULT_EPS)?,
        u_min: s.get_or("u_min", DEFAULT_U_MIN)?,
        max_iter: s.get_or("max_iter", 3000)?,
        frame_step: s.get_or("frame_step", 1.0)?,
    };
    if !(opts.eps > 0.0) || !(opts.u_min > 0.0 && opts.u_min < 1.0) || !(opts.frame_step > 0.0) {
        return Err(CliError::Usage(
            "eps and frame_step must be positive and u_min must lie in (0, 1)".into(),
        ));
    }
    let interval: f64 = s.get_or("interval", 1.0)?;

    let frames: Vec<_> = paths.iter().map(|path| ingest_image(path, grid, opts.u_min)).collect();
    let mut w = ArtifactWriter::create(&output_dir(s, "reconstruct"))?;
    let frame_rows = frames.iter().enumerate().map(|(k, f)| {
        let (status, err) = match f {
            Ok(_) => ("ok".to_string(), String::new()),
            Err(e) => ("error".to_string(), format!("\"{}\"", e.to_string().replace('"', "'"))),
        };
        vec![k.to_string(), g(k as f64 * interval), quoted(&paths[k]), status, err]
    });
    w.write_str("frames.csv", &table_csv(&["index", "t", "path", "status", "error"], frame_rows))?;
    for (k, f) in frames.iter().enumerate() {
        if let Err(e) = f {
            eprintln!("frame {k}: {e}");
        }
    }

    let mut faults = frames.iter().filter(|f| f.is_err()).count();
    let mut rows = Vec::new();
    for k in 0..paths.len() - 1 {
        let t = g(k as f64 * interval);
        let base = vec![k.to_string(), t, k.to_string(), (k + 1).to_string()];
        let (Ok(a), Ok(b)) = (&frames[k], &frames[k + 1]) else {
            let mut r = base;
            r.extend(["skipped".into(), String::new(), String::new(), String::new(), String::new()]);
            rows.push(r);
            continue;
        };
        let mut r = base;
        match reconstruct_v_with(a, b, &p, &opts) {
            Ok(rec) => {
                w.write_field(&format!("v_{k:02}"), &rec.v, rec.v.min(), rec.v.max())?;
                let status = if rec.converged { "ok" } else { "not_converged" };
                if !rec.converged {
                    faults += 1;
                    eprintln!("pair {k}: GMRES stopped at residual {:e} after {} iterations", rec.residual, rec.iterations);
                }
                r.extend([
                    status.to_string(),
                    g(rec.residual),
                    rec.iterations.to_string(),
                    rec.converged.to_string(),
                    g(rec.discarded_constant),
                ]);
            }
            Err(e) => {
                faults += 1;
                eprintln!("pair {k}: {e}");
                r.extend(["error".into(), String::new(), String::new(), String::new(), String::new()]);
            }
        }
        rows.push(r);
    }
    let header = [
        "pair",
        "t",
        "frame_a",
        "frame_b",
        "status",
        "residual",
        "iterations",
        "converged",
        "discarded_constant",
    ];
    let text = table_csv(&header, rows);
    w.write_str("reconstruct.csv", &text)?;
    let mut config = s.to_json();
    config.insert(
        "frames".into(),
        paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().into(),
    );
    w.finish("reconstruct", config)?;
    print!("{text}");
    if faults > 0 {
        return Err(CliError::Runtime(format!("{faults} frame or pair fault(s)")));
    }
    Ok(())
}

fn stationary_table(points: &[StationaryPoint]) -> String {
    let rows = points.iter().map(|q| {
        let mut r = vec![
            q.label.map(|l| l.to_string()).unwrap_or_default(),
            g(q.state.u1),
            g(q.state.v1),
            g(q.state.u2),
            g(q.state.v2),
            format!("{:?}", q.stability).to_lowercase(),
        ];
        r.extend(q.eigen_real_parts.iter().map(|&x| g(x)));
        r.push(g(q.residual));
        r.push(g(q.fixed_point_residual));
        r
    });
    table_csv(
        &[
            "label", "u1", "v1", "u2", "v2", "stability", "re1", "re2", "re3", "re4", "residual",
            "fixed_point_residual",
        ],
        rows,
    )
}

fn reduced_failure(e: bmec_ks::reduced::ReducedError) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn reduced_stationary(s: &Settings) -> Result<(), CliError> {
    let p = model_params(s, Some(0.25))?;
    let points = find_stationary(&p, SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES).map_err(reduced_failure)?;
    let text = stationary_table(&points);
    let mut w = ArtifactWriter::create(&output_dir(s, "reduced-stationary"))?;
    w.write_str("stationary.csv", &text)?;
    w.finish("reduced stationary", s.to_json())?;
    print!("{text}");
    Ok(())
}

pub fn reduced_scan(s: &Settings) -> Result<(), CliError> {
    let p = model_params(s, Some(0.25))?;
    let from: f64 = s.get_or("b_from", 10.0)?;
    let to: f64 = s.get_or("b_to", 25.0)?;
    let steps: usize = s.get_or("steps", 31)?;
    if steps < 2 || !(from < to) {
        return Err(CliError::Usage("scan needs b_from < b_to and steps >= 2".into()));
    }
    let bs: Vec<f64> = (0..steps)
        .map(|k| from + (to - from) * k as f64 / (steps - 1) as f64)
        .collect();
    let rows = bifurcation_scan(&bs, &p);
    let mut failures = 0;
    let table = rows.iter().map(|r| match (&r.result, r.count(), r.stable_count()) {
        (Ok(_), Some(n), Some(k)) => vec![g(r.b), n.to_string(), k.to_string(), String::new()],
        (Err(e), _, _) => {
            failures += 1;
            vec![g(r.b), String::new(), String::new(), format!("\"{e}\"")]
        }
        _ => unreachable!("counts exist exactly when the result is Ok"),
    });
    let text = table_csv(&["b", "count", "stable_count", "error"], table);
    let mut w = ArtifactWriter::create(&output_dir(s, "reduced-scan"))?;
    w.write_str("scan.csv", &text)?;
    w.finish("reduced scan", s.to_json())?;
    print!("{text}");
    for pair in rows.windows(2) {
        if let (Some(a), Some(b)) = (pair[0].count(), pair[1].count()) {
            if a != b {
                println!("# count {a} -> {b} between b = {} and b = {}", pair[0].b, pair[1].b);
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Runtime(format!("{failures} scan point(s) failed")));
    }
    Ok(())
}

fn seeding_name(s: Seeding) -> &'static str {
    match s {
        Seeding::SymmetricDown => "symmetric_down",
        Seeding::SymmetricUp => "symmetric_up",
        Seeding::Antisymmetric => "antisymmetric",
    }
}

pub fn reduced_orbits(s: &Settings) -> Result<(), CliError> {
    let p = model_params(s, Some(0.25))?.with_b(s.get_or("b", 25.0)?);
    let dt = s.get_or("dt", 1e-3)?;
    let t_end = s.get_or("t_end", 200.0)?;
    let (points, orbits) = heteroclinic_orbits(&p, dt, t_end).map_err(reduced_failure)?;
    let mut w = ArtifactWriter::create(&output_dir(s, "reduced-orbits"))?;
    w.write_str("stationary.csv", &stationary_table(&points))?;
    for o in &orbits {
        let rows = o.trajectory.iter().map(|(t, q)| vec![g(*t), g(q.u1), g(q.v1), g(q.u2), g(q.v2)]);
        w.write_str(
            &format!("orbit_{}.csv", seeding_name(o.seeding)),
            &table_csv(&["t", "u1", "v1", "u2", "v2"], rows),
        )?;
    }
    let summary = orbits.iter().map(|o| {
        vec![
            seeding_name(o.seeding).to_string(),
            o.endpoint.map(|l| l.to_string()).unwrap_or_else(|| "unresolved".into()),
            g(o.endpoint_distance),
        ]
    });
    let text = table_csv(&["seeding", "endpoint", "distance"], summary);
    w.write_str("orbits.csv", &text)?;
    w.finish("reduced orbits", s.to_json())?;
    print!("{text}");
    let unresolved = orbits.iter().filter(|o| !o.is_resolved()).count();
    if unresolved > 0 {
        return Err(CliError::Runtime(format!("{unresolved} orbit(s) unresolved")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_grid() {
        assert_eq!(default_probes(100, 100), vec![(50, 50), (51, 50), (52, 50), (53, 50), (54, 50)]);
        assert_eq!(default_probes(40, 40), vec![(39, 39)]);
        let s = Settings::parse("gamma = 0.25\nt_end = 3\n").unwrap();
        let cfg = sim_config(&s, None).unwrap();
        assert_eq!(cfg.snapshot_times, vec![0.0, 0.6, 1.2, 1.8, 2.4, 3.0]);
        assert_eq!(cfg.grid.nx(), 100);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let s = Settings::parse("gamma = 1.5\n").unwrap();
        assert!(matches!(sim_config(&s, None), Err(CliError::Usage(_))));
        let s = Settings::parse("t_end = 1\n").unwrap();
        assert!(matches!(sim_config(&s, None), Err(CliError::Usage(_))));
        let s = Settings::parse("gamma = 0.2\nprobes = 200:1\n").unwrap();
        assert!(matches!(sim_config(&s, None), Err(CliError::Usage(_))));
    }
}

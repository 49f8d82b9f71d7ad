use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use coopmud::analysis::{
    asymptotic_efficiency, ber_optimal_union_bound, ber_relay_coded, ber_relay_single, coding_gain,
    mimo_mud_bound, sc_ber_by_user, spectral_efficiency, UnionBoundMode,
};
use coopmud::montecarlo::{preset, run_sweep, SweepResult};
use coopmud::mud::ActiveSet;
use coopmud::{CorrelationMatrix, EfficiencyInputs, LinkBerTable};
use serde::de::DeserializeOwned;

use crate::config::{AnalyzeFile, AnalyzeManifest, EfficiencyManifest, RunInfo, SweepFile};
use crate::format::{probability, value};
use crate::{AnalyzeArgs, Cli, Command, EfficiencyArgs, SweepArgs};

pub const SWEEP_HEADER: &str = "sweep_var,value,protocol,user,ber_mean,ci95_low,ci95_high,trials";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Config(String),
    /// Failure while computing or writing results.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn config_err(context: impl std::fmt::Display) -> impl FnOnce(coopmud::Error) -> CliError {
    move |e| CliError::Config(format!("{context}: {e}"))
}

/// Executes one command, writing CSV to `output` or `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Sweep(args) => cmd_sweep(args, stdout),
        Command::Analyze(args) => cmd_analyze(args, stdout),
        Command::Efficiency(args) => cmd_efficiency(args, stdout),
    }
}

fn now() -> String {
    chrono::Local::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, false)
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn emit(csv: &str, output: Option<&PathBuf>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, csv)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(csv.as_bytes())
            .map_err(|e| CliError::Runtime(format!("cannot write output: {e}"))),
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

fn write_manifest<T: serde::Serialize>(output: &Path, manifest: &T) -> Result<(), CliError> {
    let text = toml::to_string(manifest).map_err(|e| CliError::Runtime(format!("cannot encode manifest: {e}")))?;
    let path = manifest_path(output);
    fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn run_info(command: &str, output: &Path, started: String) -> RunInfo {
    RunInfo {
        command: command.into(),
        tool_version: format!("coopmud {}", env!("CARGO_PKG_VERSION")),
        preset: None,
        seed: None,
        output: output.display().to_string(),
        started,
        finished: now(),
    }
}

/// Resolves flags against the preset or config file.
pub fn resolve_sweep(args: &SweepArgs) -> Result<SweepFile, CliError> {
    let mut file = match (&args.preset, &args.config) {
        (Some(name), None) => {
            let config = preset(name).map_err(|e| CliError::Config(e.to_string()))?;
            SweepFile::from_config(&config, false)
        }
        (None, Some(path)) => read_toml::<SweepFile>(path)?,
        _ => return Err(CliError::Config("exactly one of --preset and --config is required".into())),
    };
    file.seed = Some(args.seed.or(file.seed).unwrap_or(0));
    if let Some(trials) = args.trials {
        file.trials = trials;
    }
    if let Some(detector) = args.detector {
        file.scenario.detector = detector;
    }
    file.per_user |= args.per_user;
    file.run = None;
    Ok(file)
}

fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let started = now();
    let file = resolve_sweep(args)?;
    let config = file.to_config(0);
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let result = run_sweep(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    emit(&sweep_csv(&result, file.per_user, config.trials), args.output.as_ref(), stdout)?;
    if let Some(output) = &args.output {
        let mut info = run_info("sweep", output, started);
        info.preset = args.preset.clone();
        info.seed = Some(config.seed);
        let manifest = SweepFile {
            run: Some(info),
            ..file
        };
        write_manifest(output, &manifest)?;
    }
    Ok(())
}

/// CSV for a sweep: a `mean` row per (value, protocol), preceded by
/// per-user rows when requested.
pub fn sweep_csv(result: &SweepResult, per_user: bool, trials: u64) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    let var = result.variable.label();
    for row in &result.rows {
        let mut line = |user: &str, e: &coopmud::montecarlo::BerEstimate| {
            let _ = writeln!(
                out,
                "{var},{},{},{user},{},{},{},{trials}",
                value(row.value),
                row.protocol,
                probability(e.mean),
                probability(e.ci95_low),
                probability(e.ci95_high),
            );
        };
        if per_user {
            for (k, e) in &row.report.per_user {
                line(&(k + 1).to_string(), e);
            }
        }
        line("mean", &row.report.mean);
    }
    out
}

fn cmd_analyze(args: &AnalyzeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let started = now();
    let input: AnalyzeFile = read_toml(&args.config)?;
    let csv = analyze_csv(&input)?;
    emit(&csv, args.output.as_ref(), stdout)?;
    if let Some(output) = &args.output {
        let manifest = AnalyzeManifest {
            input,
            run: run_info("analyze", output, started),
        };
        write_manifest(output, &manifest)?;
    }
    Ok(())
}

/// Closed-form report as `quantity,user,value` lines.
pub fn analyze_csv(input: &AnalyzeFile) -> Result<String, CliError> {
    let bad = |msg: String| CliError::Config(msg);
    if !(input.sigma >= 0.0) || !input.sigma.is_finite() {
        return Err(bad(format!("sigma = {} must be finite and non-negative", input.sigma)));
    }
    if input.spreading_gain == 0 {
        return Err(bad("spreading_gain must be at least 1".into()));
    }
    let amps = &input.amplitudes;
    if amps.is_empty() {
        return Err(bad("amplitudes is empty".into()));
    }
    if let Some(a) = amps.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
        return Err(bad(format!("amplitude {a} must be finite and non-negative")));
    }
    let k = amps.len();
    let mut out = String::from("quantity,user,value\n");
    let mut line = |quantity: &str, user: Option<usize>, v: f64| {
        let user = user.map(|u| (u + 1).to_string()).unwrap_or_default();
        let _ = writeln!(out, "{quantity},{user},{}", probability(v));
    };

    let sc = sc_ber_by_user(amps, &ActiveSet::all(k), input.sigma, input.spreading_gain)
        .map_err(config_err("sc_ber"))?;
    for (u, p) in sc.into_iter().enumerate() {
        line("sc_ber", Some(u), p);
    }

    let r = match (&input.correlation_rows, input.correlation) {
        (Some(rows), _) => Some(CorrelationMatrix::from_rows(rows).map_err(config_err("correlation_rows"))?),
        (None, Some(rho)) => {
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| if i == j { 1.0 } else { rho }).collect())
                .collect();
            Some(CorrelationMatrix::from_rows(&rows).map_err(config_err("correlation"))?)
        }
        (None, None) => None,
    };
    if let Some(r) = &r {
        for (label, mode) in [
            ("union_bound_all_vectors", UnionBoundMode::AllVectors),
            ("union_bound_indecomposable", UnionBoundMode::Indecomposable),
        ] {
            for u in 0..k {
                let p = ber_optimal_union_bound(r, amps, input.sigma, u, mode).map_err(config_err(label))?;
                line(label, Some(u), p);
            }
        }
    }

    if let Some(s) = &input.relay_single {
        let p = ber_relay_single(s.p_direct, s.p_source_relay, s.p_relay_base).map_err(config_err("relay_single"))?;
        line("relay_single", None, p);
    }

    if let Some(c) = &input.relay_coded {
        let n = c.members.len();
        if c.p_direct.len() != n || c.p_relay_in.len() != n {
            return Err(bad(format!(
                "relay_coded: p_direct and p_relay_in need one entry per member ({n})"
            )));
        }
        if c.members.contains(&0) {
            return Err(bad("relay_coded: members are 1-based".into()));
        }
        let target = c.members.iter().position(|&m| m == c.target).ok_or_else(|| {
            bad(format!("relay_coded: target {} is not a member", c.target))
        })?;
        // members occupy nodes 0..n, the relay is node n
        let mut p_direct = c.p_direct.clone();
        p_direct.push(0.0);
        let p_in: Vec<Vec<f64>> = (0..=n)
            .map(|m| {
                let mut row = vec![0.0; n + 1];
                if m < n {
                    row[n] = c.p_relay_in[m];
                }
                row
            })
            .collect();
        let mut p_out = vec![0.0; n + 1];
        p_out[n] = c.p_relay_out;
        let table = LinkBerTable::new(p_direct, p_in, p_out).map_err(config_err("relay_coded"))?;
        let set: Vec<usize> = (0..n).collect();
        let p = ber_relay_coded(target, &set, n, &table).map_err(config_err("relay_coded"))?;
        line("relay_coded", Some(c.target - 1), p);
    }

    if let Some(g) = &input.coding_gain {
        let mut sorted = amps.clone();
        sorted.sort_by(f64::total_cmp);
        let v = coding_gain(&sorted, input.sigma, input.spreading_gain, g.p_top_old, g.p_top_new)
            .map_err(config_err("coding_gain"))?;
        line("coding_gain", None, v);
    }

    if let Some(m) = &input.mimo_bound {
        let p = mimo_mud_bound(m.p_direct, &m.p_relay_links).map_err(config_err("mimo_bound"))?;
        line("mimo_bound", None, p);
    }

    if let Some(s) = &input.spectral_efficiency {
        let v: f64 = spectral_efficiency(s.users, s.relays).map_err(config_err("spectral_efficiency"))?;
        line("spectral_efficiency", None, v);
    }
    Ok(out)
}

fn cmd_efficiency(args: &EfficiencyArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let started = now();
    let csv = efficiency_csv(args.a1, args.a2, args.rho, &args.ar)?;
    emit(&csv, args.output.as_ref(), stdout)?;
    if let Some(output) = &args.output {
        let manifest = EfficiencyManifest {
            a1: args.a1,
            a2: args.a2,
            rho: args.rho,
            ar: args.ar.clone(),
            run: run_info("efficiency", output, started),
        };
        write_manifest(output, &manifest)?;
    }
    Ok(())
}

/// `ar,eta1` rows, one per relay amplitude.
pub fn efficiency_csv(a1: f64, a2: f64, rho: f64, grid: &[f64]) -> Result<String, CliError> {
    if grid.is_empty() {
        return Err(CliError::Config("the relay amplitude grid is empty".into()));
    }
    let mut out = String::from("ar,eta1\n");
    for &ar in grid {
        let eta = asymptotic_efficiency(EfficiencyInputs { a1, a2, ar, rho }).map_err(config_err("efficiency"))?;
        let _ = writeln!(out, "{},{}", value(ar), probability(eta));
    }
    Ok(out)
}

//! Command-line front end: `run`, `compare`, `audit` and `selftest`.
//!
//! Every run option is a `--key value` flag and, with the same key, a line
//! `key=value` in a file passed through `--config`. Flags override the file.
//! After a run with `--out PATH`, the fully resolved options are written to
//! `PATH.cfg` in the same format; feeding that file back reproduces the run.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O failure,
//! 3 numerical failure, 4 audit found violations or a selftest check failed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgMatches, Command};

use crate::compress::CompressorChoice;
use crate::engine::{
    run, run_centralized_reference, write_csv, write_jsonl, ProblemSpec, RunConfig, Simulation,
};
use crate::error::{Error, Result};
use crate::harness::{audit_descent, compare_methods};
use crate::momentum::MomentumKind;
use crate::schedule::{default_exponents, Granularity, Schedule, DEFAULT_GAMMA0};

/// Keys accepted by `run`, `audit` and `compare`, as flags and in config files.
pub const RUN_KEYS: &[(&str, &str)] = &[
    ("method", "sgdm | igt | rhm | hm | mvr"),
    ("normalized", "true | false (false = plain EF21 step)"),
    ("clients", "number of clients n"),
    ("dim", "dimension d"),
    ("iters", "number of iterations T"),
    ("schedule", "decreasing | constant"),
    ("gamma0", "initial stepsize of the decreasing schedule"),
    ("gamma-exponent", "stepsize exponent p (default depends on method)"),
    ("eta-exponent", "momentum exponent q (default depends on method)"),
    ("granularity", "iter | epoch:L"),
    ("gamma", "stepsize of the constant schedule"),
    ("eta", "momentum parameter of the constant schedule"),
    ("compressor", "identity | topk:F | randk:F with F in (0,1]"),
    ("problem", "quadratic | logreg"),
    ("heterogeneity", "quadratic: client spread"),
    ("condition", "quadratic: condition number"),
    ("samples-per-client", "logreg: rows per client"),
    ("sorted-fraction", "logreg: share of rows dealt by label"),
    ("ridge", "logreg: l2 penalty"),
    ("sigma-g", "gradient noise level"),
    ("sigma-h", "Hessian-vector noise level"),
    ("seed", "master seed"),
    ("record-stride", "full metrics every N iterations"),
    ("rhm-independent-batch", "true | false"),
    ("init-scale", "norm scale of the random initial point"),
    ("parallel", "true | false: client updates on a thread pool"),
];

/// Extra keys of `compare`.
pub const COMPARE_KEYS: &[(&str, &str)] = &[
    ("methods", "comma-separated methods (default: all five)"),
    ("seeds", "comma-separated seeds (default: 0,1,2)"),
    ("eps", "threshold for iterations-to-epsilon"),
];

#[derive(Debug)]
pub enum Invocation {
    Run { config: RunConfig, out: Option<PathBuf>, trace: Option<PathBuf> },
    Compare { config: RunConfig, kinds: Vec<MomentumKind>, seeds: Vec<u64>, eps: f64, out: Option<PathBuf> },
    Audit { config: RunConfig },
    Selftest,
}

fn key_args(keys: &'static [(&'static str, &'static str)]) -> Vec<Arg> {
    keys.iter()
        .map(|(k, help)| Arg::new(*k).long(*k).value_name("VALUE").help(*help).allow_negative_numbers(true))
        .collect()
}

fn command() -> Command {
    let config = Arg::new("config").long("config").value_name("PATH").help("key=value file");
    let out = Arg::new("out").long("out").value_name("PATH");
    Command::new("ef21")
        .about("Normalized EF21 with momentum: simulate, compare, audit")
        .subcommand_required(true)
        .subcommand(
            Command::new("run")
                .about("Run one experiment and write per-iteration metrics")
                .arg(config.clone())
                .arg(out.clone().help("CSV output, or JSON lines if it ends in .jsonl"))
                .arg(Arg::new("trace").long("trace").value_name("PATH").help("binary message trace"))
                .args(key_args(RUN_KEYS)),
        )
        .subcommand(
            Command::new("compare")
                .about("Fit rates for several methods over several seeds")
                .arg(config.clone())
                .arg(out.help("CSV of per-run rows"))
                .args(key_args(RUN_KEYS))
                .args(key_args(COMPARE_KEYS)),
        )
        .subcommand(
            Command::new("audit")
                .about("Check the one-step descent inequality on a noiseless run")
                .arg(config)
                .args(key_args(RUN_KEYS)),
        )
        .subcommand(Command::new("selftest").about("Run the built-in consistency checks"))
}

/// Parses `key=value` lines; blank lines and lines starting with `#` are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config("config", format!("line {}: expected key=value", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn collect_fields(
    m: &ArgMatches,
    keys: &[&[(&'static str, &'static str)]],
) -> Result<BTreeMap<String, String>> {
    let mut fields = match m.get_one::<String>("config") {
        Some(path) => parse_config_text(&std::fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let known: Vec<&str> = keys.iter().flat_map(|ks| ks.iter().map(|(k, _)| *k)).collect();
    if let Some(unknown) = fields.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::config(unknown.clone(), "unknown key in config file"));
    }
    for k in known {
        if let Some(v) = m.get_one::<String>(k) {
            fields.insert(k.to_string(), v.clone());
        }
    }
    Ok(fields)
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => {
                raw.parse().map(Some).map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
            }
        }
    }

    fn parse_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn reject(&mut self, key: &str, why: &str) -> Result<()> {
        match self.take(key) {
            Some(_) => Err(Error::config(key, why)),
            None => Ok(()),
        }
    }
}

fn parse_granularity(raw: &str) -> Result<Granularity> {
    if raw == "iter" {
        return Ok(Granularity::PerIteration);
    }
    raw.strip_prefix("epoch:")
        .and_then(|l| l.parse().ok())
        .filter(|&l| l > 0)
        .map(|epoch_length| Granularity::PerEpoch { epoch_length })
        .ok_or_else(|| Error::config("granularity", format!("expected iter or epoch:L, got `{raw}`")))
}

/// Builds a complete [`RunConfig`] from resolved `key=value` fields.
/// `method` is required unless `method_required` is false, in which case
/// SGDM stands in as a placeholder.
pub fn resolve_config(fields: BTreeMap<String, String>, method_required: bool) -> Result<RunConfig> {
    let mut f = Fields(fields);
    let kind = match f.take("method") {
        Some(m) => m.parse()?,
        None if method_required => {
            return Err(Error::config("method", "required; one of sgdm, igt, rhm, hm, mvr"))
        }
        None => MomentumKind::Sgdm,
    };
    let mut c = RunConfig::new(kind, 10, 200, 1000);
    c.normalized = f.parse_or("normalized", true)?;
    c.n = f.parse_or("clients", c.n)?;
    c.d = f.parse_or("dim", c.d)?;
    c.iters = f.parse_or("iters", c.iters)?;

    let schedule = f.take("schedule").unwrap_or_else(|| "decreasing".into());
    c.schedule = match schedule.as_str() {
        "decreasing" => {
            f.reject("gamma", "only valid with schedule=constant")?;
            f.reject("eta", "only valid with schedule=constant")?;
            let (p0, q0) = default_exponents(kind);
            let granularity = match f.take("granularity") {
                Some(g) => parse_granularity(&g)?,
                None => Granularity::PerIteration,
            };
            Schedule::decreasing(
                f.parse_or("gamma0", DEFAULT_GAMMA0)?,
                f.parse_or("gamma-exponent", p0)?,
                f.parse_or("eta-exponent", q0)?,
                granularity,
            )?
        }
        "constant" => {
            for k in ["gamma0", "gamma-exponent", "eta-exponent", "granularity"] {
                f.reject(k, "only valid with schedule=decreasing")?;
            }
            let gamma =
                f.parse("gamma")?.ok_or_else(|| Error::config("gamma", "required by schedule=constant"))?;
            let eta = f.parse("eta")?.ok_or_else(|| Error::config("eta", "required by schedule=constant"))?;
            Schedule::constant(gamma, eta)?
        }
        other => {
            return Err(Error::config("schedule", format!("expected decreasing or constant, got `{other}`")))
        }
    };

    if let Some(raw) = f.take("compressor") {
        c.compressor = raw.parse()?;
    }
    let problem = f.take("problem").unwrap_or_else(|| "quadratic".into());
    c.problem = match problem.as_str() {
        "quadratic" => {
            for k in ["samples-per-client", "sorted-fraction", "ridge"] {
                f.reject(k, "only valid with problem=logreg")?;
            }
            let ProblemSpec::Quadratic { heterogeneity, condition } = ProblemSpec::default_quadratic() else {
                unreachable!()
            };
            ProblemSpec::Quadratic {
                heterogeneity: f.parse_or("heterogeneity", heterogeneity)?,
                condition: f.parse_or("condition", condition)?,
            }
        }
        "logreg" => {
            for k in ["heterogeneity", "condition"] {
                f.reject(k, "only valid with problem=quadratic")?;
            }
            let ProblemSpec::Logreg { samples_per_client, sorted_fraction, ridge } =
                ProblemSpec::default_logreg()
            else {
                unreachable!()
            };
            ProblemSpec::Logreg {
                samples_per_client: f.parse_or("samples-per-client", samples_per_client)?,
                sorted_fraction: f.parse_or("sorted-fraction", sorted_fraction)?,
                ridge: f.parse_or("ridge", ridge)?,
            }
        }
        other => {
            return Err(Error::config("problem", format!("expected quadratic or logreg, got `{other}`")))
        }
    };
    c.sigma_g = f.parse_or("sigma-g", 0.0)?;
    c.sigma_h = f.parse_or("sigma-h", 0.0)?;
    c.seed = f.parse_or("seed", 0)?;
    c.record_stride = f.parse_or("record-stride", 1)?;
    c.rhm_independent_batch = f.parse_or("rhm-independent-batch", false)?;
    c.init_scale = f.parse_or("init-scale", c.init_scale)?;
    c.parallel = f.parse_or("parallel", false)?;
    if let Some(k) = f.0.keys().next() {
        return Err(Error::config(k.clone(), "not a run option"));
    }
    c.validate()?;
    Ok(c)
}

/// The resolved configuration as `key=value` pairs accepted by [`resolve_config`].
pub fn config_pairs(c: &RunConfig) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("method", c.kind.to_string()),
        ("normalized", c.normalized.to_string()),
        ("clients", c.n.to_string()),
        ("dim", c.d.to_string()),
        ("iters", c.iters.to_string()),
    ];
    match c.schedule {
        Schedule::Decreasing { gamma0, p, q, granularity } => {
            out.push(("schedule", "decreasing".into()));
            out.push(("gamma0", gamma0.to_string()));
            out.push(("gamma-exponent", p.to_string()));
            out.push(("eta-exponent", q.to_string()));
            out.push((
                "granularity",
                match granularity {
                    Granularity::PerIteration => "iter".into(),
                    Granularity::PerEpoch { epoch_length } => format!("epoch:{epoch_length}"),
                },
            ));
        }
        Schedule::Constant { gamma, eta } => {
            out.push(("schedule", "constant".into()));
            out.push(("gamma", gamma.to_string()));
            out.push(("eta", eta.to_string()));
        }
    }
    out.push(("compressor", c.compressor.to_string()));
    match c.problem {
        ProblemSpec::Quadratic { heterogeneity, condition } => {
            out.push(("problem", "quadratic".into()));
            out.push(("heterogeneity", heterogeneity.to_string()));
            out.push(("condition", condition.to_string()));
        }
        ProblemSpec::Logreg { samples_per_client, sorted_fraction, ridge } => {
            out.push(("problem", "logreg".into()));
            out.push(("samples-per-client", samples_per_client.to_string()));
            out.push(("sorted-fraction", sorted_fraction.to_string()));
            out.push(("ridge", ridge.to_string()));
        }
    }
    out.extend([
        ("sigma-g", c.sigma_g.to_string()),
        ("sigma-h", c.sigma_h.to_string()),
        ("seed", c.seed.to_string()),
        ("record-stride", c.record_stride.to_string()),
        ("rhm-independent-batch", c.rhm_independent_batch.to_string()),
        ("init-scale", c.init_scale.to_string()),
        ("parallel", c.parallel.to_string()),
    ]);
    out
}

pub fn config_text(c: &RunConfig) -> String {
    config_pairs(c).into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::config(key, format!("cannot parse `{s}`"))))
        .collect()
}

/// Parses a full command line (including the program name).
pub fn parse_and_validate<I, T>(argv: I) -> std::result::Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(argv).map_err(CliError::Clap)?;
    let path = |m: &ArgMatches, k: &str| m.get_one::<String>(k).map(PathBuf::from);
    let inv = match matches.subcommand() {
        Some(("run", m)) => Invocation::Run {
            config: resolve_config(collect_fields(m, &[RUN_KEYS])?, true)?,
            out: path(m, "out"),
            trace: path(m, "trace"),
        },
        Some(("audit", m)) => {
            Invocation::Audit { config: resolve_config(collect_fields(m, &[RUN_KEYS])?, true)? }
        }
        Some(("compare", m)) => {
            let mut fields = collect_fields(m, &[RUN_KEYS, COMPARE_KEYS])?;
            let kinds = match fields.remove("methods") {
                Some(raw) => parse_list("methods", &raw)?,
                None => MomentumKind::ALL.to_vec(),
            };
            let seeds = match fields.remove("seeds") {
                Some(raw) => parse_list("seeds", &raw)?,
                None => vec![0, 1, 2],
            };
            let eps = match fields.remove("eps") {
                Some(raw) => {
                    raw.parse().map_err(|_| Error::config("eps", format!("cannot parse `{raw}`")))?
                }
                None => 1e-2,
            };
            Invocation::Compare {
                config: resolve_config(fields, false)?,
                kinds,
                seeds,
                eps,
                out: path(m, "out"),
            }
        }
        Some(("selftest", _)) => Invocation::Selftest,
        _ => unreachable!("subcommand is required"),
    };
    Ok(inv)
}

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 2,
        Error::NumericalFailure { .. } => 3,
        _ => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn cfg_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Runs `inv`, printing human-readable output to `stdout`; returns the exit code.
pub fn execute(inv: &Invocation, stdout: &mut dyn Write) -> Result<i32> {
    match inv {
        Invocation::Run { config, out, trace } => {
            // Open everything before the run so bad paths fail fast.
            let mut sink = out.as_deref().map(create).transpose()?;
            let mut sim = Simulation::new(config.clone())?;
            if let Some(p) = trace {
                sim.set_trace_sink(Box::new(create(p)?));
            }
            sim.run_to_end()?;
            let records = sim.trajectory().records;
            let jsonl = out.as_deref().is_some_and(|p| p.extension().is_some_and(|e| e == "jsonl"));
            match sink.as_mut() {
                Some(w) if jsonl => write_jsonl(&records, w)?,
                Some(w) => write_csv(&records, w)?,
                None => write_csv(&records, &mut *stdout)?,
            }
            if let (Some(w), Some(p)) = (sink, out) {
                w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                std::fs::write(cfg_path(p), config_text(config))?;
            }
            Ok(0)
        }
        Invocation::Compare { config, kinds, seeds, eps, out } => {
            let mut sink = out.as_deref().map(create).transpose()?;
            let report = compare_methods(config, kinds, seeds, *eps)?;
            writeln!(stdout, "{report}")?;
            if let Some(w) = sink.as_mut() {
                report.write_csv(&mut *w)?;
                w.flush()?;
            }
            Ok(0)
        }
        Invocation::Audit { config } => {
            let mut sim = Simulation::new(config.clone())?;
            sim.run_to_end()?;
            let c = sim.problem().constants();
            let report = audit_descent(&sim.trajectory(), c.l, c.f_inf)?;
            writeln!(
                stdout,
                "descent audit: {} violations in {} steps (worst margin {:.3e})",
                report.violation_count(),
                report.checked,
                report.worst_margin
            )?;
            if !c.f_inf_exact {
                writeln!(stdout, "note: f_inf is a numerical estimate")?;
            }
            Ok(if report.violation_count() == 0 { 0 } else { 4 })
        }
        Invocation::Selftest => {
            let ok = selftest(stdout)?;
            Ok(if ok { 0 } else { 4 })
        }
    }
}

/// Consistency checks: η = 1 collapse, identity-compressor collapse and
/// equivalence with centralized normalized momentum SGD.
pub fn selftest(out: &mut dyn Write) -> Result<bool> {
    let mut all = true;
    let mut report = |name: &str, ok: bool, out: &mut dyn Write| -> Result<()> {
        writeln!(out, "{:<44} {}", name, if ok { "ok" } else { "FAILED" })?;
        all &= ok;
        Ok(())
    };

    // With η = 1 every estimator is the fresh exact gradient.
    let mut ok = true;
    for kind in MomentumKind::ALL {
        let mut c = RunConfig::new(kind, 3, 12, 30);
        c.schedule = Schedule::constant(0.05, 1.0)?;
        let out = run(&c)?;
        ok &= out.trajectory.records.iter().all(|r| r.u_t == 0.0);
    }
    report("eta = 1 collapses momentum to the gradient", ok, out)?;

    // Identity compression keeps g_i equal to v_i.
    let mut ok = true;
    for kind in MomentumKind::ALL {
        let mut c = RunConfig::new(kind, 4, 12, 50);
        c.compressor = CompressorChoice::Identity;
        c.sigma_g = 0.1;
        c.sigma_h = 0.1;
        let out = run(&c)?;
        ok &= out.trajectory.records.iter().all(|r| r.v_t == 0.0);
    }
    report("identity compressor keeps g_i = v_i", ok, out)?;

    let mut ok = true;
    for kind in MomentumKind::ALL {
        for sigma in [0.0, 0.1] {
            let mut c = RunConfig::new(kind, 1, 12, 100);
            c.compressor = CompressorChoice::Identity;
            c.sigma_g = sigma;
            c.sigma_h = sigma;
            c.schedule = Schedule::for_kind(kind, 0.1, Granularity::PerIteration)?;
            let reference = run_centralized_reference(&c)?;
            let mut sim = Simulation::new(c)?;
            for x_ref in &reference[1..] {
                sim.step()?;
                let x = &sim.server().x;
                ok &= x.as_slice().iter().zip(x_ref.as_slice()).all(|(a, b)| (a - b).abs() <= 1e-12);
            }
        }
    }
    report("single client matches centralized method", ok, out)?;

    if all {
        writeln!(out, "all checks passed")?;
    }
    Ok(all)
}

/// Entry point of the `ef21` binary.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match parse_and_validate(argv) {
        Ok(inv) => inv,
        Err(CliError::Clap(e)) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&inv, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &str) -> std::result::Result<Invocation, CliError> {
        parse_and_validate(std::iter::once("ef21").chain(args.split_whitespace()))
    }

    fn run_config(args: &str) -> RunConfig {
        match parse(args).unwrap() {
            Invocation::Run { config, .. } => config,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_map_to_config() {
        let c = run_config(
            "run --method mvr --clients 10 --dim 200 --iters 100000 --compressor topk:0.1 --seed 1 --out m.csv",
        );
        assert_eq!(c.kind, MomentumKind::Mvr);
        assert_eq!((c.n, c.d, c.iters, c.seed), (10, 200, 100_000, 1));
        assert_eq!(
            c.compressor.resolve(c.d).unwrap().kind(),
            crate::compress::CompressorKind::TopK { k: 20 }
        );
    }

    #[test]
    fn default_gamma0() {
        let c = run_config("run --method sgdm");
        assert_eq!(c.schedule.gamma_at(0), 1.0);
        assert_eq!(
            c.schedule,
            Schedule::for_kind(MomentumKind::Sgdm, 1.0, Granularity::PerIteration).unwrap()
        );
    }

    #[test]
    fn unknown_method_lists_kinds() {
        let Err(CliError::Run(e)) = parse("run --method xyz") else { panic!() };
        let msg = e.to_string();
        for k in ["sgdm", "igt", "rhm", "hm", "mvr"] {
            assert!(msg.contains(k), "{msg}");
        }
    }

    #[test]
    fn missing_method_names_field() {
        let Err(CliError::Run(Error::Config { field, .. })) = parse("run --iters 5") else { panic!() };
        assert_eq!(field, "method");
    }

    #[test]
    fn unknown_flag_and_bad_number() {
        assert!(matches!(parse("run --method sgdm --bogus 1"), Err(CliError::Clap(_))));
        let Err(CliError::Run(Error::Config { field, .. })) = parse("run --method sgdm --iters ten") else {
            panic!()
        };
        assert_eq!(field, "iters");
    }

    #[test]
    fn constant_schedule_requires_both_values() {
        assert!(parse("run --method sgdm --schedule constant --gamma 0.1").is_err());
        let c = run_config("run --method sgdm --schedule constant --gamma 0.1 --eta 0.5");
        assert_eq!(c.schedule, Schedule::constant(0.1, 0.5).unwrap());
    }

    #[test]
    fn config_text_round_trips() {
        let c = run_config(
            "run --method rhm --granularity epoch:7 --problem logreg --sorted-fraction 0.3 --sigma-g 0.1 --gamma0 0.37",
        );
        let again = resolve_config(parse_config_text(&config_text(&c)).unwrap(), true).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let mut map = parse_config_text("method=sgdm\nwidth=3\n").unwrap();
        map.insert("dim".into(), "4".into());
        assert!(resolve_config(map, true).is_err());
    }
}

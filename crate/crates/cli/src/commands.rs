use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use stoq::analytics::{self, AnalyticsError, Well};
use stoq::config::{parse_n_list, ConfigError, ProblemConfig};
use stoq::fit::LinearFit;
use stoq::harness::{
    self, CalibrationOptions, HarnessError, SeriesOptions, SpikeComparison, SpikeOptions,
};
use stoq::model::{AnnealPoint, ModelError, ProblemInstance, Schedule};
use stoq::output::{self, CsvWriter, OutputError, RunManifest};
use stoq::potentials::SpikeParams;
use stoq::spectral::{self, QuantumCostSeries, ScanOptions, SeriesFailure, SpectralError};
use stoq::ssmc::{self, AnnealOptions, SsmcError, TrialRecord};
use thiserror::Error;

use crate::args::*;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Ssmc(#[from] SsmcError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("no size in the list completed")]
    NothingCompleted,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_)
            | CliError::Config(_)
            | CliError::Model(_)
            | CliError::Io(_)
            | CliError::Output(_)
            | CliError::Harness(HarnessError::Config(_)) => 1,
            _ => 2,
        }
    }
}

/// A completed command; `flagged` maps to exit code 3.
pub struct Outcome {
    pub flagged: bool,
}

struct Context<'a> {
    common: &'a Common,
    manifest: RunManifest,
}

impl<'a> Context<'a> {
    fn new(common: &'a Common, command: &str) -> Self {
        Context {
            common,
            manifest: RunManifest::new(command).with_seed(common.seed),
        }
    }

    fn seed(&self) -> u64 {
        self.common.seed
    }

    fn param<T: serde::Serialize>(&mut self, key: &str, value: T) {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.manifest.parameters.insert(key.into(), value);
    }

    fn flag(&mut self, message: String) {
        eprintln!("flag: {message}");
        self.manifest.flags.push(message);
    }

    fn open(&self) -> Result<Box<dyn Write>, CliError> {
        open_path(&self.common.out)
    }

    fn finish(self) -> Result<Outcome, CliError> {
        if self.common.out != "-" {
            let path = format!("{}.manifest.json", self.common.out);
            fs::write(&path, self.manifest.to_json_pretty() + "\n")?;
        }
        Ok(Outcome {
            flagged: !self.manifest.flags.is_empty(),
        })
    }
}

fn open_path(path: &str) -> Result<Box<dyn Write>, CliError> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let f = File::create(path)
            .map_err(|e| CliError::Usage(format!("cannot create {path}: {e}")))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn read_config(path: &Path) -> Result<ProblemConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    Ok(ProblemConfig::from_json(&text)?)
}

/// Config from a file, or the default double well; `n` overrides either.
fn load_problem(config: Option<&Path>, n: Option<usize>) -> Result<ProblemConfig, CliError> {
    let mut cfg = match (config, n) {
        (Some(path), _) => read_config(path)?,
        (None, Some(n)) => ProblemConfig::double_well(n),
        (None, None) => return Err(CliError::Usage("give a config file or --n".into())),
    };
    if let Some(n) = n {
        cfg.n = n;
    }
    cfg.instance()?;
    Ok(cfg)
}

fn n_list(text: &str) -> Result<Vec<usize>, CliError> {
    Ok(parse_n_list(text)?)
}

fn schedule(
    cfg: &ProblemConfig,
    instance: &ProblemInstance,
    args: &ScheduleArgs,
) -> Result<Schedule, CliError> {
    let from_cfg = cfg.schedule;
    let steps = args
        .steps
        .or(from_cfg.map(|s| s.total_steps))
        .ok_or_else(|| {
            CliError::Usage("no step count: pass --steps or a config schedule".into())
        })?;
    let dt = args
        .dt
        .or(from_cfg.and_then(|s| s.dt))
        .unwrap_or_else(|| ssmc::default_dt(instance));
    Ok(Schedule::linear(steps, dt)?)
}

fn calibration_options(args: &CalibrationArgs, mode: Mode) -> CalibrationOptions {
    CalibrationOptions {
        trials: args.trials,
        min_walkers: args.min_walkers,
        max_walkers: args.max_walkers,
        mode: mode.into(),
        ..CalibrationOptions::default()
    }
}

fn report_fit(label: &str, fit: Option<&LinearFit>) {
    match fit {
        Some(f) => eprintln!(
            "{label}: slope {:.6} intercept {:.6} r2 {:.6} max|residual| {:.3e}",
            f.slope,
            f.intercept,
            f.r_squared,
            f.max_abs_residual()
        ),
        None => eprintln!("{label}: n/a (needs at least two valid sizes)"),
    }
}

fn record_failures(ctx: &mut Context, failures: &[SeriesFailure]) {
    for f in failures {
        ctx.flag(format!("n = {}: {}", f.n, f.reason));
    }
}

pub fn gap(common: &Common, args: &GapArgs) -> Result<Outcome, CliError> {
    let cfg = load_problem(Some(&args.config), args.n)?;
    let instance = cfg.instance()?;
    let mut ctx = Context::new(common, "gap");
    ctx.manifest = ctx.manifest.with_config(&cfg);
    ctx.param("s_points", args.s_points);

    let curve = spectral::min_gap_scan(&instance, args.s_points)?;
    let mut csv = CsvWriter::new(ctx.open()?, output::GAP_CURVE_HEADER)?;
    for (s, g) in &curve.samples {
        csv.row(&[s, g])?;
    }
    csv.finish()?;
    eprintln!(
        "n {} s_star {} gamma_min {} cost {}",
        instance.n(),
        output::format_g17(curve.s_star),
        output::format_g17(curve.gamma_min),
        output::format_g17(curve.cost)
    );
    if curve.boundary_minimum {
        ctx.flag("gap minimum lies at the edge of the scan".into());
    }
    ctx.finish()
}

fn write_quantum_costs(
    ctx: &mut Context,
    series: &QuantumCostSeries,
    label: &str,
) -> Result<(), CliError> {
    let mut csv = CsvWriter::new(ctx.open()?, output::QUANTUM_COST_HEADER)?;
    for p in &series.points {
        csv.row(&[&p.n, &p.s_star, &p.gamma_min, &p.cost])?;
    }
    csv.finish()?;
    report_fit(label, series.loglog_fit().as_ref());
    record_failures(ctx, &series.failures);
    if series.points.is_empty() {
        return Err(CliError::NothingCompleted);
    }
    Ok(())
}

pub fn quantum_cost(common: &Common, args: &QuantumCostArgs) -> Result<Outcome, CliError> {
    let ns = n_list(&args.n_list)?;
    let template = match &args.config {
        Some(path) => read_config(path)?,
        None => ProblemConfig::double_well(ns[0]),
    };
    let mut ctx = Context::new(common, "quantum-cost");
    ctx.manifest = ctx.manifest.with_config(&template);
    ctx.param("n_list", &ns);
    ctx.param("s_points", args.s_points);
    let opts = ScanOptions {
        coarse_points: args.s_points,
        ..ScanOptions::default()
    };
    let series = spectral::quantum_cost_series(&ns, &opts, |n| template.instance_for(n));
    write_quantum_costs(&mut ctx, &series, "log-log slope of cost vs n")?;
    ctx.finish()
}

pub fn ssmc_run(common: &Common, args: &RunArgs) -> Result<Outcome, CliError> {
    let cfg = load_problem(args.problem.config.as_deref(), args.problem.n)?;
    let instance = cfg.instance()?;
    let sch = schedule(&cfg, &instance, &args.schedule)?;
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let mut ctx = Context::new(common, "ssmc run");
    ctx.manifest = ctx.manifest.with_config(&cfg);
    ctx.param("walkers", args.walkers);
    ctx.param("trials", args.trials);
    ctx.param("timesteps", sch.total_steps());
    ctx.param("dt", sch.dt());
    ctx.param("mode", ssmc::WalkerMode::from(args.schedule.mode));
    ctx.param("snapshot_stride", args.snapshots.unwrap_or(0));

    let records = (0..args.trials as u64)
        .map(|k| {
            let opts = AnnealOptions::new(args.walkers, stoq::seed::derive_seed(common.seed, k))
                .with_snapshot_stride(args.snapshots.unwrap_or(0))
                .with_mode(args.schedule.mode.into());
            ssmc::run_anneal(&instance, &sch, &opts)
        })
        .collect::<Result<Vec<TrialRecord>, _>>()?;
    output::write_jsonl(ctx.open()?, &records)?;

    if let Some(path) = &args.csv {
        write_snapshot_csv(path, &records)?;
    }
    let wins = records.iter().filter(|r| r.success).count();
    let extinct = records.iter().filter(|r| r.extinct).count();
    eprintln!("success {wins}/{} extinct {extinct}", records.len());
    ctx.finish()
}

fn write_snapshot_csv(path: &Path, records: &[TrialRecord]) -> Result<(), CliError> {
    let mut totals: BTreeMap<usize, (f64, Vec<u64>)> = BTreeMap::new();
    for r in records {
        for snap in &r.snapshots {
            let entry = totals
                .entry(snap.step)
                .or_insert_with(|| (snap.s, vec![0; snap.histogram.len()]));
            for (acc, c) in entry.1.iter_mut().zip(&snap.histogram) {
                *acc += c;
            }
        }
    }
    let out = open_path(&path.to_string_lossy())?;
    let mut csv = CsvWriter::new(out, output::SNAPSHOT_HEADER)?;
    for (step, (s, hist)) in &totals {
        for (w, c) in hist.iter().enumerate() {
            csv.row(&[step, s, &w, c])?;
        }
    }
    csv.finish()?;
    Ok(())
}

pub fn ssmc_calibrate(common: &Common, args: &CalibrateArgs) -> Result<Outcome, CliError> {
    let cfg = load_problem(args.problem.config.as_deref(), args.problem.n)?;
    let instance = cfg.instance()?;
    let sch = schedule(&cfg, &instance, &args.schedule)?;
    let opts = calibration_options(&args.calibration, args.schedule.mode);
    let mut ctx = Context::new(common, "ssmc calibrate");
    ctx.manifest = ctx.manifest.with_config(&cfg);
    ctx.param("timesteps", sch.total_steps());
    ctx.param("dt", sch.dt());
    ctx.param("calibration", opts);

    let cal = harness::calibrate_walkers(&instance, &sch, &opts, common.seed)?;
    output::write_jsonl(ctx.open()?, std::slice::from_ref(&cal))?;
    eprintln!(
        "walkers {} success_rate {} trials {}",
        cal.walkers, cal.success_rate, cal.trials
    );
    for f in &cal.flags {
        ctx.flag(format!(
            "calibration: {}",
            serde_json::to_string(f).unwrap_or_default()
        ));
    }
    ctx.finish()
}

pub fn ssmc_series(common: &Common, args: &SeriesArgs) -> Result<Outcome, CliError> {
    let ns = n_list(&args.n_list)?;
    let template = match &args.config {
        Some(path) => read_config(path)?,
        None => ProblemConfig::double_well(ns[0]),
    };
    let steps = args
        .schedule
        .steps
        .or(template.schedule.map(|s| s.total_steps))
        .unwrap_or(harness::DEFAULT_SCHEDULE_STEPS);
    let dt = args.schedule.dt.or(template.schedule.and_then(|s| s.dt));
    let opts = SeriesOptions {
        schedule_steps: steps,
        dt,
        repetitions: args.repetitions,
        calibration: calibration_options(&args.calibration, args.schedule.mode),
    };
    let mut ctx = Context::new(common, "ssmc series");
    ctx.manifest = ctx.manifest.with_config(&template);
    ctx.param("n_list", &ns);
    ctx.param("series", opts);
    ctx.param("trials_per_rep", args.calibration.trials);

    let series = harness::ssmc_cost_series(&ns, &opts, |n| template.instance_for(n), ctx.seed())?;
    let mut csv = CsvWriter::new(ctx.open()?, output::COST_SERIES_HEADER)?;
    for p in &series.points {
        csv.row(&[&p.n, &p.cost, &p.std, &p.walkers, &p.success_rate])?;
    }
    csv.finish()?;
    if let Some(path) = &args.jsonl {
        output::write_jsonl(open_path(&path.to_string_lossy())?, &series.points)?;
    }
    report_fit(
        "semilog fit of ln cost vs sqrt(n)",
        series.semilog_fit().as_ref(),
    );
    for cal in &series.calibrations {
        for f in &cal.flags {
            ctx.flag(format!(
                "n = {} calibration: {}",
                cal.n,
                serde_json::to_string(f).unwrap_or_default()
            ));
        }
    }
    record_failures(&mut ctx, &series.failures);
    ctx.finish()
}

fn prediction_sizes(args: &PredictArgs) -> Result<(ProblemConfig, Vec<usize>), CliError> {
    let ns = match (&args.n_list, args.n) {
        (Some(list), _) => n_list(list)?,
        (None, Some(n)) => vec![n],
        (None, None) => match &args.config {
            Some(path) => vec![read_config(path)?.n],
            None => return Err(CliError::Usage("give --n, --n-list or a config".into())),
        },
    };
    let template = match &args.config {
        Some(path) => read_config(path)?,
        None => ProblemConfig::double_well(ns[0]),
    };
    if template.problem != stoq::model::ProblemKind::DoubleWell {
        return Err(CliError::Usage(
            "predictions apply to the double well only".into(),
        ));
    }
    Ok((template, ns))
}

pub fn predict(common: &Common, args: &PredictArgs, which: &str) -> Result<Outcome, CliError> {
    let (template, ns) = prediction_sizes(args)?;
    let mut ctx = Context::new(common, &format!("predict {which}"));
    ctx.manifest = ctx.manifest.with_config(&template);
    ctx.param("n_list", &ns);
    let mut csv = CsvWriter::new(ctx.open()?, output::PREDICTION_HEADER)?;
    let mut rows = Vec::new();
    for &n in &ns {
        let inst = template.instance_for(n)?;
        let p = inst.double_well_params().expect("double well");
        let row = analytics::predictions(p)?;
        csv.row(&[
            &row.n,
            &row.gamma_tb,
            &row.gamma_exact,
            &row.pr_exact,
            &row.pr_approx,
        ])?;
        if !analytics::tight_binding_gap(p).in_regime {
            rows.push(n);
        }
        match which {
            "tb-gap" => eprintln!(
                "n {n} gamma_tb {} gamma_exact {}",
                output::format_g17(row.gamma_tb),
                output::format_g17(row.gamma_exact)
            ),
            _ => eprintln!(
                "n {n} pr_exact {} pr_approx {}",
                output::format_g17(row.pr_exact),
                output::format_g17(row.pr_approx)
            ),
        }
    }
    csv.finish()?;
    for n in rows {
        ctx.flag(format!(
            "n = {n}: delta^2 omega <= 3, outside the tight-binding regime"
        ));
    }
    ctx.finish()
}

pub fn predict_dist(common: &Common, args: &DistArgs) -> Result<Outcome, CliError> {
    let cfg = load_problem(args.problem.config.as_deref(), args.problem.n)?;
    let instance = cfg.instance()?;
    let mut ctx = Context::new(common, "predict dist");
    ctx.manifest = ctx.manifest.with_config(&cfg);
    let dist = if args.exact {
        ctx.param("source", "ground_state");
        ctx.param("s", args.s);
        analytics::ground_state_distribution(&instance, AnnealPoint::new(args.s)?)?
    } else {
        let p = instance.double_well_params().ok_or_else(|| {
            CliError::Usage("Gaussian well states need a double well; use --exact".into())
        })?;
        let well = match args.well {
            WellArg::Left => Well::Left,
            WellArg::Right => Well::Right,
        };
        ctx.param("source", format!("{well:?}").to_lowercase());
        analytics::classical_distribution(&analytics::gaussian_well(p, well))?
    };
    let mut csv = CsvWriter::new(ctx.open()?, output::DISTRIBUTION_HEADER)?;
    for (w, prob) in dist.probabilities().iter().enumerate() {
        csv.row(&[&w, prob])?;
    }
    csv.finish()?;
    ctx.finish()
}

fn flag_alpha(ctx: &mut Context, alpha: f64, n: usize) -> Result<(), CliError> {
    let p = SpikeParams::new(n, alpha)?;
    if !p.in_tunnelling_regime() {
        ctx.flag(format!(
            "alpha = {alpha} gives a unit barrier, outside the tunnelling regime"
        ));
    }
    Ok(())
}

fn scan(points: usize) -> ScanOptions {
    ScanOptions {
        coarse_points: points,
        ..ScanOptions::default()
    }
}

fn spike_options(args: &SpikeSsmcArgs, s_points: usize) -> SpikeOptions {
    SpikeOptions {
        alpha: args.alpha,
        walkers: args.walkers,
        steps_per_n: args.steps_per_n,
        min_steps: args.min_steps,
        repetitions: args.repetitions,
        trials_per_rep: args.trials,
        mode: args.mode.into(),
        scan: scan(s_points),
    }
}

pub fn spike_gap(common: &Common, args: &SpikeGapArgs) -> Result<Outcome, CliError> {
    let ns = n_list(&args.n_list)?;
    let mut ctx = Context::new(common, "spike gap");
    flag_alpha(&mut ctx, args.alpha, ns[0])?;
    ctx.param("alpha", args.alpha);
    ctx.param("n_list", &ns);
    ctx.param("s_points", args.s_points);
    let series = spectral::quantum_cost_series(&ns, &scan(args.s_points), |n| {
        SpikeParams::new(n, args.alpha).map(ProblemInstance::spike)
    });
    write_quantum_costs(&mut ctx, &series, "adiabatic power-law exponent")?;
    ctx.finish()
}

fn write_cost_points(out: Box<dyn Write>, points: &[harness::CostPoint]) -> Result<(), CliError> {
    let mut csv = CsvWriter::new(out, output::COST_SERIES_HEADER)?;
    for p in points {
        csv.row(&[&p.n, &p.cost, &p.std, &p.walkers, &p.success_rate])?;
    }
    csv.finish()?;
    Ok(())
}

pub fn spike_ssmc(common: &Common, args: &SpikeSsmcArgs) -> Result<Outcome, CliError> {
    let ns = n_list(&args.n_list)?;
    let opts = spike_options(args, spectral::DEFAULT_COARSE_POINTS);
    let mut ctx = Context::new(common, "spike ssmc");
    flag_alpha(&mut ctx, args.alpha, ns[0])?;
    ctx.param("n_list", &ns);
    ctx.param("spike", opts);
    ctx.param(
        "timesteps",
        ns.iter().map(|&n| opts.timesteps(n)).collect::<Vec<_>>(),
    );
    let (points, failures) = harness::spike_ssmc_series(&ns, &opts, ctx.seed())?;
    write_cost_points(ctx.open()?, &points)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.n as f64, p.cost)).unzip();
    report_fit(
        "SSMC power-law exponent",
        stoq::fit::power_law(&xs, &ys).as_ref(),
    );
    record_failures(&mut ctx, &failures);
    ctx.finish()
}

pub fn spike_compare(common: &Common, args: &SpikeCompareArgs) -> Result<Outcome, CliError> {
    let ns = n_list(&args.ssmc.n_list)?;
    let opts = spike_options(&args.ssmc, args.s_points);
    let mut ctx = Context::new(common, "spike compare");
    flag_alpha(&mut ctx, args.ssmc.alpha, ns[0])?;
    ctx.param("n_list", &ns);
    ctx.param("spike", opts);
    let cmp: SpikeComparison = harness::spike_comparison(&ns, &opts, ctx.seed())?;
    let mut out = ctx.open()?;
    serde_json::to_writer_pretty(&mut out, &cmp).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    report_fit("adiabatic power-law exponent", cmp.adiabatic_fit.as_ref());
    report_fit("SSMC power-law exponent", cmp.ssmc_fit.as_ref());
    match cmp.exponent_gap() {
        Ok(gap) => eprintln!("exponent difference (SSMC - adiabatic) {gap:.6}"),
        Err(e) => ctx.flag(format!("exponent difference unavailable: {e}")),
    }
    record_failures(&mut ctx, &cmp.adiabatic.failures);
    record_failures(&mut ctx, &cmp.ssmc_failures);
    ctx.finish()
}

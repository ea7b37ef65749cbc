//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if the set of failing criteria differs from `EXPECTED_FAIL`.
//!
//! Run alone with `cargo test -p stoq-core --test acceptance`; pass criterion
//! numbers as arguments to run a subset.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::ThreadPoolBuilder;
use stoq::analytics::{
    classical_distribution, gaussian_well, ground_state_distribution, right_well_mass_approx,
    right_well_mass_exact, tight_binding_gap, Well,
};
use stoq::config::ConfigError;
use stoq::fit::{power_law, semilog_sqrt};
use stoq::harness::{self, SeriesOptions, SpikeOptions};
use stoq::model::{AnnealPoint, DoubleWellParams, ProblemInstance, Schedule};
use stoq::output::{self, CsvWriter};
use stoq::spectral::{self, hopping_amplitude, ScanOptions, SymmetricTridiagonal};
use stoq::ssmc::{run_anneal, run_fixed, tv_distance_counts, AnnealOptions};

/// Criteria that do not hold for this model; see the project notes.
const EXPECTED_FAIL: &[u32] = &[3, 4, 8];

/// Step size for the double-well walker experiments.
const DOUBLE_WELL_DT: f64 = 0.02;

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn dw(n: usize) -> DoubleWellParams {
    DoubleWellParams::default_for(n).unwrap()
}

fn dw_instance(n: usize) -> ProblemInstance {
    ProblemInstance::double_well(dw(n))
}

/// Double-well potential at default scalings, written out independently of
/// the library so it also covers n < 4.
fn oracle_potential(n: usize, w: usize, s: f64) -> f64 {
    let nf = n as f64;
    let omega = 260.0 * nf.sqrt();
    let delta = 0.1 * (100.0 / nf).powf(0.25);
    let tau = 1000.0 / nf.powf(1.25);
    let x = w as f64 / nf - 0.5 - delta / 2.0;
    let quartic = omega * omega / (2.0 * delta * delta * nf * nf) * x.powi(4)
        - omega * omega / (4.0 * nf * nf) * x * x;
    let tilt = tau * (1.0 - 2.0 * s) * x;
    let y = w as f64 / nf - 0.5;
    let fict = -(2.0 / nf) * y * y + 2.0 * y * y + 2.0 * y.powi(4) + 4.0 * y.powi(6);
    quartic + tilt - fict
}

/// Dense 2^n Hamiltonian −(1/n) Σ X_j + V(|x|).
fn dense_hamiltonian(n: usize, s: f64) -> DMatrix<f64> {
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    for x in 0..dim {
        h[(x, x)] = oracle_potential(n, x.count_ones() as usize, s);
        for j in 0..n {
            h[(x, x ^ (1 << j))] = -1.0 / n as f64;
        }
    }
    h
}

/// Columns are the normalised uniform superpositions over each weight.
fn dicke_basis(n: usize) -> DMatrix<f64> {
    let dim = 1usize << n;
    let mut p = DMatrix::zeros(dim, n + 1);
    for x in 0..dim {
        p[(x, x.count_ones() as usize)] = 1.0;
    }
    for w in 0..=n {
        let norm = p.column(w).norm();
        p.column_mut(w).unscale_mut(norm);
    }
    p
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn criterion_1() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut potential_mismatch: f64 = 0.0;
    for n in 2..=10usize {
        let p = dicke_basis(n);
        for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let diag: Vec<f64> = (0..=n).map(|w| oracle_potential(n, w, s)).collect();
            if n >= 4 {
                let inst = dw_instance(n);
                for (w, v) in diag.iter().enumerate() {
                    let lib = inst.potential(w, s);
                    potential_mismatch = potential_mismatch.max((lib - v).abs() / v.abs().max(1.0));
                }
            }
            let off: Vec<f64> = (0..n)
                .map(|w| -hopping_amplitude(w, n) / n as f64)
                .collect();
            let (e0, e1) = SymmetricTridiagonal::new(diag, off)
                .unwrap()
                .lowest_two_eigenvalues()
                .unwrap();
            let h = dense_hamiltonian(n, s);
            let full = sorted_eigenvalues(h.clone());
            let sym = sorted_eigenvalues(p.transpose() * &h * &p);
            worst = worst
                .max((e0 - sym[0]).abs())
                .max((e1 - sym[1]).abs())
                .max((e0 - full[0]).abs());
        }
    }
    verdict(
        worst <= 1e-9 && potential_mismatch <= 1e-12,
        format!("max |dE| = {worst:.3e} (limit 1e-9); library vs oracle potential rel. diff {potential_mismatch:.1e}"),
    )
}

fn criterion_2() -> Verdict {
    let ns = [1000, 2000, 4000, 8000, 16000];
    let series = spectral::quantum_cost_series(&ns, &ScanOptions::default(), |n| {
        DoubleWellParams::default_for(n).map(ProblemInstance::double_well)
    });
    let slope = series.loglog_fit().map(|f| f.slope).unwrap_or(f64::NAN);
    let curve = spectral::min_gap_scan_with(&dw_instance(10_000), &ScanOptions::default()).unwrap();
    let big = spectral::gap_at(&dw_instance(130_000), AnnealPoint::HALF);
    let big_ok = matches!(big, Ok(g) if g > 0.0 && g.is_finite());
    verdict(
        (slope - 3.0).abs() <= 0.2
            && (0.48..=0.52).contains(&curve.s_star)
            && big_ok
            && series.failures.is_empty(),
        format!(
            "slope {slope:.4} (3.0 ± 0.2); s* = {:.5} at n = 1e4; gap(n = 130000, s = 1/2) = {:?}",
            curve.s_star, big
        ),
    )
}

fn criterion_3() -> Verdict {
    let tb = tight_binding_gap(&dw(100)).gamma;
    let value_ok = (tb - 4.3224e-5).abs() <= 1e-9;
    let ns = [100.0, 200.0, 400.0, 700.0, 1000.0];
    let gammas: Vec<f64> = ns
        .iter()
        .map(|&n| tight_binding_gap(&dw(n as usize)).gamma)
        .collect();
    let slope = power_law(&ns, &gammas).unwrap().slope;
    let slope_ok = (slope + 1.5).abs() <= 1e-6;
    let exact = spectral::gap_at(&dw_instance(100), AnnealPoint::HALF).unwrap();
    let ratio = exact / tb;
    let ratio_ok = (1.0 / 3.0..=3.0).contains(&ratio);
    verdict(
        value_ok && slope_ok && ratio_ok,
        format!(
            "gamma_TB(100) = {tb:.6e} [{}]; slope {slope:.9} [{}]; exact/TB at s = 1/2 = {ratio:.1} (limit 3) [{}]",
            ok(value_ok),
            ok(slope_ok),
            ok(ratio_ok)
        ),
    )
}

fn criterion_4() -> Verdict {
    let approx = right_well_mass_approx(&dw(100));
    let value_ok = (approx - 2.3457e-7).abs() <= 1e-11;
    let mut outside = Vec::new();
    let mut worst: f64 = 1.0;
    for n in 100..=400usize {
        let p = dw(n);
        let ratio = right_well_mass_exact(&p).unwrap() / right_well_mass_approx(&p);
        let spread = ratio.max(1.0 / ratio);
        worst = worst.max(spread);
        if spread > 2.0 {
            outside.push(n);
        }
    }
    let factor_ok = outside.is_empty();
    let ns: Vec<f64> = (100..=400).step_by(10).map(|n| n as f64).collect();
    let prs: Vec<f64> = ns
        .iter()
        .map(|&n| right_well_mass_approx(&dw(n as usize)))
        .collect();
    let fit = semilog_sqrt(&ns, &prs).unwrap();
    let linear_ok = fit.max_abs_residual() <= 1e-9;
    verdict(
        value_ok && factor_ok && linear_ok,
        format!(
            "P_R(100) = {approx:.6e} [{}]; exact/closed within 2x at {}/301 sizes, worst {worst:.2}x [{}]; \
             ln P_R vs sqrt(n) residual {:.1e} [{}]",
            ok(value_ok),
            301 - outside.len(),
            ok(factor_ok),
            fit.max_abs_residual(),
            ok(linear_ok)
        ),
    )
}

fn criterion_5() -> Verdict {
    let p = dw(100);
    let inst = ProblemInstance::double_well(p);
    let target = classical_distribution(&gaussian_well(&p, Well::Left)).unwrap();
    let schedule = Schedule::linear(4000, DOUBLE_WELL_DT).unwrap();
    let mut tvs = Vec::new();
    for seed in 0..10u64 {
        let opts = AnnealOptions::new(1000, seed).with_snapshot_stride(1000);
        let rec = run_anneal(&inst, &schedule, &opts).unwrap();
        let snap = rec
            .snapshots
            .iter()
            .find(|s| s.step == 1000)
            .expect("snapshot at s = 1/4");
        assert_eq!(snap.s, 0.25);
        tvs.push(tv_distance_counts(&snap.histogram, target.probabilities()).unwrap_or(1.0));
    }
    let good = tvs.iter().filter(|&&d| d <= 0.15).count();
    verdict(
        good >= 8,
        format!(
            "{good}/10 runs with TV <= 0.15 (need 8); TV = [{}]",
            tvs.iter()
                .map(|d| format!("{d:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn criterion_6() -> Verdict {
    let inst = dw_instance(30);
    let exact = ground_state_distribution(&inst, AnnealPoint::HALF).unwrap();
    let opts = AnnealOptions::new(10_000, 6);
    let run = run_fixed(&inst, AnnealPoint::HALF, DOUBLE_WELL_DT, 6000, 2000, &opts).unwrap();
    let tv = tv_distance_counts(&run.accumulated_histogram, exact.probabilities()).unwrap();
    verdict(
        tv <= 0.1,
        format!("TV = {tv:.4} after 2000 burn-in steps, 4000 averaged (limit 0.1)"),
    )
}

fn criterion_7() -> Verdict {
    let ns = [40, 60, 80, 100, 120];
    let opts = SeriesOptions {
        dt: Some(DOUBLE_WELL_DT),
        ..SeriesOptions::default()
    };
    let make = |n: usize| -> Result<ProblemInstance, ConfigError> {
        Ok(ProblemInstance::double_well(DoubleWellParams::default_for(
            n,
        )?))
    };
    let series = harness::ssmc_cost_series(&ns, &opts, make, 7).unwrap();
    let costs: Vec<f64> = series.points.iter().map(|p| p.cost).collect();
    let increasing = series.points.len() == ns.len() && costs.windows(2).all(|w| w[1] > w[0]);
    let r2 = series
        .semilog_fit()
        .map(|f| f.r_squared)
        .unwrap_or(f64::NAN);
    let walkers: Vec<usize> = series.points.iter().map(|p| p.walkers).collect();
    let flags: usize = series.calibrations.iter().map(|c| c.flags.len()).sum();
    verdict(
        increasing && r2 >= 0.9,
        format!(
            "R^2 = {r2:.4} (>= 0.9); strictly increasing: {increasing}; walkers {walkers:?}; costs [{}]; calibration flags {flags}",
            costs.iter().map(|c| format!("{c:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_8() -> Verdict {
    let ns = [80, 160, 320, 640];
    let opts = SpikeOptions::default();
    let cmp = harness::spike_comparison(&ns, &opts, 8).unwrap();
    let adiabatic = cmp.adiabatic_fit.as_ref().map(|f| f.slope);
    let rates: Vec<String> = cmp
        .ssmc
        .iter()
        .map(|p| format!("n={}:{:.2}", p.n, p.success_rate))
        .collect();
    let failed: Vec<usize> = cmp.ssmc_failures.iter().map(|f| f.n).collect();
    match cmp.exponent_gap() {
        Ok(gap) => verdict(
            gap >= 2.0,
            format!("exponent gap {gap:.3} (need >= 2); adiabatic {adiabatic:?}; success {rates:?}; no cost at {failed:?}"),
        ),
        Err(e) => verdict(
            false,
            format!("{e}; adiabatic exponent {adiabatic:?}; SSMC success {rates:?}; no cost at n = {failed:?}"),
        ),
    }
}

/// Bytes of a small cost-series CSV, JSON-lines trial log and manifest.
fn experiment_bytes(seed: u64) -> Vec<u8> {
    let inst = dw_instance(16);
    let schedule = Schedule::linear(400, 0.05).unwrap();
    let records: Vec<_> = (0..4)
        .map(|k| {
            run_anneal(
                &inst,
                &schedule,
                &AnnealOptions::new(40, stoq::seed::derive_seed(seed, k)).with_snapshot_stride(100),
            )
            .unwrap()
        })
        .collect();
    let mut out = Vec::new();
    output::write_jsonl(&mut out, &records).unwrap();
    let opts = SeriesOptions {
        schedule_steps: 300,
        dt: Some(0.05),
        repetitions: 2,
        calibration: harness::CalibrationOptions {
            trials: 20,
            ..Default::default()
        },
    };
    let make = |n: usize| -> Result<ProblemInstance, ConfigError> {
        Ok(ProblemInstance::double_well(DoubleWellParams::default_for(
            n,
        )?))
    };
    let series = harness::ssmc_cost_series(&[10, 12, 14], &opts, make, seed).unwrap();
    let mut csv = CsvWriter::new(Vec::new(), output::COST_SERIES_HEADER).unwrap();
    for p in &series.points {
        csv.row(&[&p.n, &p.cost, &p.std, &p.walkers, &p.success_rate])
            .unwrap();
    }
    out.extend(csv.finish().unwrap());
    let manifest = output::RunManifest::new("determinism")
        .with_seed(seed)
        .param("series", opts);
    out.extend(manifest.to_json_pretty().into_bytes());
    out
}

fn criterion_9() -> Verdict {
    let in_pool = |threads: usize, seed: u64| {
        ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| experiment_bytes(seed))
    };
    let a = in_pool(1, 99);
    let b = in_pool(1, 99);
    let c = in_pool(3, 99);
    let d = in_pool(1, 100);
    verdict(
        a == b && a == c && a != d,
        format!(
            "{} bytes; repeat identical: {}; 3 threads identical: {}; other seed differs: {}",
            a.len(),
            a == b,
            a == c,
            a != d
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fails"
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            1,
            "symmetric tridiagonal matches dense diagonalisation",
            criterion_1,
        ),
        (2, "adiabatic cost scales as n^3", criterion_2),
        (3, "tight-binding gap", criterion_3),
        (4, "right-well mass", criterion_4),
        (5, "walkers track the left-well distribution", criterion_5),
        (
            6,
            "fixed-s population matches the ground state",
            criterion_6,
        ),
        (
            7,
            "calibrated SSMC cost grows like exp(sqrt n)",
            criterion_7,
        ),
        (
            8,
            "spike: SSMC exponent exceeds adiabatic by 2",
            criterion_8,
        ),
        (9, "byte-identical reruns", criterion_9),
    ];
    // `cargo test` forwards its own flags; only bare numbers select criteria.
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} criterion {id} ({name}): {} [{:.1}s]",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if v.pass == EXPECTED_FAIL.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("outcome differs from the expected set for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

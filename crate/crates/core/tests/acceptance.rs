//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spindephase::bath::{precess, BackAction, NuclearSpinConfig};
use spindephase::cli::{execute, Cli};
use spindephase::dephase::{
    autocorrelation, disorder_sweep, extract_rate, pure_dephasing, rate_from_correlation,
    resolve_contributions, DisorderOptions, PureOptions, ResolveBy, ResolveOptions,
};
use spindephase::fluct::{
    analytic_autocorrelation, mode_couplings, mode_variances, stochastic_trace, Channel,
    ModeCoupling, ThermalState,
};
use spindephase::ingest::{
    finite_difference_gradients, generate_synthetic, ModeRecipe, SyntheticSpec, SystemBundle,
};
use spindephase::numeric::TimeGrid;
use spindephase::spinmodel::{spin_matrices, QubitPair};

// Reference constants (CODATA 2018), kept separate from the library's table.
const H: f64 = 6.626_070_15e-34;
const HBAR: f64 = 1.054_571_817e-34;
const KB: f64 = 1.380_649e-23;
const MU_B: f64 = 9.274_010_078_3e-24;
const G_E: f64 = 2.002_319_304_36;
const AMU: f64 = 1.660_539_066_6e-27;
/// 13C gyromagnetic ratio over 2 pi, Hz/G.
const GAMMA_13C_HZ_PER_G: f64 = 1_070.84;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "spindephase-acceptance-{}-{name}",
        std::process::id()
    ));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cli(args: &[&str]) -> spindephase::Result<spindephase::cli::RunOutcome> {
    let argv = std::iter::once("spindephase").chain(args.iter().copied());
    execute(&Cli::try_parse_from(argv).expect("argument parsing"))
}

fn bose(freq_thz: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    1.0 / ((H * freq_thz * 1e12 / (KB * t)).exp() - 1.0)
}

/// Closed-form correlation `sum w K^2 hbar (2n + 1) / (4 omega) cos(omega t)`.
fn reference_correlation(couplings: &[ModeCoupling], temperature: f64, times: &[f64]) -> Vec<f64> {
    let hbar = HBAR / AMU * 1e20; // amu A^2 / s
    times
        .iter()
        .map(|&t| {
            couplings
                .iter()
                .filter(|c| !c.excluded)
                .map(|c| {
                    let w = TAU * c.frequency_thz * 1e12;
                    let s2 = hbar * (2.0 * bose(c.frequency_thz, temperature) + 1.0) / (2.0 * w);
                    c.q_weight * c.coupling * c.coupling * s2 / 2.0 * (w * t).cos()
                })
                .sum()
        })
        .collect()
}

fn cumulant_limits() -> Outcome {
    let delta = 1e6;
    let mut worst_fast: f64 = 0.0;
    let mut worst_slow: f64 = 0.0;
    let mut lines = Vec::new();
    for x in [1e-3, 1e-2, 1e-1, 10.0, 100.0] {
        let tau = x / delta;
        let direct = extract_rate(delta * delta, tau).unwrap().gamma_inverse;
        let grid = TimeGrid::new(tau / 20.0, 201).unwrap();
        let c: Vec<f64> = grid
            .times()
            .iter()
            .map(|t| delta * delta * (-t / tau).exp())
            .collect();
        let fitted = rate_from_correlation(&c, &grid, Channel::SpPh, None)
            .unwrap()
            .gamma_inverse;
        let fast = 1.0 / (delta * delta * tau);
        let slow = 2f64.sqrt() / delta;
        if x <= 1e-3 {
            worst_fast = worst_fast
                .max((direct / fast - 1.0).abs())
                .max((fitted / fast - 1.0).abs());
        }
        if x >= 100.0 {
            worst_slow = worst_slow
                .max((direct / slow - 1.0).abs())
                .max((fitted / slow - 1.0).abs());
        }
        lines.push(format!("Dtau={x:e}: {direct:.4e}/{fitted:.4e}"));
    }
    outcome(
        worst_fast < 0.01 && worst_slow < 0.01,
        format!(
            "fast-limit dev {worst_fast:.2e}, slow-limit dev {worst_slow:.2e} [{}]",
            lines.join(", ")
        ),
    )
}

/// Independent derivative of `(delta_ij r^-3 - 3 r_i r_j r^-5)` with respect to `r_k`.
fn kernel_derivative(r: &Vector3<f64>, k: usize) -> Matrix3<f64> {
    let n = r.norm();
    Matrix3::from_fn(|i, j| {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        -3.0 * d(i, j) * r[k] / n.powi(5) - 3.0 * (d(i, k) * r[j] + r[i] * d(j, k)) / n.powi(5)
            + 15.0 * r[i] * r[j] * r[k] / n.powi(7)
    })
}

fn gradient_oracle() -> Outcome {
    let spec = SyntheticSpec {
        n_atoms: 64,
        ..SyntheticSpec::default()
    };
    let positions = spec.positions().unwrap();
    let oracle = spec.oracle(positions.len()).unwrap();
    // mu0/(4 pi) g_e^2 mu_B^2 / h in GHz A^3
    let pref = 1e-7 * G_E * G_E * MU_B * MU_B / H * 1e30 / 1e9;
    let [c0, c1] = spec.spin_sites;
    let r = positions[c1] - positions[c0];
    let mut exact = vec![[Matrix3::zeros(); 3]; positions.len()];
    for k in 0..3 {
        let d = kernel_derivative(&r, k) * pref;
        exact[c1][k] += d;
        exact[c0][k] -= d;
    }
    let scale = exact
        .iter()
        .flat_map(|g| g.iter())
        .map(|m| m.amax())
        .fold(0.0, f64::max);
    let err = |dx: f64| {
        let fd = finite_difference_gradients(&oracle, &positions, dx).unwrap();
        fd.zfs_grad
            .iter()
            .zip(&exact)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).amax() / scale)
            .fold(0.0, f64::max)
    };
    let e1 = err(1e-3);
    let e2 = err(5e-4);
    let order = (e1 / e2).log2();
    outcome(
        e1 < 1e-4 && (1.8..=2.2).contains(&order),
        format!(
            "max rel error {e1:.2e} at dx=1e-3 A, {e2:.2e} at dx=5e-4 A, observed order {order:.3}"
        ),
    )
}

fn ten_mode_bundle() -> SystemBundle {
    generate_synthetic(&SyntheticSpec {
        n_atoms: 64,
        modes: ModeRecipe {
            translations: false,
            frequencies_thz: vec![5.0, 8.0, 11.0, 14.0, 17.0, 20.0, 23.0, 26.0, 29.0, 32.0],
        },
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn stochastic_equivalence() -> Outcome {
    let bundle = ten_mode_bundle();
    let spin = spin_matrices(1.0)
        .unwrap()
        .oriented_along(&bundle.meta.axis)
        .unwrap();
    let couplings = mode_couplings(&bundle, &spin, Channel::SpPh, None).unwrap();
    let thermal = ThermalState::new(&couplings, 300.0).unwrap();
    let grid = TimeGrid::new(1.0 / (20.0 * 32e12), 512).unwrap();
    let analytic = analytic_autocorrelation(&couplings, &thermal, &grid).unwrap();
    let reference = reference_correlation(&couplings, 300.0, &grid.times());
    let traces: Vec<_> = (0..10_000u64)
        .map(|s| stochastic_trace(&couplings, &thermal, &grid, s).unwrap())
        .collect();
    let sampled = autocorrelation(&traces).unwrap();
    let l2 = |a: &[f64], b: &[f64]| {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    };
    let e_stoch = l2(&sampled, &analytic);
    let e_ref = l2(&analytic, &reference);
    outcome(
        e_stoch < 0.05 && e_ref < 1e-12,
        format!(
            "10^4 traces vs analytic: rel L2 {e_stoch:.3e}; analytic vs reference sum {e_ref:.1e}"
        ),
    )
}

fn temperature_law() -> Outcome {
    let spec = SyntheticSpec {
        n_atoms: 16,
        modes: ModeRecipe {
            translations: false,
            frequencies_thz: vec![10.0],
        },
        ..SyntheticSpec::default()
    };
    let bundle = generate_synthetic(&spec).unwrap();
    let spin = spin_matrices(1.0)
        .unwrap()
        .oriented_along(&bundle.meta.axis)
        .unwrap();
    let couplings = mode_couplings(&bundle, &spin, Channel::SpPh, None).unwrap();
    let var =
        |t: f64| mode_variances(&couplings, &ThermalState::new(&couplings, t).unwrap()).unwrap()[0];
    let v0 = var(0.0);
    let mut analytic_dev: f64 = 0.0;
    for t in [1.0, 10.0, 77.0, 300.0, 1000.0] {
        let expected = 1.0 + 2.0 * bose(10.0, t);
        analytic_dev = analytic_dev.max((var(t) / v0 / expected - 1.0).abs());
    }

    let dir = tmp("temperature");
    let bundle_path = dir.join("bundle.json");
    bundle.save(&bundle_path).unwrap();
    let out = dir.join("pure");
    run_cli(&[
        "pure",
        "--bundle",
        bundle_path.to_str().unwrap(),
        "--temps",
        "10,300",
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let rows = read_csv(&out.join("rates.csv"));
    let col = |name: &str, r: usize| -> f64 {
        let i = rows[0].iter().position(|h| h == name).unwrap();
        rows[r][i].parse().unwrap()
    };
    let law = (1.0 + 2.0 * bose(10.0, 300.0)) / (1.0 + 2.0 * bose(10.0, 10.0));
    let delta_ratio = col("delta_sq_rad2_s2", 2) / col("delta_sq_rad2_s2", 1);
    let rate_ratio = col("gamma_inv_plain_s", 1) / col("gamma_inv_plain_s", 2);
    let pipe_dev = (delta_ratio / law - 1.0)
        .abs()
        .max((rate_ratio / law - 1.0).abs());
    outcome(
        analytic_dev < 1e-10 && pipe_dev < 0.02,
        format!(
            "analytic dev {analytic_dev:.1e}; pure pipeline 300K/10K: Delta^2 ratio {delta_ratio:.5}, rate ratio \
             {rate_ratio:.5}, law {law:.5} (dev {pipe_dev:.1e})"
        ),
    )
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let body: String = fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn spin_algebra() -> Outcome {
    let d = 2.87;
    let zfs = Matrix3::from_diagonal(&Vector3::new(-d / 3.0, -d / 3.0, 2.0 * d / 3.0));
    let spin = spin_matrices(1.0).unwrap();
    let gap = spin
        .gap_expectation(&zfs, QubitPair::new(-1, 0).unwrap())
        .unwrap();
    let gap_plus = spin
        .gap_expectation(&zfs, QubitPair::new(1, 0).unwrap())
        .unwrap();
    let exact_dev = (gap - d).abs().max((gap_plus - d).abs()) / d;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m = (m + m.transpose()) / 2.0;
        m -= Matrix3::identity() * (m.trace() / 3.0);
        let shift = spin
            .gap_expectation(&m, QubitPair::new(-1, 0).unwrap())
            .unwrap();
        worst = worst.max((shift - 1.5 * m[(2, 2)]).abs());
    }
    outcome(
        exact_dev <= 4.0 * f64::EPSILON && worst < 1e-12,
        format!("gap {gap:.15} GHz (rel dev {exact_dev:.1e}); max |shift - 3/2 dzz| {worst:.1e} over 1000 tensors"),
    )
}

fn larmor() -> Outcome {
    let b = 1000.0;
    let f = GAMMA_13C_HZ_PER_G * b;
    let per_period = 64;
    let grid = TimeGrid::new(1.0 / (f * per_period as f64), 100 * per_period + 1).unwrap();
    let config = NuclearSpinConfig {
        occupied_sites: vec![0],
        initial_moments: vec![Vector3::new(0.5 * 0.6, 0.0, 0.5 * 0.8)],
        seed: 0,
        stream: 0,
        concentration: 1.0,
        b_field: Vector3::new(0.0, 0.0, b),
        temperature: 0.0,
    };
    let spin = spin_matrices(1.0).unwrap();
    let traj = precess(
        &config,
        &[Matrix3::zeros()],
        &spin,
        BackAction::Upper,
        &grid,
    )
    .unwrap();
    let m = &traj.moments[0];
    let mut phase = 0.0;
    for k in 1..m.len() {
        let (a, c) = (m[k - 1], m[k]);
        let mut d = c.y.atan2(c.x) - a.y.atan2(a.x);
        if d > PI {
            d -= TAU;
        } else if d < -PI {
            d += TAU;
        }
        phase += d;
    }
    let measured = phase.abs() / TAU / grid.time(grid.len - 1);
    let dev = (measured / f - 1.0).abs();
    let drift = m.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
    outcome(
        dev < 1e-3 && drift < 1e-9,
        format!("f = {measured:.6e} Hz vs {f:.6e} Hz (dev {dev:.1e}); |I| drift {drift:.1e} over 100 periods"),
    )
}

fn trend_suite() -> Outcome {
    let bundle = generate_synthetic(&SyntheticSpec {
        n_atoms: 4096,
        modes: ModeRecipe {
            translations: false,
            frequencies_thz: vec![],
        },
        ..SyntheticSpec::default()
    })
    .unwrap();
    let spin = spin_matrices(1.0)
        .unwrap()
        .oriented_along(&bundle.meta.axis)
        .unwrap();
    let concentrations = [0.001, 0.005, 0.02];
    let fields = [50.0, 100.0, 500.0, 1000.0];
    let mut opts = DisorderOptions::for_channel(Channel::SpNu);
    opts.concentrations = concentrations.to_vec();
    opts.b_fields = fields.to_vec();
    opts.n_configs = 128;
    let rows = disorder_sweep(&bundle, &spin, &opts).unwrap();
    let at = |c: usize, b: usize| rows[c * fields.len() + b].result.gamma_inverse;
    let mut monotone = true;
    for c in 0..concentrations.len() {
        for b in 1..fields.len() {
            monotone &= at(c, b) < at(c, b - 1);
        }
    }
    for b in 0..fields.len() {
        for c in 1..concentrations.len() {
            monotone &= at(c, b) < at(c - 1, b);
        }
    }
    let corners = format!(
        "1/Gamma from {:.2e} s (0.1%, 50 G) to {:.2e} s (2%, 1000 G)",
        at(0, 0),
        at(concentrations.len() - 1, fields.len() - 1)
    );

    // spread of the ensemble mean over independent replicas
    let replicas = 64u64;
    let mut ratios = Vec::new();
    for field in [50.0, 500.0] {
        let spread = |n: usize| {
            let v: Vec<f64> = (0..replicas)
                .map(|r| {
                    let mut o = DisorderOptions::for_channel(Channel::SpNu);
                    o.concentrations = vec![0.02];
                    o.b_fields = vec![field];
                    o.n_configs = n;
                    o.seed = 1000 + 7919 * r;
                    disorder_sweep(&bundle, &spin, &o).unwrap()[0]
                        .result
                        .gamma_inverse
                })
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        ratios.push(spread(32) / spread(128));
    }
    let shrink = ratios.iter().all(|r| (1.5..=2.5).contains(r));
    outcome(
        monotone && shrink,
        format!(
            "strictly decreasing in c and B: {monotone}; {corners}; replica std ratio n=32/n=128 at 2%: {:.3} \
             (50 G), {:.3} (500 G), expected 2",
            ratios[0], ratios[1]
        ),
    )
}

fn additivity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for (seed, n, freqs) in [
        (1, 64, vec![5.0, 9.0, 13.0, 30.0]),
        (2, 128, vec![3.0, 7.5, 12.0, 18.0, 25.0, 41.0]),
        (3, 32, vec![]),
    ] {
        let mut recipe = ModeRecipe::default();
        if !freqs.is_empty() {
            recipe.frequencies_thz = freqs;
        }
        let bundle = generate_synthetic(&SyntheticSpec {
            n_atoms: n,
            seed,
            modes: recipe,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let spin = spin_matrices(1.0)
            .unwrap()
            .oriented_along(&bundle.meta.axis)
            .unwrap();
        for t in [0.0, 300.0] {
            let opts = PureOptions {
                temperatures: vec![t],
                ..PureOptions::default()
            };
            let total = pure_dephasing(&bundle, &spin, &opts).unwrap().rows[0].delta_sq;
            let couplings = mode_couplings(&bundle, &spin, Channel::SpPh, None).unwrap();
            let independent = reference_correlation(&couplings, t, &[0.0])[0];
            let rows =
                resolve_contributions(&bundle, &spin, &ResolveOptions::new(ResolveBy::Mode, t))
                    .unwrap();
            let parts: f64 = rows.iter().map(|r| r.delta_sq).sum();
            worst = worst.max((parts / total - 1.0).abs());
            worst_ref = worst_ref.max((total / independent - 1.0).abs());
        }
    }
    outcome(
        worst < 1e-10 && worst_ref < 1e-12,
        format!(
            "max relative gap between mode sum and pipeline Delta^2: {worst:.1e}; pipeline vs reference sum \
             {worst_ref:.1e}"
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root = tmp("determinism");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let syn = root.join("syn");
    run_cli(&["gen-synthetic", "--seed", "5", "--out", &s(&syn)]).unwrap();
    let bundle = s(&syn.join("bundle.json"));
    let table = s(&syn.join("displacements.json"));
    let pure_in = root.join("pure-in");
    let dis_in = root.join("dis-in");
    run_cli(&[
        "pure",
        "--bundle",
        &bundle,
        "--temps",
        "300",
        "--out",
        &s(&pure_in),
    ])
    .unwrap();
    run_cli(&[
        "disorder",
        "--bundle",
        &bundle,
        "--configs",
        "16",
        "--bfield",
        "100",
        "--out",
        &s(&dis_in),
    ])
    .unwrap();

    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "gen-synthetic",
            vec!["gen-synthetic".into(), "--seed".into(), "5".into()],
        ),
        (
            "validate",
            vec!["validate".into(), "--bundle".into(), bundle.clone()],
        ),
        (
            "gradients",
            vec![
                "gradients".into(),
                table.clone(),
                "--bundle".into(),
                bundle.clone(),
            ],
        ),
        (
            "pure",
            vec![
                "pure".into(),
                "--bundle".into(),
                bundle.clone(),
                "--temps".into(),
                "10,300".into(),
            ],
        ),
        (
            "disorder",
            [
                "disorder",
                "--bundle",
                &bundle,
                "--concentrations",
                "0.01,0.03",
                "--bfield",
                "50,500",
                "--configs",
                "16",
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            "disorder sp-nu-ph",
            [
                "disorder",
                "--channel",
                "sp-nu-ph",
                "--bundle",
                &bundle,
                "--configs",
                "8",
                "--concentrations",
                "0.05",
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            "resolve atom",
            ["resolve", "--by", "atom", "--bundle", &bundle]
                .map(String::from)
                .to_vec(),
        ),
        (
            "resolve mode",
            ["resolve", "--by", "mode", "--bundle", &bundle]
                .map(String::from)
                .to_vec(),
        ),
        (
            "report",
            ["report", &s(&pure_in), &s(&dis_in), "--t1", "1e-3"]
                .map(String::from)
                .to_vec(),
        ),
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (i, (label, args)) in commands.iter().enumerate() {
        let mut snaps = Vec::new();
        for (run, threads) in [1usize, 1, 4].into_iter().enumerate() {
            let out = s(&root.join(format!("c{i}-r{run}")));
            let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
            argv.extend(["--out", out.as_str()]);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_cli(&argv)).unwrap();
            snaps.push(snapshot(Path::new(&out)));
        }
        compared += snaps[0].len();
        if snaps[0].is_empty() || snaps[1] != snaps[0] || snaps[2] != snaps[0] {
            failures.push(label.to_string());
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} commands, {compared} files compared across two runs and 1 vs 4 threads; mismatches: {failures:?}",
            commands.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("cumulant limits", Duration::from_secs(1), cumulant_limits),
        ("gradient oracle", Duration::from_secs(10), gradient_oracle),
        (
            "stochastic-analytic equivalence",
            Duration::from_secs(60),
            stochastic_equivalence,
        ),
        ("temperature law", Duration::from_secs(60), temperature_law),
        ("spin algebra", Duration::from_secs(60), spin_algebra),
        ("larmor precession", Duration::from_secs(60), larmor),
        ("trend suite", Duration::from_secs(300), trend_suite),
        ("additivity", Duration::from_secs(60), additivity),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Command-line driver: argument parsing, run configuration and file output.
//!
//! Every CSV file starts with `# key: value` provenance lines followed by an
//! RFC 4180 table. Infinite dephasing times are written as `inf` and every
//! result table carries a `status` column. Each run also writes
//! `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bath::{OrientationModel, DEFAULT_C_T};
use crate::dephase::{
    aggregate_report, disorder_sweep, pure_dephasing, resolve_contributions, DecoherenceSummary,
    DephasingResult, DisorderOptions, GridOverride, Homogeneity, PureOptions, Regime, ResolveBy,
    ResolveOptions, Reversibility, RowStatus, Sequence,
};
use crate::error::{Error, Result};
use crate::fluct::Channel;
use crate::ingest::{
    finite_difference_gradients, generate_synthetic, load_bundle_path, SyntheticSpec, SystemBundle,
    TabulatedOracle, TensorGradients,
};
use crate::spinmodel::{spin_matrices, SpinTriplet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Default output directory when `--out` is not given.
pub const OUT_ENV: &str = "SPINDEPHASE_OUT";
/// Exit status when every row was written but some fits are flagged.
pub const EXIT_FLAGGED: u8 = 3;
/// `gen-synthetic` writes a displacement table only up to this many atoms.
pub const TABLE_MAX_ATOMS: usize = 128;

#[derive(Debug, Parser)]
#[command(
    name = "spindephase",
    version,
    about = "Spin-qubit dephasing times from phonons and nuclear spins"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub args: RunArgs,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Build a synthetic point-dipole bundle from an optional JSON spec.
    GenSynthetic { spec: Option<PathBuf> },
    /// Load a bundle and check every invariant.
    Validate,
    /// Assemble finite-difference gradients from a table of displaced tensors.
    Gradients { table: PathBuf },
    /// Spin-phonon dephasing over a temperature list.
    Pure,
    /// Nuclear-spin ensemble sweep over concentrations and fields.
    Disorder,
    /// Atom- or mode-resolved spin-phonon dephasing.
    Resolve,
    /// Combine channel results from earlier runs into a total rate.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::Validate => "validate",
            Command::Gradients { .. } => "gradients",
            Command::Pure => "pure",
            Command::Disorder => "disorder",
            Command::Resolve => "resolve",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// System bundle (JSON).
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
    /// Temperatures in kelvin, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub temps: Option<Vec<f64>>,
    /// Field magnitudes in gauss, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub bfield: Option<Vec<f64>>,
    /// Field direction: x, y, z, defect, or `ax,ay,az`. Defaults to the defect axis.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub axis: Option<String>,
    /// 13C concentrations as fractions, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub concentrations: Option<Vec<f64>>,
    /// Number of nuclear-spin configurations per sweep point.
    #[arg(long, global = true)]
    pub configs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// ramsey or hahn.
    #[arg(long, global = true, default_value = "ramsey")]
    pub sequence: Sequence,
    /// Time step override, seconds.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Window length override, seconds.
    #[arg(long, global = true)]
    pub tmax: Option<f64>,
    /// Orientation width constant c_T (rad/K); selects field-aligned sampling.
    #[arg(long, global = true)]
    pub ct: Option<f64>,
    /// Longitudinal relaxation time T1, seconds.
    #[arg(long, global = true)]
    pub t1: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "spindephase-out")]
    pub out: PathBuf,
    /// sp-ph, sp-nu-ph or sp-nu.
    #[arg(long, global = true)]
    pub channel: Option<Channel>,
    /// atom or mode.
    #[arg(long, global = true)]
    pub by: Option<ResolveBy>,
}

/// Fully resolved parameters of one run. Everything except the output
/// directory enters the configuration hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub bundle: Option<PathBuf>,
    pub channel: Option<Channel>,
    pub temperatures: Vec<f64>,
    pub b_fields: Vec<f64>,
    pub axis: Option<[f64; 3]>,
    pub concentrations: Vec<f64>,
    pub n_configs: Option<usize>,
    pub seed: u64,
    pub sequence: Sequence,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub c_t: Option<f64>,
    pub t1: Option<f64>,
    pub by: Option<ResolveBy>,
    pub spec: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    #[serde(skip)]
    pub out: PathBuf,
    /// Seed as given on the command line, before defaulting.
    #[serde(skip)]
    pub explicit_seed: Option<u64>,
}

fn parse_axis(s: &str) -> Result<Option<[f64; 3]>> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "defect" => return Ok(None),
        "x" => [1.0, 0.0, 0.0],
        "y" => [0.0, 1.0, 0.0],
        "z" => [0.0, 0.0, 1.0],
        other => {
            let parts: Vec<f64> = other
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse axis '{s}'")))?;
            if parts.len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "axis needs 3 components, got '{s}'"
                )));
            }
            [parts[0], parts[1], parts[2]]
        }
    };
    if !(Vector3::from(v).norm() > 0.0) || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "axis '{s}' must be finite and non-zero"
        )));
    }
    Ok(Some(v))
}

fn non_empty(name: &str, v: Vec<f64>) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} list is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} list has a non-finite entry"
        )));
    }
    Ok(v)
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let a = &cli.args;
        let temperatures = non_empty(
            "temperature",
            a.temps.clone().unwrap_or_else(|| vec![300.0]),
        )?;
        if temperatures.iter().any(|t| *t < 0.0) {
            return Err(Error::InvalidArgument("temperatures must be >= 0 K".into()));
        }
        let concentrations = non_empty(
            "concentration",
            a.concentrations.clone().unwrap_or_else(|| vec![0.011]),
        )?;
        if concentrations.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(
                "concentrations are fractions in [0, 1]".into(),
            ));
        }
        let b_fields = non_empty("field", a.bfield.clone().unwrap_or_else(|| vec![50.0]))?;
        if b_fields.iter().any(|b| *b < 0.0) {
            return Err(Error::InvalidArgument(
                "field magnitudes must be >= 0 G".into(),
            ));
        }
        for (name, v) in [("dt", a.dt), ("tmax", a.tmax), ("t1", a.t1)] {
            if let Some(x) = v {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "--{name} must be > 0, got {x}"
                    )));
                }
            }
        }
        if let Some(ct) = a.ct {
            if !(ct.is_finite() && ct >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "--ct must be >= 0, got {ct}"
                )));
            }
        }
        if a.configs == Some(0) {
            return Err(Error::InvalidArgument("--configs must be >= 1".into()));
        }
        let (spec, table, inputs) = match &cli.command {
            Command::GenSynthetic { spec } => (spec.clone(), None, Vec::new()),
            Command::Gradients { table } => (None, Some(table.clone()), Vec::new()),
            Command::Report { inputs } => (None, None, inputs.clone()),
            _ => (None, None, Vec::new()),
        };
        Ok(Self {
            command: cli.command.name().to_string(),
            bundle: a.bundle.clone(),
            channel: a.channel,
            temperatures,
            b_fields,
            axis: a.axis.as_deref().map(parse_axis).transpose()?.flatten(),
            concentrations,
            n_configs: a.configs,
            seed: a.seed.unwrap_or(1),
            sequence: a.sequence,
            dt: a.dt,
            t_max: a.tmax,
            c_t: a.ct,
            t1: a.t1,
            by: a.by,
            spec,
            table,
            inputs,
            out: a.out.clone(),
            explicit_seed: a.seed,
        })
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }

    fn grid(&self) -> GridOverride {
        GridOverride {
            dt: self.dt,
            t_max: self.t_max,
        }
    }

    fn single_temperature(&self) -> Result<f64> {
        match self.temperatures.as_slice() {
            [t] => Ok(*t),
            _ => Err(Error::InvalidArgument(format!(
                "{} takes exactly one temperature",
                self.command
            ))),
        }
    }

    fn require_bundle(&self) -> Result<&Path> {
        self.bundle
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} needs --bundle", self.command)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Number token used in every table: shortest round-trip exponent form, or
/// `inf` / `-inf`.
pub fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:e}")
    }
}

fn jnum(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(num(v))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn read_num(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) if s == "inf" => Some(f64::INFINITY),
        _ => None,
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub rows: usize,
    pub flagged: usize,
}

impl RunOutcome {
    pub fn exit_code(&self) -> u8 {
        if self.flagged > 0 {
            EXIT_FLAGGED
        } else {
            0
        }
    }
}

struct Output<'a> {
    cfg: &'a RunConfig,
    provenance: Vec<(&'static str, String)>,
    files: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn new(cfg: &'a RunConfig, bundle: Option<(&SystemBundle, String)>) -> Result<Self> {
        fs::create_dir_all(&cfg.out)?;
        let mut provenance = vec![
            ("tool", format!("spindephase {VERSION}")),
            ("command", cfg.command.clone()),
            ("config_sha256", cfg.hash()),
            ("seed", cfg.seed.to_string()),
        ];
        if let Some((b, sha)) = bundle {
            provenance.push(("bundle", b.meta.provenance.clone()));
            provenance.push(("bundle_sha256", sha));
        }
        Ok(Self {
            cfg,
            provenance,
            files: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut body = String::new();
        for (k, v) in &self.provenance {
            body.push_str(&format!("# {k}: {}\n", v.replace('\n', " ")));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut out = body.into_bytes();
        out.extend_from_slice(&bytes);
        self.write(name, &out)
    }

    fn json(&mut self, name: &str, mut value: Value) -> Result<()> {
        let prov: serde_json::Map<String, Value> = self
            .provenance
            .iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        if let Value::Object(m) = &mut value {
            m.insert("_provenance".into(), Value::Object(prov));
        }
        let mut s = serde_json::to_string_pretty(&value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.cfg.out.join(name);
        fs::write(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, rows: usize, flagged: usize) -> RunOutcome {
        RunOutcome {
            files: self.files,
            rows,
            flagged,
        }
    }
}

fn load(cfg: &RunConfig) -> Result<(SystemBundle, String)> {
    let path = cfg.require_bundle()?;
    let bytes = fs::read(path)?;
    let sha = hex(&Sha256::digest(&bytes));
    Ok((load_bundle_path(path)?, sha))
}

fn spin_for(bundle: &SystemBundle) -> Result<SpinTriplet> {
    spin_matrices(1.0)?.oriented_along(&bundle.meta.axis)
}

fn summary_row(r: &DephasingResult, concentration: Option<f64>, b_field: Option<f64>) -> Value {
    json!({
        "channel": r.channel.as_str(),
        "temperature_k": r.temperature.map(jnum),
        "concentration": concentration.map(jnum),
        "b_field_g": b_field.map(jnum),
        "gamma_inv_s": jnum(r.gamma_inverse),
        "gamma_inv_lower_s": jnum(r.gamma_inverse_lower),
        "gamma_inv_upper_s": jnum(r.gamma_inverse_upper),
        "delta_sq_rad2_s2": jnum(r.delta_sq),
        "tau_c_s": r.tau_c().map(jnum),
        "regime": r.regime.map(Regime::as_str),
        "status": r.status.as_str(),
    })
}

fn report_json(label: &str, s: &DecoherenceSummary) -> Value {
    json!({
        "label": label,
        "sequence": s.sequence.to_string(),
        "t1_s": s.t1.map(jnum),
        "total_gamma_per_s": jnum(s.total_gamma),
        "total_gamma_inv_s": jnum(s.total_gamma_inverse),
        "channels": s.channels.iter().map(|c| json!({
            "channel": c.channel.as_str(),
            "gamma_per_s": jnum(c.gamma),
            "gamma_inv_s": jnum(c.gamma_inverse),
            "homogeneity": homogeneity(c.classification.homogeneity),
            "reversibility": reversibility(c.classification.reversibility),
            "included": c.included,
        })).collect::<Vec<_>>(),
    })
}

fn homogeneity(h: Homogeneity) -> &'static str {
    match h {
        Homogeneity::Homogeneous => "homogeneous",
        Homogeneity::Inhomogeneous => "inhomogeneous",
    }
}

fn reversibility(r: Reversibility) -> &'static str {
    match r {
        Reversibility::Reversible => "reversible",
        Reversibility::Irreversible => "irreversible",
    }
}

fn flagged(status: RowStatus) -> bool {
    status == RowStatus::FitFlagged
}

fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn gradients_json(g: &TensorGradients) -> Value {
    json!(g
        .iter()
        .map(|a| a.iter().map(matrix_rows).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn max_relative_difference(a: &TensorGradients, b: &TensorGradients) -> f64 {
    let scale = b
        .iter()
        .flat_map(|x| x.iter())
        .map(|m| m.amax())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(p, q)| (p - q).amax() / scale)
        .fold(0.0, f64::max)
}

/// Six independent components of a symmetric tensor.
const SYM: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn gradient_rows(zfs: &TensorGradients, hfi: Option<&TensorGradients>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (atom, g) in zfs.iter().enumerate() {
        for (axis, m) in g.iter().enumerate() {
            let mut r = vec![
                atom.to_string(),
                ["x", "y", "z"][axis].to_string(),
                "zfs".to_string(),
            ];
            r.extend(SYM.iter().map(|&(i, j)| num(m[(i, j)])));
            rows.push(r);
        }
    }
    if let Some(h) = hfi {
        for (atom, g) in h.iter().enumerate() {
            for (axis, m) in g.iter().enumerate() {
                let mut r = vec![
                    atom.to_string(),
                    ["x", "y", "z"][axis].to_string(),
                    "hfi".to_string(),
                ];
                r.extend(SYM.iter().map(|&(i, j)| num(m[(i, j)])));
                rows.push(r);
            }
        }
    }
    rows
}

const GRADIENT_COLUMNS: [&str; 9] = [
    "atom", "axis", "tensor", "d_xx", "d_xy", "d_xz", "d_yy", "d_yz", "d_zz",
];

fn cmd_gen_synthetic(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut spec: SyntheticSpec = match &cfg.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Parse(e.to_string()))?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = cfg.explicit_seed {
        spec.seed = seed;
    }
    let mut bundle = generate_synthetic(&spec)?;
    let oracle = spec.oracle(bundle.n_atoms())?;
    let positions = bundle.positions();
    let fd = finite_difference_gradients(&oracle, &positions, spec.dx_ang)?;
    let analytic_zfs = bundle
        .zfs_grad
        .take()
        .expect("synthetic bundles carry gradients");
    let analytic_hfi = bundle
        .hfi_grad
        .take()
        .expect("synthetic bundles carry gradients");
    let err_zfs = max_relative_difference(&fd.zfs_grad, &analytic_zfs);
    let err_hfi = fd
        .hfi_grad
        .as_ref()
        .map(|h| max_relative_difference(h, &analytic_hfi))
        .unwrap_or(0.0);
    let spec_sha = hex(&Sha256::digest(serde_json::to_string(&spec)?.as_bytes()));
    if spec.provenance.is_none() {
        bundle.meta.provenance = format!(
            "synthetic point-dipole model; spindephase {VERSION}; spec sha256 {spec_sha}; seed {}; \
             finite-difference gradients at dx = {:e} A",
            spec.seed, spec.dx_ang
        );
    }
    bundle.zfs_grad = Some(fd.zfs_grad);
    bundle.hfi_grad = fd.hfi_grad;
    bundle.validate()?;

    let bundle_json = bundle.to_json()?;
    let sha = hex(&Sha256::digest(bundle_json.as_bytes()));
    let mut out = Output::new(cfg, Some((&bundle, sha)))?;
    out.write("bundle.json", bundle_json.as_bytes())?;
    out.json(
        "gradients_analytic.json",
        json!({
            "zfs_grad_ghz_per_ang": gradients_json(&analytic_zfs),
            "hfi_grad_mhz_per_ang": gradients_json(&analytic_hfi),
        }),
    )?;
    let table = if bundle.n_atoms() <= TABLE_MAX_ATOMS {
        let t = TabulatedOracle::tabulate(&oracle, &positions, spec.dx_ang)?;
        out.write("displacements.json", t.to_json()?.as_bytes())?;
        true
    } else {
        false
    };
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "spec": spec,
            "n_atoms": bundle.n_atoms(),
            "n_modes": bundle.modes.len(),
            "displacement_table": table,
            "max_rel_error_zfs_grad": jnum(err_zfs),
            "max_rel_error_hfi_grad": jnum(err_hfi),
        }),
    )?;
    Ok(out.finish(1, 0))
}

fn cmd_validate(cfg: &RunConfig) -> Result<RunOutcome> {
    let (bundle, sha) = load(cfg)?;
    let mut out = Output::new(cfg, Some((&bundle, sha)))?;
    let present: Vec<&str> = [
        "zfs_grad_ghz_per_ang",
        "hfi_mhz",
        "hfi_grad_mhz_per_ang",
        "modes",
    ]
    .into_iter()
    .filter(|b| !bundle.missing_blocks().contains(b))
    .collect();
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "valid": true,
            "n_atoms": bundle.n_atoms(),
            "n_spin_active": bundle.atoms.iter().filter(|a| a.spin_active).count(),
            "n_modes": bundle.modes.len(),
            "present_blocks": present,
            "missing_blocks": bundle.missing_blocks(),
        }),
    )?;
    Ok(out.finish(1, 0))
}

fn cmd_gradients(cfg: &RunConfig) -> Result<RunOutcome> {
    let (mut bundle, _) = load(cfg)?;
    let table_path = cfg.table.as_ref().expect("gradients carries a table");
    let table = TabulatedOracle::load(table_path)?;
    let fd = finite_difference_gradients(&table, &bundle.positions(), table.dx)?;
    let diff_zfs = bundle
        .zfs_grad
        .as_ref()
        .map(|g| max_relative_difference(&fd.zfs_grad, g));
    let diff_hfi = match (&bundle.hfi_grad, &fd.hfi_grad) {
        (Some(old), Some(new)) => Some(max_relative_difference(new, old)),
        _ => None,
    };
    bundle.zfs_grad = Some(fd.zfs_grad);
    if fd.hfi_grad.is_some() {
        bundle.hfi_grad = fd.hfi_grad;
    }
    bundle.validate()?;
    let bundle_json = bundle.to_json()?;
    let sha = hex(&Sha256::digest(bundle_json.as_bytes()));
    let mut out = Output::new(cfg, Some((&bundle, sha)))?;
    out.write("bundle.json", bundle_json.as_bytes())?;
    let rows = gradient_rows(
        bundle.zfs_grad.as_ref().expect("set above"),
        bundle.hfi_grad.as_ref(),
    );
    out.csv("gradients.csv", &GRADIENT_COLUMNS, &rows)?;
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "dx_ang": jnum(table.dx),
            "n_atoms": bundle.n_atoms(),
            "max_rel_change_zfs_grad": diff_zfs.map(jnum),
            "max_rel_change_hfi_grad": diff_hfi.map(jnum),
        }),
    )?;
    Ok(out.finish(rows.len(), 0))
}

fn check_channel(cfg: &RunConfig, allowed: &[Channel]) -> Result<Channel> {
    let c = cfg.channel.unwrap_or(allowed[0]);
    if !allowed.contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "{} does not support channel {c}",
            cfg.command
        )));
    }
    Ok(c)
}

fn cmd_pure(cfg: &RunConfig) -> Result<RunOutcome> {
    check_channel(cfg, &[Channel::SpPh])?;
    let (bundle, sha) = load(cfg)?;
    let spin = spin_for(&bundle)?;
    let opts = PureOptions {
        temperatures: cfg.temperatures.clone(),
        grid: cfg.grid(),
        ..PureOptions::default()
    };
    let res = pure_dephasing(&bundle, &spin, &opts)?;
    let mut out = Output::new(cfg, Some((&bundle, sha)))?;
    let rows: Vec<Vec<String>> = res
        .rows
        .iter()
        .map(|r| {
            vec![
                opt(r.temperature),
                num(r.gamma_inverse),
                num(r.gamma_inverse_lower),
                num(r.gamma_inverse_upper),
                num(r.delta_sq),
                opt(r.tau_c()),
                r.regime.map(Regime::as_str).unwrap_or_default().to_string(),
                r.status.as_str().to_string(),
            ]
        })
        .collect();
    out.csv(
        "rates.csv",
        &[
            "temperature_k",
            "gamma_inv_plain_s",
            "gamma_inv_lower_s",
            "gamma_inv_upper_s",
            "delta_sq_rad2_s2",
            "tau_c_s",
            "regime",
            "status",
        ],
        &rows,
    )?;
    let times = res.grid.times();
    out.csv(
        "correlation.csv",
        &["t_s", "c_rad2_s2"],
        &times
            .iter()
            .zip(&res.correlation)
            .map(|(t, c)| vec![num(*t), num(*c)])
            .collect::<Vec<_>>(),
    )?;
    out.csv(
        "dephasing.csv",
        &["t_s", "g", "d"],
        &times
            .iter()
            .zip(res.g.iter().zip(&res.dephasing))
            .map(|(t, (g, d))| vec![num(*t), num(*g), num(*d)])
            .collect::<Vec<_>>(),
    )?;
    let reports = res
        .rows
        .iter()
        .map(|r| {
            let s = aggregate_report(std::slice::from_ref(r), cfg.t1, cfg.sequence)?;
            Ok(report_json(
                &format!("T={}", num(r.temperature.unwrap_or(0.0))),
                &s,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_flagged = res.rows.iter().filter(|r| flagged(r.status)).count();
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "designated_temperature_k": jnum(res.designated_temperature),
            "rows": res.rows.iter().map(|r| summary_row(r, None, None)).collect::<Vec<_>>(),
            "flagged_rows": n_flagged,
            "reports": reports,
        }),
    )?;
    Ok(out.finish(res.rows.len(), n_flagged))
}

fn cmd_disorder(cfg: &RunConfig) -> Result<RunOutcome> {
    let channel = check_channel(cfg, &[Channel::SpNu, Channel::SpNuPh])?;
    let (bundle, sha) = load(cfg)?;
    let spin = spin_for(&bundle)?;
    let mut opts = DisorderOptions::for_channel(channel);
    opts.concentrations = cfg.concentrations.clone();
    opts.b_fields = cfg.b_fields.clone();
    opts.axis = cfg.axis.map(Vector3::from);
    opts.seed = cfg.seed;
    opts.temperature = cfg.single_temperature()?;
    opts.grid = cfg.grid();
    if let Some(n) = cfg.n_configs {
        opts.n_configs = n;
    }
    if let Some(c_t) = cfg.c_t {
        opts.orientation = OrientationModel::FieldAligned { c_t };
    } else if channel == Channel::SpNuPh {
        opts.orientation = OrientationModel::FieldAligned { c_t: DEFAULT_C_T };
    }
    let rows = disorder_sweep(&bundle, &spin, &opts)?;
    let mut out = Output::new(cfg, Some((&bundle, sha)))?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|d| {
            let r = &d.result;
            let e = r.ensemble.expect("sweep rows carry ensemble statistics");
            vec![
                num(d.concentration),
                num(d.b_field),
                num(r.gamma_inverse),
                num(e.std),
                num(e.stderr),
                num(r.gamma_inverse_lower),
                num(r.gamma_inverse_upper),
                num(r.delta_sq),
                opt(r.tau_c()),
                r.regime.map(Regime::as_str).unwrap_or_default().to_string(),
                e.n_configs.to_string(),
                e.n_finite.to_string(),
                d.seed.to_string(),
                r.status.as_str().to_string(),
            ]
        })
        .collect();
    out.csv(
        "ensemble.csv",
        &[
            "concentration",
            "b_field_g",
            "gamma_inv_mean_s",
            "gamma_inv_std_s",
            "gamma_inv_stderr_s",
            "gamma_inv_lower_s",
            "gamma_inv_upper_s",
            "delta_sq_rad2_s2",
            "tau_c_s",
            "regime",
            "n_configs",
            "n_finite",
            "seed",
            "status",
        ],
        &table,
    )?;
    let reports = rows
        .iter()
        .map(|d| {
            let s = aggregate_report(std::slice::from_ref(&d.result), cfg.t1, cfg.sequence)?;
            Ok(report_json(
                &format!("c={},B={}", num(d.concentration), num(d.b_field)),
                &s,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_flagged = rows.iter().filter(|d| flagged(d.result.status)).count();
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "channel": channel.as_str(),
            "n_configs": opts.n_configs,
            "orientation": opts.orientation,
            "rows": rows.iter().map(|d| summary_row(&d.result, Some(d.concentration), Some(d.b_field))).collect::<Vec<_>>(),
            "flagged_rows": n_flagged,
            "reports": reports,
        }),
    )?;
    Ok(out.finish(rows.len(), n_flagged))
}

fn cmd_resolve(cfg: &RunConfig) -> Result<RunOutcome> {
    check_channel(cfg, &[Channel::SpPh])?;
    let by = cfg
        .by
        .ok_or_else(|| Error::InvalidArgument("resolve needs --by atom|mode".into()))?;
    let (bundle, sha) = load(cfg)?;
    let spin = spin_for(&bundle)?;
    let mut opts = ResolveOptions::new(by, cfg.single_temperature()?);
    if cfg.dt.is_some() || cfg.t_max.is_some() {
        let g = crate::fluct::mode_couplings(&bundle, &spin, Channel::SpPh, None)?;
        opts.grid = cfg.grid().apply(crate::fluct::default_grid(&g))?;
    }
    let rows = resolve_contributions(&bundle, &spin, &opts)?;
    let mut out = Output::new(cfg, Some((&bundle, sha)))?;
    let coordinate = match by {
        ResolveBy::Atom => "distance_ang",
        ResolveBy::Mode => "frequency_thz",
    };
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                num(r.coordinate),
                num(r.gamma_inverse),
                num(r.delta_sq),
                opt(r.localization),
                r.status.as_str().to_string(),
            ]
        })
        .collect();
    out.csv(
        "resolved.csv",
        &[
            "index",
            coordinate,
            "gamma_inv_s",
            "delta_sq_rad2_s2",
            "localization",
            "status",
        ],
        &table,
    )?;
    let n_flagged = rows.iter().filter(|r| flagged(r.status)).count();
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "by": by.to_string(),
            "rows_written": rows.len(),
            "total_delta_sq_rad2_s2": jnum(crate::numeric::compensated_sum(rows.iter().map(|r| r.delta_sq))),
            "flagged_rows": n_flagged,
        }),
    )?;
    Ok(out.finish(rows.len(), n_flagged))
}

/// One channel result read back from a `summary.json`.
#[derive(Debug, Clone)]
struct StoredRow {
    source: PathBuf,
    channel: Channel,
    temperature: Option<f64>,
    concentration: Option<f64>,
    b_field: Option<f64>,
    gamma_inverse: f64,
}

fn read_rows(path: &Path) -> Result<Vec<StoredRow>> {
    let file = if path.is_dir() {
        path.join("summary.json")
    } else {
        path.to_path_buf()
    };
    let v: Value = serde_json::from_str(&fs::read_to_string(&file)?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let rows = v
        .get("rows")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    rows.iter()
        .map(|r| {
            let channel: Channel = r
                .get("channel")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Parse(format!("{}: row without channel", file.display())))?
                .parse()?;
            let gamma_inverse = r.get("gamma_inv_s").and_then(read_num).ok_or_else(|| {
                Error::Parse(format!("{}: row without gamma_inv_s", file.display()))
            })?;
            Ok(StoredRow {
                source: file.clone(),
                channel,
                temperature: r.get("temperature_k").and_then(read_num),
                concentration: r.get("concentration").and_then(read_num),
                b_field: r.get("b_field_g").and_then(read_num),
                gamma_inverse,
            })
        })
        .collect()
}

fn matches(filter: &Option<Vec<f64>>, value: Option<f64>) -> bool {
    match (filter, value) {
        (None, _) | (_, None) => true,
        (Some(list), Some(v)) => list
            .iter()
            .any(|x| (x - v).abs() <= 1e-12 * x.abs().max(v.abs()).max(1e-300)),
    }
}

fn cmd_report(cfg: &RunConfig, args: &RunArgs) -> Result<RunOutcome> {
    let mut rows = Vec::new();
    for p in &cfg.inputs {
        rows.extend(read_rows(p)?);
    }
    rows.retain(|r| {
        matches(&args.temps, r.temperature)
            && matches(&args.concentrations, r.concentration)
            && matches(&args.bfield, r.b_field)
            && cfg.channel.is_none_or(|c| c == r.channel)
    });
    let mut chosen: Vec<StoredRow> = Vec::new();
    for r in rows {
        if let Some(prev) = chosen.iter().find(|c| c.channel == r.channel) {
            return Err(Error::InvalidArgument(format!(
                "several {} rows remain ({} and {}); narrow them with --temps, --concentrations or --bfield",
                r.channel,
                prev.source.display(),
                r.source.display()
            )));
        }
        chosen.push(r);
    }
    if chosen.is_empty() {
        return Err(Error::InvalidArgument(
            "no channel rows match the given filters".into(),
        ));
    }
    chosen.sort_by_key(|r| r.channel);
    let results: Vec<DephasingResult> = chosen
        .iter()
        .map(|r| {
            let mut d = DephasingResult::none(r.channel, r.temperature);
            d.gamma_inverse = r.gamma_inverse;
            d.gamma_inverse_lower = r.gamma_inverse;
            d.gamma_inverse_upper = r.gamma_inverse;
            d
        })
        .collect();
    let summary = aggregate_report(&results, cfg.t1, cfg.sequence)?;
    let mut out = Output::new(cfg, None)?;
    let mut table: Vec<Vec<String>> = summary
        .channels
        .iter()
        .map(|c| {
            vec![
                c.channel.as_str().to_string(),
                num(c.gamma),
                num(c.gamma_inverse),
                homogeneity(c.classification.homogeneity).to_string(),
                reversibility(c.classification.reversibility).to_string(),
                c.included.to_string(),
            ]
        })
        .collect();
    if let Some(t1) = cfg.t1 {
        table.push(vec![
            "t1".into(),
            num(1.0 / (2.0 * t1)),
            num(2.0 * t1),
            String::new(),
            String::new(),
            "true".into(),
        ]);
    }
    table.push(vec![
        "total".into(),
        num(summary.total_gamma),
        num(summary.total_gamma_inverse),
        String::new(),
        String::new(),
        "true".into(),
    ]);
    out.csv(
        "report.csv",
        &[
            "channel",
            "gamma_per_s",
            "gamma_inv_s",
            "homogeneity",
            "reversibility",
            "included",
        ],
        &table,
    )?;
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "sources": chosen.iter().map(|r| r.source.display().to_string()).collect::<Vec<_>>(),
            "report": report_json("total", &summary),
        }),
    )?;
    Ok(out.finish(table.len(), 0))
}

/// Run a parsed command line.
pub fn execute(cli: &Cli) -> Result<RunOutcome> {
    let cfg = RunConfig::from_cli(cli)?;
    match &cli.command {
        Command::GenSynthetic { .. } => cmd_gen_synthetic(&cfg),
        Command::Validate => cmd_validate(&cfg),
        Command::Gradients { .. } => cmd_gradients(&cfg),
        Command::Pure => cmd_pure(&cfg),
        Command::Disorder => cmd_disorder(&cfg),
        Command::Resolve => cmd_resolve(&cfg),
        Command::Report { .. } => cmd_report(&cfg, &cli.args),
    }
}

/// Entry point of the `spindephase` binary.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.flagged > 0 {
                eprintln!(
                    "warning: {} row(s) carry flagged fits (see the status column)",
                    outcome.flagged
                );
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

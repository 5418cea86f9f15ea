//! Subcommands of the `afree` tool. Every command is a pure function of its
//! arguments returning an exit code, a JSON report and auxiliary files.

use std::path::{Path, PathBuf};

use afree_core::euler::{self, PressureLaw, SecondStateRule, SubsolutionState};
use afree_core::field::PeriodicField;
use afree_core::functions::{FunctionKind, FunctionSpec, LibraryEntry, LibraryManifest};
use afree_core::operator::{self, LinearOperator, DEFAULT_RANK_TOL};
use afree_core::oscillation::{self, Feasibility, LaminateSpec, Profile};
use afree_core::quasiconvexity::{self, ProbeConfig};
use afree_core::report;
use afree_core::young::{MeasureFile, ParametrizedMeasure};
use afree_core::Error;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "afree", version, about = "Wave cones, laminates, rigidity and quasiconvexity probes")]
pub struct Cli {
    /// Output directory for the report, manifest echo and data files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub action: Action,
}

#[derive(Debug, Subcommand)]
pub enum Action {
    #[command(flatten)]
    Command(Command),
    /// Re-run a command from a manifest echo.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Sample the symbol rank (numerically and exactly).
    RankCheck(RankCheckArgs),
    /// Wave-cone membership of a state.
    WaveCone(WaveConeArgs),
    /// Synthesize a laminate of two states.
    Laminate(LaminateArgs),
    /// Rigidity reconstruction for a non-wave-cone pair.
    Rigidity(RigidityArgs),
    /// Probe quasiconvexity of a function at a point.
    QcProbe(QcProbeArgs),
    /// The Euler two-state measure that no subsolution sequence generates.
    EulerCounterexample(EulerArgs),
    /// Weak-form residual (and optional Jensen checks) of a measure file.
    MvsCheck(MvsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RankCheck(_) => "rank-check",
            Command::WaveCone(_) => "wave-cone",
            Command::Laminate(_) => "laminate",
            Command::Rigidity(_) => "rigidity",
            Command::QcProbe(_) => "qc-probe",
            Command::EulerCounterexample(_) => "euler-counterexample",
            Command::MvsCheck(_) => "mvs-check",
        }
    }

    fn operator(&self) -> Option<&str> {
        match self {
            Command::RankCheck(a) => Some(&a.operator),
            Command::WaveCone(a) => Some(&a.operator),
            Command::Laminate(a) => Some(&a.operator),
            Command::Rigidity(a) => Some(&a.operator),
            Command::QcProbe(a) => Some(&a.operator),
            Command::EulerCounterexample(_) | Command::MvsCheck(_) => Some("euler"),
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Command::RankCheck(a) => a.seed,
            Command::WaveCone(_) => 0,
            Command::Laminate(_) => 0,
            Command::Rigidity(a) => a.seed,
            Command::QcProbe(a) => a.seed,
            Command::EulerCounterexample(a) => a.seed,
            Command::MvsCheck(a) => a.seed,
        }
    }
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct RankCheckArgs {
    /// Operator file or builtin (`euler`, `divergence-2d`, `divergence-3d`, ...).
    #[arg(long)]
    pub operator: String,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 100)]
    pub exact_samples: usize,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct WaveConeArgs {
    #[arg(long)]
    pub operator: String,
    /// Comma-separated state vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub state: Vec<f64>,
    /// Rank tolerance (determinant tolerance for `euler`).
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct LaminateArgs {
    #[arg(long)]
    pub operator: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub z1: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub z2: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Integer wave direction; found automatically when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub xi: Option<Vec<i64>>,
    #[arg(long, default_value_t = 1)]
    pub oscillations: usize,
    /// `square` or `sine`.
    #[arg(long, default_value = "square")]
    pub profile: String,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct RigidityArgs {
    #[arg(long)]
    pub operator: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub z1: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub z2: Vec<f64>,
    /// Field CSV; without it a smooth random segment field is projected `A`-free.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    pub modes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct QcProbeArgs {
    #[arg(long)]
    pub operator: String,
    /// Builtin function (`norm_squared`, `neg_norm_squared`, `zero`,
    /// `neg_directional_square` with `--direction`) or a name in `--library`.
    #[arg(long)]
    pub function: String,
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub direction: Option<Vec<f64>>,
    /// Base point (zero when omitted).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3)]
    pub cutoff: usize,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct EulerArgs {
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma_exp: f64,
    /// Fixed second density; otherwise `--gamma-range` is searched.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1.1,4")]
    pub gamma_range: Vec<f64>,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Largest `|k|_1` of the weak-form test functions.
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    /// Relative determinant tolerance.
    #[arg(long, default_value_t = euler::DEFAULT_DET_TOL)]
    pub tol: f64,
    /// `lift-consistent` or `as-printed` (q2 = p(gamma) + gamma/3).
    #[arg(long, default_value = "lift-consistent")]
    pub second_state: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct MvsArgs {
    /// Measure file, either on subsolution space (d = 10) or phase space (d = 4).
    #[arg(long)]
    pub measure: PathBuf,
    /// Initial data JSON `{"rho0": [..], "m0": [[..], ..]}`; defaults to the first time layer.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma_exp: f64,
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Function library manifest for the Jensen checks.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 2)]
    pub cutoff: usize,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Result of a command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub message: Option<String>,
    pub report: Value,
    /// Auxiliary files, by name relative to the output directory.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(exit_code: i32, report: Value) -> Self {
        Self {
            exit_code,
            message: None,
            report,
            files: Vec::new(),
        }
    }

    fn with_message(mut self, message: impl Into<String>) -> Self {
        self.message = Some(message.into());
        self
    }
}

/// Input errors; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl From<Error> for UsageError {
    fn from(e: Error) -> Self {
        UsageError(e.to_string())
    }
}

type CmdResult = Result<Outcome, UsageError>;

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Builtin name (`euler`, `divergence-<k>d`) or path to an operator file.
pub fn resolve_operator(spec: &str) -> Result<LinearOperator, UsageError> {
    if spec == "euler" {
        return Ok(euler::build_euler_operator());
    }
    if let Some(k) = spec.strip_prefix("divergence-").and_then(|s| s.strip_suffix('d')) {
        let k: usize = k.parse().map_err(|_| usage(format!("unknown builtin operator {spec}")))?;
        return Ok(LinearOperator::divergence(k)?);
    }
    LinearOperator::load(Path::new(spec)).map_err(|e| usage(format!("cannot load operator {spec}: {e}")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

pub fn execute(cmd: &Command) -> CmdResult {
    match cmd {
        Command::RankCheck(a) => rank_check(a),
        Command::WaveCone(a) => wave_cone(a),
        Command::Laminate(a) => laminate(a),
        Command::Rigidity(a) => rigidity(a),
        Command::QcProbe(a) => qc_probe(a),
        Command::EulerCounterexample(a) => euler_counterexample(a),
        Command::MvsCheck(a) => mvs_check(a),
    }
}

fn rank_check(a: &RankCheckArgs) -> CmdResult {
    let op = resolve_operator(&a.operator)?;
    let numeric = operator::check_constant_rank(&op, a.samples, a.tol, a.seed)?;
    let exact = operator::check_constant_rank_exact(&op, a.exact_samples, 50, a.seed)?;
    let constant = numeric.constant && (a.exact_samples == 0 || (exact.constant && exact.rank == numeric.rank));
    let report = json!({
        "operator": {"N": op.n(), "d": op.d(), "l": op.l()},
        "numeric": to_value(&numeric),
        "exact": to_value(&exact),
        "constant": constant,
        "rank": if constant { numeric.rank } else { None },
    });
    let out = Outcome::new(if constant { 0 } else { 1 }, report);
    Ok(if constant {
        out
    } else {
        out.with_message("symbol rank is not constant")
    })
}

fn wave_cone(a: &WaveConeArgs) -> CmdResult {
    let op = resolve_operator(&a.operator)?;
    let (verdict, det) = if a.operator == "euler" {
        let s = SubsolutionState::unpack(&a.state)?;
        let tol = a.tol.unwrap_or(euler::DEFAULT_DET_TOL);
        (euler::wave_cone_euler(&s, tol)?, Some(euler::z_matrix_euler(&s).determinant()))
    } else {
        (operator::in_wave_cone(&op, &a.state, a.tol.unwrap_or(DEFAULT_RANK_TOL))?, None)
    };
    let direction = if verdict.member {
        operator::rationalize_direction(&op, &a.state, oscillation::WAVE_DIRECTION_TOL)
    } else {
        None
    };
    let report = json!({
        "verdict": to_value(&verdict),
        "member": verdict.member,
        "integer_direction": direction,
        "z_determinant": det,
    });
    Ok(Outcome::new(if verdict.member { 0 } else { 1 }, report))
}

fn parse_profile(s: &str) -> Result<Profile, UsageError> {
    match s {
        "square" => Ok(Profile::Square),
        "sine" => Ok(Profile::Sine),
        other => Err(usage(format!("unknown profile {other} (expected square or sine)"))),
    }
}

/// Default laminate grid: `c |xi_i|` nodes on oscillated axes with
/// `c = max(64, 8 n)`, two nodes elsewhere.
pub fn default_laminate_dims(xi: &[i64], oscillations: usize) -> Vec<usize> {
    let c = 64.max(8 * oscillations);
    xi.iter()
        .map(|&x| if x == 0 { 2 } else { c * x.unsigned_abs() as usize })
        .collect()
}

fn laminate(a: &LaminateArgs) -> CmdResult {
    let op = resolve_operator(&a.operator)?;
    let profile = parse_profile(&a.profile)?;
    if a.z1.len() != op.d() || a.z2.len() != op.d() {
        return Err(usage(format!("states must have {} components", op.d())));
    }
    let diff: Vec<f64> = a.z1.iter().zip(&a.z2).map(|(x, y)| x - y).collect();
    let xi = match &a.xi {
        Some(xi) => xi.clone(),
        None => {
            if diff.iter().all(|&x| x == 0.0) {
                return Err(usage("z1 and z2 coincide"));
            }
            if !operator::in_wave_cone(&op, &diff, DEFAULT_RANK_TOL)?.member {
                return Ok(rigid_pair(None));
            }
            operator::rationalize_direction(&op, &diff, oscillation::WAVE_DIRECTION_TOL)
                .ok_or_else(|| usage("no integer wave direction found for z1 - z2; pass --xi"))?
        }
    };
    let spec = LaminateSpec {
        z1: a.z1.clone(),
        z2: a.z2.clone(),
        lambda: a.lambda,
        xi: xi.clone(),
        oscillations: a.oscillations,
        profile,
    };
    let dims = a.dims.clone().unwrap_or_else(|| default_laminate_dims(&xi, a.oscillations));
    let field = match oscillation::synthesize_laminate(&op, &spec, &dims) {
        Ok(f) => f,
        Err(Error::NotWaveDirection { xi }) => return Ok(rigid_pair(Some(xi))),
        Err(e) => return Err(e.into()),
    };
    let residual = oscillation::constraint_residual(&op, &field)?;
    let (empirical, distance) = oscillation::laminate_measure_distance(&field, &spec)?;
    let min_dim = dims
        .iter()
        .zip(&xi)
        .filter(|(_, &x)| x != 0)
        .map(|(&n, _)| n)
        .min()
        .unwrap_or(1);
    let gap = afree_core::linalg::norm(&diff);
    let report = json!({
        "spec": to_value(&spec),
        "dims": dims,
        "residual": to_value(&residual),
        "field_norm": field.l2_norm(),
        "mean": field.mean(),
        "measure_distance": distance,
        "distance_bound": 2.0 * gap / min_dim as f64,
        "n_atoms": empirical.atoms().len(),
        "field": "field.csv",
        "measure": "measure.json",
    });
    let mut csv = Vec::new();
    field.write_csv(&mut csv)?;
    let mut out = Outcome::new(0, report);
    out.files.push(("field.csv".into(), csv));
    out.files.push(("measure.json".into(), report::to_json_string(&empirical.to_file())?.into_bytes()));
    Ok(out)
}

fn rigid_pair(xi: Option<Vec<i64>>) -> Outcome {
    Outcome::new(
        1,
        json!({
            "verdict": "rigid",
            "xi": xi,
            "refused": true,
        }),
    )
    .with_message("rigid pair: z1 - z2 is not in the wave cone")
}

fn rigidity(a: &RigidityArgs) -> CmdResult {
    let op = resolve_operator(&a.operator)?;
    let field = match &a.field {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
            PeriodicField::read_csv(f)?
        }
        None => {
            let dims = a.dims.clone().unwrap_or_else(|| vec![32; op.n()]);
            if dims.len() != op.n() {
                return Err(usage(format!("--dims needs {} entries", op.n())));
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
            let raw = oscillation::smooth_segment_field(&dims, &a.z1, &a.z2, a.modes, &mut rng)?;
            oscillation::project_afree(&op, &raw)?
        }
    };
    match oscillation::rigidity_reconstruct(&op, &a.z1, &a.z2, &field) {
        Ok(r) => {
            let bound = r.condition_number * (r.e_norm + 2.0 * r.grid_spacing);
            let mut csv = Vec::new();
            if let Some(l) = &r.lambda_field {
                l.write_csv(&mut csv)?;
            }
            let report = json!({
                "rigidity": to_value(&r),
                "bound": bound,
                "within_bound": r.reconstruction_error <= bound,
                "lambda_field": "lambda.csv",
            });
            let mut out = Outcome::new(0, report);
            out.files.push(("lambda.csv".into(), csv));
            Ok(out)
        }
        Err(Error::DifferenceInWaveCone) => Ok(Outcome::new(
            1,
            json!({"verdict": "oscillation_constructible", "refused": true}),
        )
        .with_message(Error::DifferenceInWaveCone.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn build_function(a: &QcProbeArgs, d: usize) -> Result<LibraryEntry, UsageError> {
    if let Some(path) = &a.library {
        let lib = LibraryManifest::load(path).map_err(|e| usage(format!("cannot load library {}: {e}", path.display())))?;
        let spec = lib
            .functions
            .iter()
            .find(|f| f.name == a.function)
            .ok_or_else(|| usage(format!("function {} not in library", a.function)))?;
        return Ok(spec.build(d)?);
    }
    let kind = if a.function == "neg_directional_square" {
        let c = a
            .direction
            .clone()
            .ok_or_else(|| usage("neg_directional_square needs --direction"))?;
        FunctionKind::NegDirectionalSquare { c }
    } else {
        FunctionKind::Builtin {
            builtin: a.function.clone(),
        }
    };
    Ok(FunctionSpec {
        name: a.function.clone(),
        growth_p: 2.0,
        kind,
    }
    .build(d)?)
}

fn qc_probe(a: &QcProbeArgs) -> CmdResult {
    let op = resolve_operator(&a.operator)?;
    let entry = build_function(a, op.d())?;
    let z = a.at.clone().unwrap_or_else(|| vec![0.0; op.d()]);
    let cfg = ProbeConfig {
        cutoff: a.cutoff,
        dims: a.dims.clone().unwrap_or_else(|| vec![16; op.n()]),
        restarts: a.restarts,
        max_iters: a.max_iters,
        amplitude: a.amplitude,
        seed: a.seed,
        tol: a.tol,
        ..ProbeConfig::new(op.n())
    };
    let r = quasiconvexity::probe_quasiconvexity(entry.function.as_ref(), &z, &op, &cfg, None)?;
    let mut csv = Vec::new();
    if let Some(w) = &r.witness {
        w.write_csv(&mut csv)?;
    }
    let report = json!({
        "function": entry.name,
        "at": z,
        "config": to_value(&cfg),
        "probe": to_value(&r),
        "witness": "witness.csv",
        "interpretation": if r.certified_violation {
            "certified: the function is not A-quasiconvex at this point (up to discretization)"
        } else {
            "no violation found: evidence only, not a proof of A-quasiconvexity"
        },
    });
    let mut out = Outcome::new(0, report);
    out.files.push(("witness.csv".into(), csv));
    Ok(out)
}

fn parse_rule(s: &str) -> Result<SecondStateRule, UsageError> {
    match s {
        "lift-consistent" => Ok(SecondStateRule::LiftConsistent),
        "as-printed" => Ok(SecondStateRule::AsPrinted),
        other => Err(usage(format!("unknown second-state rule {other}"))),
    }
}

/// Largest weak-form residual over test degrees `0..=degree`.
fn weak_residual_up_to(nu: &ParametrizedMeasure, initial: &euler::InitialData, degree: usize) -> Result<f64, Error> {
    let mut worst = 0.0f64;
    for deg in 0..=degree {
        worst = worst.max(euler::weak_form_residual(nu, initial, deg)?.max_residual);
    }
    Ok(worst)
}

fn euler_counterexample(a: &EulerArgs) -> CmdResult {
    let p = PressureLaw::new(a.kappa, a.gamma_exp)?;
    let rule = parse_rule(&a.second_state)?;
    if let Some(g) = a.gamma {
        if g == 1.0 {
            return Err(usage("gamma = 1 makes the two states coincide (degenerate pair)"));
        }
    }
    let (states, search) = match a.gamma {
        Some(g) => (euler::counterexample_states_with(&p, g, rule, a.tol)?, None),
        None => {
            if a.gamma_range.len() != 2 {
                return Err(usage("--gamma-range needs two values"));
            }
            let s = euler::counterexample_search(&p, (a.gamma_range[0], a.gamma_range[1]), a.steps)?;
            let states = euler::counterexample_states_with(&p, s.gamma, rule, a.tol)?;
            (states, Some(json!({"range": a.gamma_range, "grid_points": s.n_grid, "gamma": s.gamma})))
        }
    };
    let diff = states.z2.sub(&states.z1);
    let op = euler::build_euler_operator();
    let cone = euler::wave_cone_euler(&diff, a.tol)?;
    let feasibility = oscillation::oscillation_feasibility(&op, &states.z1.pack(), &states.z2.pack(), DEFAULT_RANK_TOL)?;
    let trial = LaminateSpec {
        z1: states.z1.pack().to_vec(),
        z2: states.z2.pack().to_vec(),
        lambda: 0.5,
        xi: vec![0, 1, 0, 0],
        oscillations: 1,
        profile: Profile::Square,
    };
    let refusal = match oscillation::synthesize_laminate(&op, &trial, &[2, 8, 2, 2]) {
        Ok(_) => None,
        Err(e) => Some(e.to_string()),
    };
    let laminate_refused = matches!(refusal.as_deref(), Some(m) if m.contains("rigid pair"));

    let lifted = states.lifted_measure();
    let phase = states.phase_measure();
    let family = ParametrizedMeasure::homogeneous(vec![2, 2, 2, 2], 1.0, lifted.clone())?;
    let initial = euler::InitialData::from_first_layer(&family)?;
    let residual = weak_residual_up_to(&family, &initial, a.degree)?;
    let phase_family = ParametrizedMeasure::homogeneous(vec![2, 2, 2, 2], 1.0, phase.clone())?;
    let residual_euler = (0..=a.degree)
        .map(|deg| euler::weak_form_residual_euler(&phase_family, &p, &initial, deg).map(|r| r.max_residual))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0f64, f64::max);

    let sep = euler::SeparatingFunction::from_pair(&states.z1.pack(), &states.z2.pack())?;
    use afree_core::functions::ScalarFunction;
    let sep_gap = lifted.jensen_gap(|w| sep.value(w))?;
    let atomic_gap = afree_core::young::DiscreteYoungMeasure::dirac(states.z1.pack().to_vec())
        .jensen_gap(|w| sep.value(w))?;
    let directional = separating_directional_check(&sep, &op, &lifted.barycenter(), &states.zdiff, a.seed)?;

    // the determinant test and the rank test use different tolerances; near a
    // root of the determinant both must agree before the pair counts as rigid
    let rigid = states.verdict == euler::CounterexampleVerdict::Rigid && feasibility.verdict == Feasibility::Rigid;
    let certified = rigid && !cone.member && laminate_refused && residual <= 1e-12;
    let report = json!({
        "pressure": {"kappa": a.kappa, "gamma_exp": a.gamma_exp},
        "search": search,
        "states": to_value(&states),
        "determinant": {
            "numeric": states.det_numeric,
            "closed_form": states.det_formula,
            "ratio": states.ratio,
            "numeric_over_gamma_minus_one": states.det_over_gamma_minus_one,
            "note": "the closed form is evaluated as stated; no agreement is asserted",
        },
        "wave_cone": to_value(&cone),
        "feasibility": to_value(&feasibility),
        "laminate_refusal": refusal,
        "weak_form": {
            "degree": a.degree,
            "max_residual_subsolution": residual,
            "max_residual_euler": residual_euler,
        },
        "jensen": {
            "separating_function_gap": sep_gap,
            "atomic_gap": atomic_gap,
            "directional_check": directional,
            "caveat": quasiconvexity::QUASICONVEXITY_CAVEAT,
        },
        "certified": certified,
        "measure": "measure.json",
        "euler_measure": "euler_measure.json",
    });
    let mut out = Outcome::new(if certified { 0 } else { 1 }, report);
    if !rigid {
        out = out.with_message("advisory: the difference state has vanishing determinant at this gamma");
    } else if !certified {
        out = out.with_message("pipeline did not certify the counterexample");
    }
    out.files.push(("measure.json".into(), report::to_json_string(&lifted.to_file())?.into_bytes()));
    out.files.push(("euler_measure.json".into(), report::to_json_string(&phase.to_file())?.into_bytes()));
    Ok(out)
}

/// Square-wave slack of the separating function at the midpoint along sampled
/// wave-cone directions, scaled to the size of the state difference. Diagnostic
/// only: its sign is reported, not asserted.
fn separating_directional_check(
    sep: &euler::SeparatingFunction,
    op: &LinearOperator,
    midpoint: &[f64],
    zdiff: &[f64],
    seed: u64,
) -> Result<Value, Error> {
    const DIRECTIONS: usize = 50;
    let scale = afree_core::linalg::norm(zdiff);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t_grid = [0.25, 0.5, 1.0];
    let lambda_grid = [0.25, 0.5, 0.75];
    let mut min_slack = f64::INFINITY;
    let mut worst = Value::Null;
    let mut checked = 0;
    for _ in 0..10 * DIRECTIONS {
        if checked == DIRECTIONS {
            break;
        }
        let Some((zbar, _)) = operator::sample_wave_cone_state(op, &mut rng) else {
            continue;
        };
        let nz = afree_core::linalg::norm(&zbar);
        let zbar: Vec<f64> = zbar.iter().map(|x| x * scale / nz).collect();
        let check = quasiconvexity::lambda_convexity_check(sep, midpoint, op, &zbar, &t_grid, &lambda_grid)?;
        checked += 1;
        if check.min_slack < min_slack {
            min_slack = check.min_slack;
            worst = json!({"lambda": check.worst_lambda, "t": check.worst_t, "direction": zbar});
        }
    }
    Ok(json!({
        "directions": checked,
        "t_grid": t_grid,
        "lambda_grid": lambda_grid,
        "min_slack": min_slack,
        "worst_case": worst,
    }))
}

fn mvs_check(a: &MvsArgs) -> CmdResult {
    let p = PressureLaw::new(a.kappa, a.gamma_exp)?;
    let text = std::fs::read_to_string(&a.measure)
        .map_err(|e| usage(format!("cannot read {}: {e}", a.measure.display())))?;
    let file: MeasureFile = serde_json::from_str(&text).map_err(|e| usage(format!("malformed measure file: {e}")))?;
    let nu = file.into_parametrized()?;
    let lifted = match nu.dim() {
        10 => nu,
        4 => nu.map(|m| euler::lift_measure(m, &p))?,
        d => return Err(usage(format!("measure dimension must be 4 or 10, got {d}"))),
    };
    let initial = match &a.initial {
        Some(path) => {
            let t = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&t).map_err(|e| usage(format!("malformed initial data: {e}")))?
        }
        None => euler::InitialData::from_first_layer(&lifted)?,
    };
    let mut per_degree = Vec::new();
    for deg in 0..=a.degree {
        per_degree.push(euler::weak_form_residual(&lifted, &initial, deg)?);
    }
    let worst = per_degree.iter().map(|r| r.max_residual).fold(0.0f64, f64::max);
    let conditions = match &a.library {
        Some(path) => {
            let lib = LibraryManifest::load(path).map_err(|e| usage(format!("cannot load library {}: {e}", path.display())))?;
            let entries = lib.build(10)?;
            let cfg = ProbeConfig {
                cutoff: a.cutoff,
                dims: a.dims.clone().unwrap_or_else(|| vec![8; 4]),
                restarts: a.restarts,
                seed: a.seed,
                ..ProbeConfig::new(4)
            };
            let op = euler::build_euler_operator();
            Some(to_value(&quasiconvexity::check_fonseca_muller_parametrized(&lifted, &op, a.p, &entries, &cfg)?))
        }
        None => None,
    };
    let ok = worst <= a.tol;
    let report = json!({
        "shape": lifted.shape(),
        "horizon": lifted.horizon(),
        "homogeneous": lifted.is_homogeneous(),
        "weak_form": to_value(&per_degree),
        "max_residual": worst,
        "tol": a.tol,
        "measure_valued_subsolution": ok,
        "conditions": conditions,
    });
    let out = Outcome::new(if ok { 0 } else { 1 }, report);
    Ok(if ok {
        out
    } else {
        out.with_message("weak-form residual above tolerance")
    })
}

/// Manifest echo: the command with all arguments, plus tool version and
/// output directory.
pub fn manifest_echo(cmd: &Command, out: Option<&Path>) -> Value {
    let mut v = to_value(cmd);
    if let Value::Object(map) = &mut v {
        map.insert("tool_version".into(), json!(TOOL_VERSION));
        map.insert("operator_path".into(), json!(cmd.operator()));
        map.insert("seed_used".into(), json!(cmd.seed()));
        map.insert("output_dir".into(), json!(out.map(|p| p.display().to_string())));
    }
    v
}

pub fn load_manifest(path: &Path) -> Result<Command, UsageError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("malformed manifest: {e}")))
}

/// Executes and writes `report.json`, `manifest.json` and auxiliary files
/// into `out` (when given). Returns the exit code.
pub fn run(cmd: &Command, out: Option<&Path>) -> Result<Outcome, UsageError> {
    let outcome = execute(cmd)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
        let write = |name: &str, bytes: &[u8]| {
            report::write_atomic(&dir.join(name), bytes).map_err(|e| usage(format!("cannot write {name}: {e}")))
        };
        for (name, bytes) in &outcome.files {
            write(name, bytes)?;
        }
        write("report.json", report::to_json_string(&outcome.report)?.as_bytes())?;
        write("manifest.json", report::to_json_string(&manifest_echo(cmd, out))?.as_bytes())?;
    }
    Ok(outcome)
}

//! Command-line front end: device validation, extremality, decomposition and
//! the sphere and qubit demos. Reports are JSON (JSON lines for batch
//! commands); identical arguments give identical bytes.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use qbary::decompose::{registry, DecomposeOptions};
use qbary::devices::{validate, Device, ValidationReport};
use qbary::extremality::{extreme_support_bound_check, qubit_channel_condition};
use qbary::io::{
    decomposition_to_doc, device_from_json, matrix_to_doc, DecompositionDoc, MatrixDoc,
};
use qbary::qubitx::{self, BlochEffect, ExtremeChannelParams, Planting};
use qbary::sphere::{self, BorelRegion, SphereGrid};
use qbary::{is_extreme, Error, Tolerance};

pub const RNG_NAME: &str = "ChaCha8Rng";

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID_DEVICE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qbary",
    version,
    about = "Extremality and barycentric decompositions of quantum devices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Absolute tolerance.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub atol: f64,
    /// Relative tolerance, scaled by the largest singular value in play.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub rtol: f64,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Device JSON file.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check positivity and normalization of every branch.
    Validate(InputArgs),
    /// Decide extremality and report the perturbation space.
    Extremal(InputArgs),
    /// Write a device as a convex combination of extreme devices.
    Decompose {
        #[command(flatten)]
        input: InputArgs,
        /// Leaf budget before merging equal components.
        #[arg(long, default_value_t = 100_000)]
        max_components: usize,
        /// Registered strategy name; defaults by device kind.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Spin-direction POVM against its half-sphere barycenter on named regions.
    DemoSphere {
        /// Full-sphere grid as NxM (polar x azimuthal); the half-sphere grid uses N/2 x M.
        #[arg(long, default_value = "64x128", value_parser = parse_grid)]
        grid: (usize, usize),
        /// Also write per-node contributions of one region as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Index into the named regions for --csv.
        #[arg(long, default_value_t = 2)]
        region: usize,
    },
    /// Three-atom decomposition of a qubit effect given in Bloch form.
    DemoQubitEffect {
        #[arg(long)]
        e0: f64,
        /// Bloch vector as x,y,z.
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        bloch: [f64; 3],
    },
    /// Classify sampled members of the two-Kraus qubit channel family.
    DemoQubitChannel {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// List registered decomposition strategies.
    Strategies,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (n, m) = (parse(n)?, parse(m)?);
    if n < 4 || n % 2 != 0 || m == 0 {
        return Err(
            "grid needs an even polar count of at least 4 and a positive azimuthal count".into(),
        );
    }
    Ok((n, m))
}

fn parse_vector(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected 3 components, got {}", p.len()))
}

/// A failed run: exit code and message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidDevice(_) => EXIT_INVALID_DEVICE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Usage errors exit with 1 so that 2 stays reserved for
/// invalid devices.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_FAILURE
            } else {
                EXIT_OK
            });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Runs a parsed command, writing its report; returns the exit code.
pub fn run(cli: &Cli) -> Result<u8, Failure> {
    let tol = Tolerance::new(cli.atol, cli.rtol)?;
    let mut out = Report::open(cli.output.as_deref())?;
    let code = match &cli.command {
        Command::Validate(args) => {
            let dev = load(&args.input)?;
            let report = validate(&dev, tol);
            out.json(&ValidateReport::new("validate", &dev, &report))?;
            if report.is_valid() {
                EXIT_OK
            } else {
                EXIT_INVALID_DEVICE
            }
        }
        Command::Extremal(args) => {
            let dev = load(&args.input)?;
            match invalid_report("extremal", &dev, tol) {
                Some(r) => {
                    out.json(&r)?;
                    EXIT_INVALID_DEVICE
                }
                None => {
                    out.json(&extremal_report(&dev, tol)?)?;
                    EXIT_OK
                }
            }
        }
        Command::Decompose {
            input,
            max_components,
            strategy,
        } => {
            let dev = load(&input.input)?;
            match invalid_report("decompose", &dev, tol) {
                Some(r) => {
                    out.json(&r)?;
                    EXIT_INVALID_DEVICE
                }
                None => {
                    let opts = DecomposeOptions {
                        tol,
                        max_components: *max_components,
                        ..DecomposeOptions::default()
                    };
                    let d = registry().decompose(strategy.as_deref(), &dev, &opts)?;
                    let all_extreme = d
                        .components()
                        .par_iter()
                        .map(|c| is_extreme(&c.device, tol).map(|v| v.extreme))
                        .collect::<qbary::Result<Vec<_>>>()?
                        .into_iter()
                        .all(|x| x);
                    out.json(&DecomposeReport {
                        command: "decompose",
                        all_extreme,
                        decomposition: decomposition_to_doc(&d, &dev)?,
                    })?;
                    EXIT_OK
                }
            }
        }
        Command::DemoSphere { grid, csv, region } => {
            out.json(&sphere_report(*grid, csv.as_deref(), *region)?)?;
            EXIT_OK
        }
        Command::DemoQubitEffect { e0, bloch } => {
            out.json(&effect_report(*e0, *bloch)?)?;
            EXIT_OK
        }
        Command::DemoQubitChannel { seed, count } => {
            channel_suite(&mut out, *seed, *count, tol)?;
            EXIT_OK
        }
        Command::Strategies => {
            let list: Vec<StrategyEntry> = registry()
                .names()
                .map(|n| {
                    let s = registry().get(n).expect("listed names resolve");
                    StrategyEntry {
                        name: n,
                        description: s.description(),
                    }
                })
                .collect();
            out.json(&list)?;
            EXIT_OK
        }
    };
    out.finish()?;
    Ok(code)
}

fn load(path: &Path) -> Result<Device, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })?;
    device_from_json(&text).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })
}

/// Buffered report sink; writes to the file or standard output on finish.
struct Report {
    path: Option<PathBuf>,
    buf: Vec<u8>,
}

impl Report {
    fn open(path: Option<&Path>) -> Result<Self, Failure> {
        Ok(Self {
            path: path.map(Path::to_path_buf),
            buf: Vec::new(),
        })
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<(), Failure> {
        serde_json::to_writer_pretty(&mut self.buf, value).map_err(|e| Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        })?;
        self.buf.push(b'\n');
        Ok(())
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), Failure> {
        serde_json::to_writer(&mut self.buf, value).map_err(|e| Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        })?;
        self.buf.push(b'\n');
        Ok(())
    }

    fn finish(self) -> Result<(), Failure> {
        match &self.path {
            Some(p) => fs::write(p, &self.buf).map_err(|e| Failure {
                code: EXIT_FAILURE,
                message: format!("{}: {e}", p.display()),
            }),
            None => {
                let mut stdout = io::stdout().lock();
                stdout.write_all(&self.buf)?;
                stdout.flush()?;
                Ok(())
            }
        }
    }
}

#[derive(Serialize)]
struct DeviceSummary {
    #[serde(rename = "type")]
    kind: &'static str,
    d_in: usize,
    d_out: usize,
    outcomes: usize,
}

impl DeviceSummary {
    fn of(dev: &Device) -> Self {
        Self {
            kind: dev.kind().as_str(),
            d_in: dev.d_in(),
            d_out: dev.d_out(),
            outcomes: dev.to_instrument().branches().len(),
        }
    }
}

#[derive(Serialize)]
struct CheckEntry {
    name: String,
    passed: bool,
    margin: f64,
}

#[derive(Serialize)]
struct ValidateReport {
    command: &'static str,
    valid: bool,
    device: DeviceSummary,
    checks: Vec<CheckEntry>,
}

impl ValidateReport {
    fn new(command: &'static str, dev: &Device, report: &ValidationReport) -> Self {
        Self {
            command,
            valid: report.is_valid(),
            device: DeviceSummary::of(dev),
            checks: report
                .checks
                .iter()
                .map(|c| CheckEntry {
                    name: c.name.clone(),
                    passed: c.passed,
                    margin: c.margin,
                })
                .collect(),
        }
    }
}

fn invalid_report(command: &'static str, dev: &Device, tol: Tolerance) -> Option<ValidateReport> {
    let report = validate(dev, tol);
    (!report.is_valid()).then(|| ValidateReport::new(command, dev, &report))
}

#[derive(Serialize)]
struct QubitConditionEntry {
    holds: bool,
    upper: f64,
    lower: f64,
    margin: f64,
    threshold: f64,
    borderline: bool,
}

#[derive(Serialize)]
struct ExtremalReport {
    command: &'static str,
    device: DeviceSummary,
    extreme: bool,
    perturbation_dim: usize,
    smallest_singular_value: f64,
    threshold: f64,
    borderline: bool,
    /// Outcomes with a nonzero branch stay within `d_in²`; present when extreme.
    support_bound_holds: Option<bool>,
    /// Closed-form test for qubit channels with exactly two Kraus operators.
    qubit_condition: Option<QubitConditionEntry>,
}

fn extremal_report(dev: &Device, tol: Tolerance) -> Result<ExtremalReport, Failure> {
    let verdict = is_extreme(dev, tol)?;
    let support_bound_holds = if verdict.extreme {
        Some(extreme_support_bound_check(&dev.to_instrument(), tol)?)
    } else {
        None
    };
    let qubit_condition = match dev {
        Device::Channel(c) if c.instrument().d_in() == 2 => {
            let kraus = qbary::devices::kraus_from_choi(c.branch(), tol)?;
            match qubit_channel_condition(&kraus, tol) {
                Ok(q) => Some(QubitConditionEntry {
                    holds: q.holds,
                    upper: q.upper,
                    lower: q.lower,
                    margin: q.margin,
                    threshold: q.threshold,
                    borderline: q.borderline,
                }),
                Err(_) => None,
            }
        }
        _ => None,
    };
    Ok(ExtremalReport {
        command: "extremal",
        device: DeviceSummary::of(dev),
        extreme: verdict.extreme,
        perturbation_dim: verdict.perturbation_dim,
        smallest_singular_value: verdict.margin,
        threshold: verdict.threshold,
        borderline: verdict.borderline,
        support_bound_holds,
        qubit_condition,
    })
}

#[derive(Serialize)]
struct DecomposeReport {
    command: &'static str,
    all_extreme: bool,
    #[serde(flatten)]
    decomposition: DecompositionDoc,
}

#[derive(Serialize)]
struct StrategyEntry {
    name: &'static str,
    description: &'static str,
}

#[derive(Serialize)]
struct RegionEntry {
    region: String,
    #[serde(rename = "D")]
    d: MatrixDoc,
    barycenter: MatrixDoc,
    error: f64,
    error_estimate: f64,
}

#[derive(Serialize)]
struct SplitEntry {
    region: String,
    d_plus: MatrixDoc,
    d_minus: MatrixDoc,
    /// `‖½D₊ + ½D₋ − D‖`
    mixing_error: f64,
    /// `‖D₊ − D₋‖`
    difference: f64,
}

#[derive(Serialize)]
struct SphereReport {
    command: &'static str,
    grid: (usize, usize),
    half_grid: (usize, usize),
    regions: Vec<RegionEntry>,
    max_error: f64,
    /// `‖∫cos 2φ dD‖`
    cos2phi_moment: f64,
    split: Vec<SplitEntry>,
}

fn sphere_report(
    grid: (usize, usize),
    csv_path: Option<&Path>,
    region: usize,
) -> Result<SphereReport, Failure> {
    let full = SphereGrid::full(grid.0, grid.1)?;
    let half = SphereGrid::upper_half(grid.0 / 2, grid.1)?;
    let regions = sphere::named_regions();
    let mut entries = Vec::with_capacity(regions.len());
    let mut split = Vec::with_capacity(regions.len());
    for r in &regions {
        let d = sphere::spin_direction_effect(r, &full);
        let b = sphere::barycenter_over_halfsphere(r, &half)?;
        let (plus, minus) = sphere::dplus_dminus_split(r, &full);
        let mid = &plus.scale(0.5) + &minus.scale(0.5);
        split.push(SplitEntry {
            region: r.description().to_string(),
            mixing_error: (&mid - &d).max_abs(),
            difference: (&plus - &minus).max_abs(),
            d_plus: matrix_to_doc(&plus),
            d_minus: matrix_to_doc(&minus),
        });
        entries.push(RegionEntry {
            region: r.description().to_string(),
            error: (&d - &b.value).max_abs(),
            error_estimate: b.error_estimate,
            d: matrix_to_doc(&d),
            barycenter: matrix_to_doc(&b.value),
        });
    }
    if let Some(path) = csv_path {
        let r = regions.get(region).ok_or_else(|| Failure {
            code: EXIT_FAILURE,
            message: format!("region index {region} out of range 0..{}", regions.len()),
        })?;
        write_contributions(path, r, &full)?;
    }
    Ok(SphereReport {
        command: "demo-sphere",
        grid,
        half_grid: half.shape(),
        max_error: entries.iter().map(|e| e.error).fold(0.0, f64::max),
        regions: entries,
        cos2phi_moment: sphere::cos2phi_moment(&full).max_abs(),
        split,
    })
}

fn write_contributions(
    path: &Path,
    region: &BorelRegion,
    grid: &SphereGrid,
) -> Result<(), Failure> {
    let csv_err = |e: csv::Error| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["theta", "phi", "weight", "inside", "e0", "e1", "e2", "e3"])
        .map_err(csv_err)?;
    for c in sphere::node_contributions(region, grid) {
        let mut row = vec![
            c.theta.to_string(),
            c.phi.to_string(),
            c.weight.to_string(),
            c.inside.to_string(),
        ];
        row.extend(c.bloch.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EffectWeights {
    identity: f64,
    zero: f64,
    projection: f64,
}

#[derive(Serialize)]
struct EffectReport {
    command: &'static str,
    e0: f64,
    bloch: [f64; 3],
    effect: MatrixDoc,
    eigenvalues: (f64, f64),
    weights: EffectWeights,
    projection: Option<MatrixDoc>,
    reconstruction_error: f64,
}

fn effect_report(e0: f64, bloch: [f64; 3]) -> Result<EffectReport, Failure> {
    let b = BlochEffect::new(e0, bloch)?;
    let effect = qubitx::effect_from_bloch(b)?;
    let d = qubitx::decompose_effect(b);
    Ok(EffectReport {
        command: "demo-qubit-effect",
        e0,
        bloch,
        effect: matrix_to_doc(effect.matrix()),
        eigenvalues: b.eigenvalues(),
        weights: EffectWeights {
            identity: d.w_identity,
            zero: d.w_zero,
            projection: d.w_projection,
        },
        projection: d.projection.as_ref().map(matrix_to_doc),
        reconstruction_error: (&d.reconstruct() - effect.matrix()).max_abs(),
    })
}

#[derive(Serialize)]
struct SuiteHeader {
    command: &'static str,
    rng: &'static str,
    seed: u64,
    count: usize,
    atol: f64,
    rtol: f64,
}

#[derive(Serialize)]
struct ParamsEntry {
    p: [f64; 3],
    q: [f64; 3],
    r: [f64; 3],
    a: f64,
    b: f64,
    theta1: f64,
    theta2: f64,
    phi1: f64,
    phi2: f64,
}

impl From<&ExtremeChannelParams> for ParamsEntry {
    fn from(p: &ExtremeChannelParams) -> Self {
        Self {
            p: p.p,
            q: p.q,
            r: p.r,
            a: p.a,
            b: p.b,
            theta1: p.theta1,
            theta2: p.theta2,
            phi1: p.phi1,
            phi2: p.phi2,
        }
    }
}

#[derive(Serialize)]
struct ChannelEntry {
    index: usize,
    planting: &'static str,
    params: ParamsEntry,
    predicted_extreme: bool,
    is_extreme: bool,
    agree: bool,
    smallest_singular_value: f64,
    threshold: f64,
    borderline: bool,
    /// Absent when `K₀†K₀` is degenerate.
    qubit_condition: Option<QubitConditionEntry>,
}

#[derive(Serialize)]
struct SuiteSummary {
    summary: SummaryCounts,
}

#[derive(Serialize)]
struct SummaryCounts {
    agree: usize,
    disagree: usize,
    borderline: usize,
}

/// Slack for comparing sampled parameters in the closed-form predicate.
const PREDICATE_EPS: f64 = 1e-9;

fn sample_planting(rng: &mut ChaCha8Rng) -> Planting {
    match rng.random_range(0..8) {
        0..=3 => Planting::Generic,
        4 => Planting::EqualWeights,
        5 => Planting::EqualTargets,
        6 => Planting::Unitary,
        _ => Planting::Sharp,
    }
}

fn channel_suite(out: &mut Report, seed: u64, count: usize, tol: Tolerance) -> Result<(), Failure> {
    out.line(&SuiteHeader {
        command: "demo-qubit-channel",
        rng: RNG_NAME,
        seed,
        count,
        atol: tol.atol,
        rtol: tol.rtol,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<(Planting, ExtremeChannelParams)> = (0..count)
        .map(|_| {
            let planting = sample_planting(&mut rng);
            (planting, qubitx::sample_params(&mut rng, planting))
        })
        .collect();
    let entries = samples
        .par_iter()
        .enumerate()
        .map(
            |(index, (planting, params))| -> qbary::Result<ChannelEntry> {
                let kraus = qubitx::extreme_channel_kraus(params)?;
                let channel = qbary::Channel::from_kraus(kraus.clone());
                let verdict = is_extreme(&channel.into(), tol)?;
                let predicted = params.predicted_extreme(PREDICATE_EPS);
                let qubit_condition =
                    qubit_channel_condition(&kraus, tol)
                        .ok()
                        .map(|q| QubitConditionEntry {
                            holds: q.holds,
                            upper: q.upper,
                            lower: q.lower,
                            margin: q.margin,
                            threshold: q.threshold,
                            borderline: q.borderline,
                        });
                Ok(ChannelEntry {
                    index,
                    planting: planting.as_str(),
                    params: params.into(),
                    predicted_extreme: predicted,
                    is_extreme: verdict.extreme,
                    agree: predicted == verdict.extreme,
                    smallest_singular_value: verdict.margin,
                    threshold: verdict.threshold,
                    borderline: verdict.borderline,
                    qubit_condition,
                })
            },
        )
        .collect::<qbary::Result<Vec<_>>>()?;
    let mut counts = SummaryCounts {
        agree: 0,
        disagree: 0,
        borderline: 0,
    };
    for e in &entries {
        if e.borderline {
            counts.borderline += 1;
        } else if e.agree {
            counts.agree += 1;
        } else {
            counts.disagree += 1;
        }
        out.line(e)?;
    }
    out.line(&SuiteSummary { summary: counts })
}

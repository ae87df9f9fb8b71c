//! `absorbeq`: classify absorbing games, solve and Q-test LCPs, synthesize
//! and certify equilibrium strategies, and simulate them.
//!
//! Exit codes:
//!   classify  0 ok, 2 error
//!   lcp       0 feasible / Q, 1 infeasible / not Q, 2 error
//!   synth     0 certified, 3 synthesis failed, 4 unsupported class, 2 error
//!   verify    0 pass, 1 fail, 2 error
//!   simulate  0 ok, 2 error

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absorbeq_core::game::{classify, GameClassification};
use absorbeq_core::lcp::{self, LcpOutcome, LcpProblem, LcpVariant, QMatrixVerdict, QStatus};
use absorbeq_core::strategy::Strategy;
use absorbeq_core::synth::{synthesize, Synthesis, SynthOptions};
use absorbeq_core::verify::{
    certify_uniform, monte_carlo, CertificationReport, Criterion, SimConfig, SimDeviation,
    SimSummary, DEFAULT_LAMBDA_GRID, DEFAULT_T_GRID,
};
use absorbeq_core::{AbsorbingGame, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "absorbeq", version, about = "Equilibria of multiplayer absorbing games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Plain,
    Dominant,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Grids {
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Comma-separated, decreasing.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Comma-separated, increasing.
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<u64>>,
}

impl Grids {
    fn lambdas(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec())
    }

    fn horizons(&self) -> Vec<u64> {
        self.t_grid.clone().unwrap_or_else(|| DEFAULT_T_GRID.to_vec())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Structural flags and the canonical L-shaped labeling.
    Classify {
        game: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve LCP(R, q), or Q-test R with --qtest.
    Lcp {
        /// JSON {"r": [[..]], "q": [..]}; q may be omitted with --qtest.
        matrix: PathBuf,
        /// Comma-separated q overriding the file.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q: Option<Vec<f64>>,
        #[arg(long)]
        qtest: bool,
        #[arg(long, value_enum, default_value = "plain")]
        variant: Variant,
        #[arg(long, default_value_t = lcp::DEFAULT_DENSITY)]
        density: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize and certify a strategy; --out names the strategy file,
    /// the report goes next to it unless --report is given.
    Synth {
        game: PathBuf,
        #[command(flatten)]
        grids: Grids,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = lcp::DEFAULT_DENSITY)]
        density: usize,
        #[arg(long)]
        budget_secs: Option<f64>,
        #[arg(long, default_value = "strategy.json")]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Certify a strategy on the λ and T grids.
    Verify {
        game: PathBuf,
        strategy: PathBuf,
        #[command(flatten)]
        grids: Grids,
        #[command(flatten)]
        common: Common,
    },
    /// Seeded Monte Carlo of a strategy, optionally with one deviator.
    Simulate {
        game: PathBuf,
        strategy: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        runs: u64,
        #[arg(long, default_value_t = 1_000)]
        horizon: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        #[arg(long, requires = "deviate_dist")]
        deviate_player: Option<usize>,
        /// Comma-separated mixed action of the deviator.
        #[arg(long, value_delimiter = ',', requires = "deviate_player")]
        deviate_dist: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
}

/// Envelope shared by every report.
#[derive(Debug, Serialize, Deserialize)]
struct Report<T> {
    tool: String,
    version: String,
    command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<Budget>,
    result: T,
}

#[derive(Debug, Serialize, Deserialize)]
struct Budget {
    #[serde(skip_serializing_if = "Option::is_none")]
    secs: Option<f64>,
    density: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<u64>,
}

fn envelope<T>(command: &str, seed: Option<u64>, budget: Option<Budget>, result: T) -> Report<T> {
    Report {
        tool: "absorbeq".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        budget,
        result,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixFile {
    r: Vec<Vec<f64>>,
    #[serde(default)]
    q: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum LcpResult {
    Solve { problem: LcpProblem, outcome: LcpOutcome },
    Qtest { verdict: QMatrixVerdict },
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthResult {
    strategy_file: String,
    route: String,
    pass: bool,
    max_gain: f64,
    synthesis: Synthesis,
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthFailure {
    error: String,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            msg: e.to_string(),
        }
    }
}

fn fail(code: u8, msg: impl Into<String>) -> Failure {
    Failure {
        code,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn load_game(path: &Path) -> Result<AbsorbingGame, Failure> {
    AbsorbingGame::from_json(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn load_strategy(path: &Path) -> Result<Strategy, Failure> {
    Strategy::from_json(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| fail(2, format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn csv_rows(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| fail(2, e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| fail(2, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| fail(2, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn crit_label(c: &Criterion) -> (String, String) {
    match c {
        Criterion::Discounted(l) => ("lambda".into(), format!("{l}")),
        Criterion::Stages(t) => ("T".into(), format!("{t}")),
    }
}

fn render_cert(r: &CertificationReport, format: Format, wrapped: String) -> Result<String, Failure> {
    match format {
        Format::Json => Ok(wrapped),
        Format::Csv => csv_rows(
            &["criterion", "value", "player", "conforming", "deviation", "gain"],
            r.rows
                .iter()
                .map(|row| {
                    let (k, v) = crit_label(&row.criterion);
                    vec![
                        k,
                        v,
                        row.player.to_string(),
                        format!("{}", row.conforming),
                        format!("{}", row.deviation),
                        format!("{}", row.gain),
                    ]
                })
                .collect(),
        ),
        Format::Text => {
            let mut s = String::new();
            for row in &r.rows {
                let (k, v) = crit_label(&row.criterion);
                let _ = writeln!(
                    s,
                    "{k}={v:<8} player {}  conforming {:.6}  deviation {:.6}  gain {:.3e}",
                    row.player, row.conforming, row.deviation, row.gain
                );
            }
            let _ = writeln!(
                s,
                "max gain {:.3e} vs epsilon {}: {}",
                r.max_gain,
                r.epsilon,
                if r.pass { "PASS" } else { "FAIL" }
            );
            Ok(s)
        }
    }
}

fn cmd_classify(game: &Path, common: &Common) -> Result<u8, Failure> {
    let g = load_game(game)?;
    let c: GameClassification = classify(&g);
    let text = match common.format {
        Format::Json => to_json(&envelope("classify", None, None, &c)),
        Format::Csv | Format::Text => {
            let flags = [
                ("recursive", c.recursive),
                ("positive", c.positive),
                ("generic", c.generic),
                ("general_quitting", c.general_quitting),
                ("quitting", c.quitting),
                ("quitting_absorbing", c.quitting_absorbing),
                ("two_dimension", c.two_dimension),
                ("spotted", c.spotted),
                ("l_shaped", c.l_shaped),
            ];
            if common.format == Format::Csv {
                csv_rows(
                    &["flag", "value"],
                    flags.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect(),
                )?
            } else {
                flags.iter().map(|(k, v)| format!("{k:<20}{v}\n")).collect()
            }
        }
    };
    write_out(common.out.as_deref(), &text)?;
    Ok(0)
}

fn cmd_lcp(
    matrix: &Path,
    q: Option<Vec<f64>>,
    qtest: bool,
    variant: Variant,
    density: usize,
    common: &Common,
) -> Result<u8, Failure> {
    let text = read(matrix)?;
    let file: MatrixFile = serde_json::from_str(&text).map_err(|e| {
        fail(2, format!("{}: line {} column {}: {e}", matrix.display(), e.line(), e.column()))
    })?;
    let variant = match variant {
        Variant::Plain => LcpVariant::Plain,
        Variant::Dominant => LcpVariant::Dominant,
    };
    let (result, code) = if qtest {
        let verdict = lcp::is_q_matrix_with(&file.r, density, lcp::DEFAULT_TOL, variant, &[])?;
        let code = if verdict.status == QStatus::NotQ { 1 } else { 0 };
        (LcpResult::Qtest { verdict }, code)
    } else {
        let q = q
            .or(file.q)
            .ok_or_else(|| fail(2, "no q given (use --q or a \"q\" field, or --qtest)"))?;
        let problem = LcpProblem::new(file.r, q)?;
        let outcome = lcp::solve_lcp_with(&problem, lcp::DEFAULT_TOL, variant)?;
        let code = if outcome.solution().is_some() { 0 } else { 1 };
        (LcpResult::Solve { problem, outcome }, code)
    };
    let budget = Budget {
        secs: None,
        density,
        runs: None,
        horizon: None,
    };
    let out = match common.format {
        Format::Json => to_json(&envelope("lcp", None, Some(budget), &result)),
        Format::Csv | Format::Text => match &result {
            LcpResult::Solve { outcome, .. } => match outcome.solution() {
                Some(s) => {
                    let rows = (0..s.w.len())
                        .map(|i| vec![i.to_string(), format!("{}", s.w[i]), format!("{}", s.z[i + 1])])
                        .collect();
                    if common.format == Format::Csv {
                        csv_rows(&["index", "w", "z"], rows)?
                    } else {
                        let mut t = format!("feasible, z0 = {}\n", s.z[0]);
                        for r in rows {
                            let _ = writeln!(t, "{:>3}  w {}  z {}", r[0], r[1], r[2]);
                        }
                        t
                    }
                }
                None => "infeasible\n".into(),
            },
            LcpResult::Qtest { verdict } => {
                let w = verdict
                    .witness
                    .as_ref()
                    .map(|q| q.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"))
                    .unwrap_or_default();
                let status = match verdict.status {
                    QStatus::NotQ => "not_q",
                    QStatus::QCertifiedNumerically => "q_certified_numerically",
                };
                if common.format == Format::Csv {
                    csv_rows(
                        &["status", "witness", "samples", "density"],
                        vec![vec![status.into(), w, verdict.samples.to_string(), verdict.density.to_string()]],
                    )?
                } else {
                    format!("{status} after {} samples {w}\n", verdict.samples)
                }
            }
        },
    };
    write_out(common.out.as_deref(), &out)?;
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    game: &Path,
    grids: &Grids,
    seed: u64,
    density: usize,
    budget_secs: Option<f64>,
    out: &Path,
    report: Option<&Path>,
    format: Format,
) -> Result<u8, Failure> {
    let g = load_game(game)?;
    let opts = SynthOptions {
        epsilon: grids.epsilon,
        lambda_grid: grids.lambdas(),
        t_grid: grids.horizons(),
        density,
        seed,
        budget_secs,
        ..SynthOptions::default()
    };
    let budget = || Budget {
        secs: budget_secs,
        density,
        runs: None,
        horizon: None,
    };
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".report.json");
        PathBuf::from(p)
    });
    match synthesize(&g, &opts) {
        Ok(syn) => {
            write_out(Some(out), &format!("{}\n", syn.strategy.to_json()))?;
            let result = SynthResult {
                strategy_file: out.display().to_string(),
                route: syn.strategy.route.clone(),
                pass: syn.report.pass,
                max_gain: syn.report.max_gain,
                synthesis: syn,
            };
            let json = to_json(&envelope("synth", Some(seed), Some(budget()), &result));
            write_out(Some(&report_path), &json)?;
            if format != Format::Json {
                let text = render_cert(&result.synthesis.report, format, String::new())?;
                print!("{text}");
            }
            Ok(0)
        }
        Err(e) => {
            let code = match e {
                Error::Unsupported(_) => 4,
                Error::SynthesisFailed(_) | Error::PathTraceLost(_) | Error::NotQl | Error::NotNql => 3,
                _ => 2,
            };
            let result = SynthFailure {
                error: e.to_string(),
            };
            let json = to_json(&envelope("synth", Some(seed), Some(budget()), &result));
            write_out(Some(&report_path), &json)?;
            Err(fail(code, e.to_string()))
        }
    }
}

fn cmd_verify(game: &Path, strategy: &Path, grids: &Grids, common: &Common) -> Result<u8, Failure> {
    let g = load_game(game)?;
    let s = load_strategy(strategy)?;
    let r = certify_uniform(&g, &s, grids.epsilon, &grids.lambdas(), &grids.horizons())?;
    let json = to_json(&envelope("verify", None, None, &r));
    let text = render_cert(&r, common.format, json)?;
    write_out(common.out.as_deref(), &text)?;
    Ok(if r.pass { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    game: &Path,
    strategy: &Path,
    runs: u64,
    horizon: u64,
    seed: u64,
    lambda: f64,
    deviation: Option<SimDeviation>,
    common: &Common,
) -> Result<u8, Failure> {
    let g = load_game(game)?;
    let s = load_strategy(strategy)?;
    let cfg = SimConfig {
        runs,
        horizon,
        seed,
        lambda,
        deviation,
    };
    let m: SimSummary = monte_carlo(&g, &s, &cfg)?;
    let budget = Budget {
        secs: None,
        density: 0,
        runs: Some(runs),
        horizon: Some(horizon),
    };
    let text = match common.format {
        Format::Json => to_json(&envelope("simulate", Some(seed), Some(budget), &m)),
        Format::Csv => csv_rows(
            &["lo", "hi", "count"],
            m.histogram
                .iter()
                .map(|b| vec![b.lo.to_string(), b.hi.to_string(), b.count.to_string()])
                .collect(),
        )?,
        Format::Text => {
            let mut t = String::new();
            for i in 0..m.mean_discounted.len() {
                let _ = writeln!(
                    t,
                    "player {i}: discounted {:.6} ± {:.2e}, average {:.6} ± {:.2e}",
                    m.mean_discounted[i], m.se_discounted[i], m.mean_average[i], m.se_average[i]
                );
            }
            let _ = writeln!(t, "absorbed {}/{} within {} stages", m.absorbed, m.runs, m.horizon);
            for b in &m.histogram {
                let _ = writeln!(t, "  stages {:>7}..{:<7} {}", b.lo, b.hi, b.count);
            }
            t
        }
    };
    write_out(common.out.as_deref(), &text)?;
    Ok(0)
}

fn init_threads() {
    if let Some(n) = std::env::var("ABSORBEQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Classify { game, common } => cmd_classify(&game, &common),
        Command::Lcp {
            matrix,
            q,
            qtest,
            variant,
            density,
            common,
        } => cmd_lcp(&matrix, q, qtest, variant, density, &common),
        Command::Synth {
            game,
            grids,
            seed,
            density,
            budget_secs,
            out,
            report,
            format,
        } => cmd_synth(&game, &grids, seed, density, budget_secs, &out, report.as_deref(), format),
        Command::Verify {
            game,
            strategy,
            grids,
            common,
        } => cmd_verify(&game, &strategy, &grids, &common),
        Command::Simulate {
            game,
            strategy,
            runs,
            horizon,
            seed,
            lambda,
            deviate_player,
            deviate_dist,
            common,
        } => {
            let dev = deviate_player
                .zip(deviate_dist)
                .map(|(player, dist)| SimDeviation { player, dist });
            cmd_simulate(&game, &strategy, runs, horizon, seed, lambda, dev, &common)
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("absorbeq: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qmanopt::driver::{self, HamiltonianFormat, HamiltonianSource, RunConfig, RunReport, Sector};
use qmanopt::eigenproblems::{fd_check_gradient, fd_check_hessian, Problem, StiefelProblem};
use qmanopt::hamiltonian::{build_jw_hamiltonian, parse_fcidump, pauli_to_matrix, sector_project};
use qmanopt::linalg::{random, sym_eig, write_matrix_market, SymmetricMatrix};
use qmanopt::manifold::StiefelPoint;
use qmanopt::{Error, Result};

/// Accepted slope bands for the Taylor checks.
const GRAD_BAND: (f64, f64) = (1.9, 2.1);
const HESS_BAND: (f64, f64) = (2.9, 3.1);

/// Exit code for a check whose slope falls outside its band.
const CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "qmanopt", version, about = "Many-eigenstate solvers by Riemannian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one or more JSON run configurations.
    Solve {
        /// Configuration file; repeat for a batch.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Worker slots for a batch.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Taylor-remainder check of the gradient or Hessian on a random instance.
    Check(CheckArgs),
    /// Lowest eigenvalues of a Hamiltonian by dense diagonalization.
    Spectrum {
        #[arg(long)]
        hamiltonian: PathBuf,
        #[arg(long)]
        k: usize,
        /// Overrides the format inferred from the file extension.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[command(flatten)]
        sector: SectorArgs,
    },
    /// Converts an FCIDUMP file to a dense matrix or a Pauli sum.
    Convert {
        #[arg(long)]
        fcidump: PathBuf,
        #[arg(long, value_enum)]
        out: ConvertTarget,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        sector: SectorArgs,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct CheckKind {
    #[arg(long)]
    grad: bool,
    #[arg(long)]
    hess: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    kind: CheckKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, value_enum)]
    manifold: ManifoldArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SectorArgs {
    /// Electron count of a symmetry sector.
    #[arg(long, requires = "sz_twice")]
    n_electrons: Option<usize>,
    /// Twice the S_z of a symmetry sector.
    #[arg(long, requires = "n_electrons", allow_hyphen_values = true)]
    sz_twice: Option<i64>,
}

impl SectorArgs {
    fn sector(&self) -> Option<Sector> {
        Some(Sector {
            n_electrons: self.n_electrons?,
            sz_twice: self.sz_twice?,
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ManifoldArg {
    Gr,
    St,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Fcidump,
    Matrix,
    Pauli,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConvertTarget {
    Matrix,
    Pauli,
}

impl From<FormatArg> for HamiltonianFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Fcidump => HamiltonianFormat::Fcidump,
            FormatArg::Matrix => HamiltonianFormat::MatrixMarket,
            FormatArg::Pauli => HamiltonianFormat::Pauli,
        }
    }
}

/// `.mtx` is MatrixMarket, `.pauli` a Pauli sum, anything named like
/// `FCIDUMP` or `*.fcidump` an FCIDUMP file.
fn infer_format(path: &Path) -> Result<HamiltonianFormat> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_ascii_lowercase();
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or_default().to_ascii_lowercase();
    match ext.as_str() {
        "mtx" => Ok(HamiltonianFormat::MatrixMarket),
        "pauli" => Ok(HamiltonianFormat::Pauli),
        "fcidump" => Ok(HamiltonianFormat::Fcidump),
        _ if name.starts_with("fcidump") => Ok(HamiltonianFormat::Fcidump),
        _ => Err(Error::Config(vec![format!(
            "cannot infer the format of {}; pass --format",
            path.display()
        )])),
    }
}

fn solve(configs: &[PathBuf], jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(Error::Config(vec!["--jobs must be at least 1".into()]));
    }
    let loaded = configs.iter().map(|p| RunConfig::from_path(p)).collect::<Result<Vec<_>>>()?;
    let mut seen = HashSet::new();
    for cfg in &loaded {
        if !seen.insert(cfg.output_dir.clone()) {
            return Err(Error::Config(vec![format!(
                "output_dir {} is shared by two runs",
                cfg.output_dir.display()
            )]));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport>>>> = Mutex::new((0..loaded.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(loaded.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = loaded.get(i) else { break };
                let out = driver::run(cfg);
                results.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("result slots poisoned");
    let mut worst: Option<Error> = None;
    for (path, res) in configs.iter().zip(results) {
        match res.expect("every run reports") {
            Ok(report) => println!("{}", serde_json::to_string(&report)?),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                if worst.as_ref().is_none_or(|w| driver::exit_code(&e) > driver::exit_code(w)) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

/// Returns whether the slope falls inside its band.
fn check(args: &CheckArgs) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let h: SymmetricMatrix = random::symmetric(args.n, &mut rng);
    if args.p == 0 || args.p > args.n {
        return Err(Error::Parameter(format!("need 1 <= p <= n, got n = {}, p = {}", args.n, args.p)));
    }
    let x = StiefelPoint::new(random::orthonormal(args.n, args.p, &mut rng))?;
    let problem = match args.manifold {
        ManifoldArg::Gr => Problem::grassmann(h),
        ManifoldArg::St => Problem::stiefel(h, StiefelProblem::default_weights(args.p))?,
    };
    let (what, slope, band) = if args.kind.grad {
        ("gradient", fd_check_gradient(&problem, &x, args.seed)?, GRAD_BAND)
    } else {
        ("hessian", fd_check_hessian(&problem, &x, args.seed)?, HESS_BAND)
    };
    let pass = (band.0..=band.1).contains(&slope);
    println!(
        "{what} slope {slope:.4} expected [{}, {}] {}",
        band.0,
        band.1,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn spectrum(path: &Path, k: usize, format: Option<FormatArg>, sector: Option<Sector>) -> Result<()> {
    let format = match format {
        Some(f) => f.into(),
        None => infer_format(path)?,
    };
    let src = HamiltonianSource {
        path: path.to_path_buf(),
        format,
    };
    let h = driver::load_hamiltonian(&src, sector)?;
    if k == 0 || k > h.dim() {
        return Err(Error::Parameter(format!("k must lie in 1..={}, got {k}", h.dim())));
    }
    let (vals, _) = sym_eig(&h)?;
    println!("index,eigenvalue");
    for (i, v) in vals.iter().take(k).enumerate() {
        println!("{i},{v:.17e}");
    }
    Ok(())
}

fn convert(path: &Path, out: ConvertTarget, output: Option<&Path>, sector: Option<Sector>) -> Result<()> {
    let data = parse_fcidump(&fs::read_to_string(path)?)?;
    let ps = build_jw_hamiltonian(&data)?;
    let text = match (out, sector) {
        (ConvertTarget::Pauli, None) => format!("{ps}\n"),
        (ConvertTarget::Pauli, Some(_)) => {
            return Err(Error::Config(vec!["a sector applies only to --out matrix".into()]));
        }
        (ConvertTarget::Matrix, None) => write_matrix_market(&pauli_to_matrix(&ps)?),
        (ConvertTarget::Matrix, Some(s)) => {
            let full = SymmetricMatrix::from_sym_part(&pauli_to_matrix(&ps)?)?;
            let (_, h) = sector_project(&full, s.n_electrons, s.sz_twice)?;
            write_matrix_market(h.matrix())
        }
    };
    match output {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { configs, jobs } => solve(configs, *jobs).map(|_| true),
        Command::Check(args) => check(args),
        Command::Spectrum {
            hamiltonian,
            k,
            format,
            sector,
        } => spectrum(hamiltonian, *k, *format, sector.sector()).map(|_| true),
        Command::Convert {
            fcidump,
            out,
            output,
            sector,
        } => convert(fcidump, *out, output.as_deref(), sector.sector()).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(driver::exit_code(&e) as u8)
        }
    }
}

//! `elastonet`: analyze, validate and synthesize spring networks from the
//! command line.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

mod commands;
mod files;

#[derive(Debug, Parser)]
#[command(name = "elastonet", version, about = "Terminal responses and synthesis of elastodynamic spring networks")]
struct Cli {
    /// Relative tolerance for the symmetry, PSD and balance checks.
    #[arg(long, global = true, value_name = "TOL")]
    tol: Option<f64>,
    /// Seed for placement and perturbation draws.
    #[arg(long, global = true, env = "ELASTONET_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Modal form of a network and its response at chosen frequencies.
    Analyze {
        network: PathBuf,
        /// Frequencies ω to evaluate (comma separated).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        omega: Vec<f64>,
        /// Evenly spaced frequencies, endpoints included.
        #[arg(long, value_name = "MIN:MAX:COUNT")]
        sweep: Option<Sweep>,
        /// CSV destination for the response rows (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write the extracted response as a spec file.
        #[arg(long, value_name = "FILE")]
        export_spec: Option<PathBuf>,
    },
    /// Check a response spec for realizability.
    Validate { spec: PathBuf },
    /// Build a planar network realizing a response spec.
    Synthesize {
        spec: PathBuf,
        /// Radius of the hull neighborhood that holds the placed nodes.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Extract the modal form of a network, resynthesize it and compare.
    Roundtrip {
        network: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Also write the synthesized network.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List floppy modes and optionally remove them with weak springs.
    Floppy {
        network: PathBuf,
        /// Stiffness of the springs added between unconnected node pairs.
        #[arg(long, value_name = "EPS_K")]
        fix: Option<f64>,
        /// Destination for the fixed network.
        #[arg(short, long, requires = "fix")]
        output: Option<PathBuf>,
    },
    /// Response drift under a random stiffness perturbation of size ε.
    Perturb {
        network: PathBuf,
        /// Perturbation sizes (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// Number of new springs in the perturbation.
        #[arg(long, default_value_t = 2)]
        added: usize,
    },
}

/// `min:max:count`, both endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| if k + 1 == self.count { self.max } else { self.min + step * k as f64 })
            .collect()
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected MIN:MAX:COUNT, got {s:?}"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let (min, max) = (num(parts[0])?, num(parts[1])?);
        let count: usize = parts[2].trim().parse().map_err(|e| format!("{:?}: {e}", parts[2]))?;
        if !(min.is_finite() && max.is_finite() && 0.0 <= min && min <= max) {
            return Err(format!("need 0 <= MIN <= MAX, got {min} and {max}"));
        }
        if count == 0 {
            return Err("COUNT must be at least 1".into());
        }
        Ok(Sweep { min, max, count })
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut tol = elastonet::Tolerances::DOUBLE;
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(files::InputError(format!("--tol must be positive, got {t}")).into());
        }
        tol = tol.with_validation(t);
    }
    let seed = cli.seed;
    match cli.command {
        Command::Analyze {
            network,
            omega,
            sweep,
            output,
            export_spec,
        } => {
            let mut omegas = omega;
            omegas.extend(sweep.map(|s| s.values()).unwrap_or_default());
            if let Some(w) = omegas.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
                return Err(files::InputError(format!("frequencies must be finite and non-negative, got {w}")).into());
            }
            commands::analyze(&network, &omegas, output.as_deref(), export_spec.as_deref(), &tol)
        }
        Command::Validate { spec } => commands::validate(&spec, &tol),
        Command::Synthesize { spec, eps, output } => commands::synthesize(&spec, eps, seed, &output, &tol),
        Command::Roundtrip { network, eps, output } => {
            commands::roundtrip(&network, eps, seed, output.as_deref(), &tol)
        }
        Command::Floppy { network, fix, output } => commands::floppy(&network, fix, seed, output.as_deref(), &tol),
        Command::Perturb { network, eps, added } => {
            if let Some(e) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                return Err(files::InputError(format!("--eps values must be positive, got {e}")).into());
            }
            commands::perturb(&network, &eps, added, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<files::InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sweep_includes_endpoints() {
        let s: Sweep = "0.1:3:8".parse().unwrap();
        let v = s.values();
        assert_eq!(v.len(), 8);
        assert_eq!(v[0], 0.1);
        assert_eq!(v[7], 3.0);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sweep_rejects_bad_input() {
        for s in ["1:2", "2:1:3", "0:1:0", "a:1:2", "-1:1:2"] {
            assert!(s.parse::<Sweep>().is_err(), "{s}");
        }
        assert_eq!("2:2:1".parse::<Sweep>().unwrap().values(), vec![2.0]);
    }
}

//! Ready-made run configurations.
//!
//! `paper` transcribes the published settings; `desk` shrinks networks and
//! budgets so that a run fits on a single CPU.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::network::{Architecture, NetSpec};
use crate::oracle::OracleConfig;
use crate::training::{LossWeights, LrSchedule, TrainConfig, Transfer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

/// depth, width, modes, N_t, N_r, (M0, M1), epsilon
type Row = (usize, usize, usize, usize, usize, (usize, usize), f64);

fn paper_row(problem: &str) -> Option<Row> {
    Some(match problem {
        "rd" => (4, 128, 10, 200, 512, (10000, 1000), 1e-9),
        "ac" => (4, 128, 10, 200, 512, (10000, 2000), 1e-10),
        "ks_regular" => (3, 256, 5, 250, 500, (10000, 3000), 1e-8),
        "ks_chaotic" => (8, 128, 5, 250, 500, (10000, 7000), 1e-10),
        "ns2d" => (4, 128, 5, 100, 100, (10000, 5000), 1e-5),
        _ => return None,
    })
}

fn desk_row(problem: &str) -> Option<Row> {
    Some(match problem {
        "heat_test" => (3, 64, 5, 20, 128, (4000, 1000), 1e-10),
        "rd" => (3, 64, 10, 50, 256, (4000, 1000), 1e-8),
        "ac" => (3, 64, 10, 100, 256, (4000, 500), 1e-9),
        "ks_regular" => (3, 32, 5, 25, 128, (1000, 200), 1e-8),
        "ks_chaotic" => (3, 32, 5, 25, 128, (1000, 200), 1e-8),
        "ns2d" => (3, 32, 2, 10, 256, (2000, 500), 1e-8),
        _ => return None,
    })
}

/// The configuration of `problem` under `preset`.
pub fn preset(problem: &str, preset: Preset) -> Result<TrainConfig> {
    crate::pdes::benchmark(problem)?;
    let row = match preset {
        Preset::Paper => paper_row(problem),
        Preset::Desk => desk_row(problem),
    };
    let Some((depth, width, modes, n_t, n_r, (m0, m1), epsilon)) = row else {
        return Err(Error::Config(format!("no {preset} preset for `{problem}`")));
    };
    Ok(TrainConfig {
        problem: problem.to_string(),
        net: NetSpec { arch: Architecture::Modified, depth, width, modes },
        scheme: "crank_nicolson".into(),
        n_t,
        n_r,
        n_u: None,
        weights: LossWeights::default(),
        max_iters_initial: m0,
        max_iters: m1,
        epsilon,
        initial_tol: 1e-12,
        lr: match preset {
            Preset::Paper => LrSchedule::default(),
            Preset::Desk => LrSchedule { every: 100, ..LrSchedule::default() },
        },
        lr_initial: match preset {
            Preset::Paper => None,
            Preset::Desk => Some(LrSchedule::default()),
        },
        transfer: Transfer::All,
        seed: 0,
        exec: ExecMode::Parallel,
        oracle: oracle_for(problem, preset),
    })
}

/// Reference resolution giving a relative change below 1e-6 under doubling.
fn oracle_for(problem: &str, preset: Preset) -> OracleConfig {
    let base = OracleConfig::default();
    match (problem, preset) {
        ("ac", _) => OracleConfig { modes_1d: 2048, ..base },
        ("ks_regular" | "ks_chaotic", Preset::Desk) => OracleConfig { substeps: 400, ..base },
        ("ns2d", Preset::Desk) => OracleConfig { modes_2d: 64, ..base },
        _ => base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_rows_follow_the_published_table() {
        let rd = preset("rd", Preset::Paper).unwrap();
        assert_eq!((rd.net.depth, rd.net.width, rd.net.modes, rd.n_t, rd.n_r), (4, 128, 10, 200, 512));
        assert_eq!((rd.max_iters_initial, rd.max_iters, rd.epsilon), (10000, 1000, 1e-9));
        let ac = preset("ac", Preset::Paper).unwrap();
        assert_eq!((ac.max_iters_initial, ac.max_iters, ac.epsilon), (10000, 2000, 1e-10));
        let ns = preset("ns2d", Preset::Paper).unwrap();
        assert_eq!((ns.net.modes, ns.n_t, ns.n_r, ns.max_iters), (5, 100, 100, 5000));
    }

    #[test]
    fn desk_rows_validate() {
        for p in crate::pdes::BENCHMARKS {
            let c = preset(p, Preset::Desk).unwrap();
            c.validate().unwrap();
            assert_eq!(c.problem, *p);
        }
        let heat = preset("heat_test", Preset::Desk).unwrap();
        assert_eq!((heat.net.width, heat.net.depth, heat.n_t, heat.n_r), (64, 3, 20, 128));
        let rd = preset("rd", Preset::Desk).unwrap();
        assert_eq!((rd.net.width, rd.net.depth, rd.n_t, rd.n_r), (64, 3, 50, 256));
    }

    #[test]
    fn missing_rows_are_config_errors() {
        assert!(matches!(preset("heat_test", Preset::Paper), Err(Error::Config(_))));
        assert!(matches!(preset("nope", Preset::Desk), Err(Error::UnknownProblem(_))));
        assert!("fast".parse::<Preset>().is_err());
    }
}

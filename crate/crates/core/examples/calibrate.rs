//! Prints per-session and mean APE of every method on a generated suite.
//!
//! cargo run --release -p retailopt-core --example calibrate -- \
//!     [heading_drift_rate] [scale_bias] [white_noise_sigma] [tau_learning_rate] [sessions]

use std::time::Instant;

use retailopt_core::eval::{run_suite, Scenario};
use retailopt_core::pipeline::{Method, RunConfig};
use retailopt_core::synth::{generate_suite, DriftModel, ScenarioConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let defaults = DriftModel::default();
    let drift = DriftModel {
        heading_drift_rate: arg(1, defaults.heading_drift_rate),
        scale_bias: arg(2, defaults.scale_bias),
        white_noise_sigma: arg(3, defaults.white_noise_sigma),
    };
    let mut cfg = RunConfig::default();
    cfg.optimizer.tau_learning_rate = arg(4, cfg.optimizer.tau_learning_rate);
    let n: usize = arg(5, 20);

    let base = ScenarioConfig {
        drift,
        ..Default::default()
    };
    let sessions = generate_suite(&base, 0, n).expect("suite generation");
    let scenarios: Vec<Scenario> = sessions
        .into_iter()
        .enumerate()
        .map(|(i, session)| Scenario {
            id: format!("s{i:03}"),
            carry_mode: None,
            session,
        })
        .collect();
    let start = Instant::now();
    let report = run_suite(&scenarios, &Method::ALL, &[0], &cfg);
    let mut wins = 0;
    for sc in &scenarios {
        let get = |m| report.ape(&sc.id, m, 0).unwrap_or(f64::NAN);
        let (r, t, w) = (get(Method::RetailOpt), get(Method::Tsp), get(Method::Raw));
        if r < t && r < w {
            wins += 1;
        }
        println!("{} T={} retailopt {r:.3} tsp {t:.3} raw {w:.3}", sc.id, sc.session.len());
    }
    for m in Method::ALL {
        println!("mean {m}: {:.3}", report.mean(m).unwrap_or(f64::NAN));
    }
    println!("wins {wins}/{n}  elapsed {:.1}s", start.elapsed().as_secs_f64());
    for row in report.rows.iter().filter(|r| r.ape_m.is_err()) {
        println!("failed {} {}: {:?}", row.scenario_id, row.method, row.ape_m);
    }
}

use phfilter::harness::{run_experiment, Method, RunConfig};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "exp1".into());
    let mut cfg = RunConfig {
        experiment: which.clone(),
        out_dir: format!("/tmp/out_{which}"),
        seeds: 3,
        ..RunConfig::default()
    };
    match which.as_str() {
        "exp1" => {
            cfg.systems = vec!["puck".into()];
            cfg.occlusions = vec![0.0, 0.9];
        }
        "exp2" => {
            cfg.systems = vec!["puck".into(), "block".into()];
            cfg.methods = vec![
                Method::FullAdaptive,
                Method::Lambda0,
                Method::NoMode,
                Method::ProxyOracle,
                Method::HmmBaseline,
            ];
            cfg.steps = 2000;
            cfg.base_occlusion = 0.5;
            cfg.sigma_obs = 0.05;
            cfg.filter_obs_noise = 0.1;
        }
        "exp3" => {
            cfg.systems = vec!["puck".into(), "block".into()];
            cfg.methods = vec![
                Method::FullAdaptive,
                Method::NoMode,
                Method::NoSparsity,
                Method::NoPh,
            ];
            cfg.steps = 4000;
            cfg.sigma_obs = 1e-3;
            cfg.sigma_der = 0.01;
            cfg.missing_rate = 0.05;
            cfg.mode_flip_prob = 0.02;
            cfg.hide_velocities = true;
            cfg.base_occlusion = 0.0;
        }
        _ => {}
    }
    let t0 = std::time::Instant::now();
    match run_experiment(&cfg) {
        Ok(paths) => {
            println!("wrote in {:?}:", t0.elapsed());
            for p in paths {
                println!("  {}", p.display());
            }
            let agg = std::fs::read_to_string(format!("/tmp/out_{which}/{which}_aggregate.csv"))
                .or_else(|_| std::fs::read_to_string(format!("/tmp/out_{which}/certify_report.csv")));
            if let Ok(a) = agg {
                println!("{a}");
            }
        }
        Err(e) => println!("ERROR: {e}"),
    }
}

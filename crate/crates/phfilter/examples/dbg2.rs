use phfilter::harness::{Method, RunConfig};
use phfilter::metrics::segmentation_report;
use phfilter::modes::decode_modes;
use phfilter::proxy::*;
use phfilter::systems::*;
use phfilter::rngutil::derive_rng;
use rand::Rng;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.steps = 2000;
    cfg.base_occlusion = 0.5;
    cfg.sigma_obs = 0.05;
    cfg.filter_obs_noise = 0.1;
    for sys in [SystemName::Puck, SystemName::Block, SystemName::Pendulum, SystemName::Pusher] {
        let seed_key = "0";
        let data_keys = ["exp2", "eval", sys.as_str(), seed_key];
        let (traj, obs) = phfilter::harness::debug_cell_data(&cfg, sys, &data_keys).unwrap();
        let spec = make_system(sys);
        let obj: Vec<Vec<f64>> = traj.states.iter().map(|z| vec![z[spec.position_coords[0]]]).collect();
        let ee: Vec<Vec<f64>> = if sys == SystemName::Pusher {
            traj.states.iter().map(|z| vec![z[2]]).collect()
        } else { Vec::new() };
        let acts: Vec<Vec<f64>> = traj.actions.iter().map(|a| a.as_slice().to_vec()).collect();
        let score = kinematic_score(&obj, &ee, &acts, &cfg.proxy);
        let (t1, t2) = fit_thresholds(&score, cfg.proxy_q1, cfg.proxy_q2);
        let pcfg = ProxyConfig { theta1: t1, theta2: t2, ..cfg.proxy.clone() };
        let proxy: Vec<usize> = score_to_labels(&score, &pcfg).iter().map(|l| l.index()).collect();
        let truth: Vec<usize> = traj.modes.clone();
        let rep = segmentation_report(&truth, &proxy, 2);
        println!("{:9} ARI(true,proxy)={:.3} modeF1={:.3} cpF1={:.3}", sys.as_str(), rep.ari, rep.mode_f1, rep.changepoint_f1);
        // filter quality vs true modes
        for m in [Method::FullAdaptive, Method::Lambda0] {
            let cell = phfilter::harness::debug_filter(&cfg, sys, m, &traj, &obs).unwrap();
            let decoded = decode_modes(&cell);
            let rep2 = segmentation_report(&decoded, &truth[1..], 2);
            println!("   {:14} vs true: ARI={:.3} modeF1={:.3} cpF1={:.3}", format!("{:?}",m), rep2.ari, rep2.mode_f1, rep2.changepoint_f1);
        }
    }
}

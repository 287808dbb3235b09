// Scratch driver for eyeballing sweep dynamics at acceptance scale.
use heterophily::harness::{default_h_grid, sweep, SweepOptions};
use heterophily::models::ModelConfig;

fn main() {
    let grid_arg = std::env::args().nth(1).unwrap_or_else(|| "coarse".into());
    let grid: Vec<f64> = if grid_arg == "full" {
        default_h_grid()
    } else {
        vec![0.005, 0.03, 0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.70, 0.95]
    };
    let models = [
        ModelConfig::parse_id("sgc-1").unwrap(),
        ModelConfig::parse_id("gcn-2").unwrap(),
        ModelConfig::parse_id("acm-gcn-2").unwrap(),
        ModelConfig::parse_id("mlp-2").unwrap(),
    ];
    let opts = SweepOptions {
        repeats: 3,
        seed: 0,
        parallel: true,
        ..SweepOptions::default()
    };
    let t0 = std::time::Instant::now();
    let rows = sweep(&grid, &models, &opts).unwrap();
    eprintln!("sweep took {:.1}s", t0.elapsed().as_secs_f64());
    println!("h_target,h_edge,h_agg_mod,model,mean,std");
    for r in &rows {
        println!(
            "{:.3},{:.3},{:.3},{},{:.3},{:.3}",
            r.h_target, r.h_edge, r.h_agg_mod, r.model, r.mean_acc, r.std_acc
        );
    }
}

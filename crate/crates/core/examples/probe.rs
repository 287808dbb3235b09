// Margin probe in the h ~ 0.05 transition region (independent seeds).
use heterophily::harness::{mix_seed, split, train, TrainOptions};
use heterophily::models::ModelConfig;
use heterophily::synth::{generate, FeatureMode, SynthConfig};

fn main() {
    for h in [0.04, 0.045, 0.05, 0.055, 0.06, 0.15] {
        for (name, dropout, wd) in [
            ("wd5e-3      ", 0.5, 5e-3),
            ("wd1e-2      ", 0.5, 1e-2),
            ("drop.6 wd5e-3", 0.6, 5e-3),
            ("wd5e-4      ", 0.5, 5e-4),
        ] {
            let mut accs = vec![];
            let mut accs_gcn = vec![];
            for seed in 10..18u64 {
                let mut synth = SynthConfig::new(h, 5, 100, mix_seed(&[700, seed]));
                synth.feature_mode = FeatureMode::GaussianMeans { dim: 32, separation: 2.0 };
                let g = generate(&synth).unwrap();
                let masks = split(g.n_nodes(), (0.6, 0.2, 0.2), mix_seed(&[701, seed])).unwrap();
                let mut cfg = ModelConfig::parse_id("acm-gcn-2").unwrap();
                cfg.input_dropout = dropout;
                cfg.weight_decay = wd;
                let opts = TrainOptions { max_epochs: 400, patience: 60, seed: mix_seed(&[702, seed]) };
                let res = train(&cfg, &g, &masks, &opts).unwrap();
                accs.push(res.test_acc_at_best_val);
                let mut gcn = ModelConfig::parse_id("gcn-2").unwrap();
                gcn.input_dropout = 0.5;
                gcn.weight_decay = 5e-4;
                let res = train(&gcn, &g, &masks, &opts).unwrap();
                accs_gcn.push(res.test_acc_at_best_val);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "h={h:.3} {name} acm={:.3} gcn={:.3} margin={:+.3}",
                mean(&accs), mean(&accs_gcn), mean(&accs) - mean(&accs_gcn)
            );
        }
        println!();
    }
}

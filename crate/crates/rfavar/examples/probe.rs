// scratch probe: ladder under rate-scaled grids
use std::time::Instant;
use rfavar::mc::{run_monte_carlo, McConfig};

fn main() {
    let cfg = McConfig::consistency_ladder(7, 20);
    let start = Instant::now();
    let report = run_monte_carlo(&cfg).unwrap();
    for s in &report.summaries {
        println!(
            "({}, {}): lambda {:.4} phi {:.5} factor {:.4} f1 {:.3}",
            s.n, s.t, s.median_lambda_err, s.median_phi_err, s.median_factor_mse, s.median_f1
        );
    }
    println!("decay: {:?}", report.decay);
    let mut mu_by_size: Vec<(usize, Vec<f64>)> = vec![];
    for r in &report.records {
        if let Some(e) = mu_by_size.iter_mut().find(|e| e.0 == r.n) { e.1.push(r.mu1); } else { mu_by_size.push((r.n, vec![r.mu1])); }
    }
    for (n, mus) in &mu_by_size {
        let maxed = mus.iter().filter(|&&m| m >= mus.iter().fold(0.0f64, |a, &b| a.max(b)) - 1e-12).count();
        println!("n={n}: mu1 median {:.4}, at-max {maxed}/{}", rfavar::linalg::median(mus), mus.len());
    }
    println!("elapsed {:.1?}", start.elapsed());
}

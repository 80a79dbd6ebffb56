use citune::experiment::*;

fn main() {
    let t0 = std::time::Instant::now();
    let scenario = Scenario::iot_analog();
    match run_experiment(&scenario) {
        Ok(output) => {
            println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
            println!("plan:");
            for p in &output.bundle.plan.points {
                println!("  t={} rate={:.0}", p.timestamp, p.rate);
            }
            println!("matrix valid cells: {} / 60", output.bundle.matrix.valid_cells());
            for c in &output.bundle.matrix.invalid {
                println!("  invalid ({},{}): {}", c.failure_index, c.config_index, c.reason);
            }
            println!("model rmse: lat {:.2} rec {:.2}",
                output.bundle.latency_model.training_summary.residual_rmse,
                output.bundle.recovery_model.training_summary.residual_rmse);
            println!("{:<14} {:>10} {:>10} {:>12} {:>10} {:>7}", "run", "avg_lat", "lat_frac", "rec_time", "rec_viol", "reconf");
            for r in &output.bundle.runs {
                println!("{:<14} {:>10.1} {:>10.4} {:>12.1} {:>10.1} {:>7}",
                    r.name, r.avg_latency_ms, r.latency_violation_fraction,
                    r.recovery_time_s, r.recovery_violation_s, r.reconfigurations);
            }
            let kinds: Vec<String> = output.bundle.decisions.iter().map(|d| format!("{:?}{}", d.kind, d.new_ci.map(|c| format!("->{c}")).unwrap_or_default())).collect();
            let mut counts = std::collections::BTreeMap::new();
            for k in &kinds { *counts.entry(k.clone()).or_insert(0) += 1; }
            println!("decisions: {counts:?}");
        }
        Err(e) => println!("experiment error: {e} (after {:.1}s)", t0.elapsed().as_secs_f64()),
    }
}

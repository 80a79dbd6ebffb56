use citune::experiment::*;
use citune::profiler::*;
use citune::workload::*;
use citune::derive_seed;

fn main() {
    let scenario = Scenario::iot_analog();
    let trace = generate_trace(scenario.trace.kind, scenario.trace.duration, scenario.trace.base_rate, scenario.trace.amplitude, derive_seed(scenario.seed, "trace")).unwrap();
    let mut spec = scenario.pipeline;
    spec.capacity_mu = scenario.capacity_factor.unwrap() * trace.peak_rate();
    println!("peak {} capacity {}", trace.peak_rate(), spec.capacity_mu);
    let sw = smooth(&trace, 61).unwrap();
    let plan = extract_failure_points_spaced(&sw, 12, ExtractionMode::RateEquidistant, scenario.failures.min_separation).unwrap();
    let mut pts: Vec<_> = plan.points.clone();
    pts.sort_by_key(|p| p.timestamp);
    let mut prev = 0i64;
    for p in &pts {
        println!("  t={:<6} rate={:<7.0} gap={}", p.timestamp, p.rate, p.timestamp - prev);
        prev = p.timestamp;
    }
    let grid = scenario.grid.build().unwrap();
    let mut opts = scenario.profiling;
    opts.max_invalid_fraction = 1.0;
    match run_profiling(&trace, &plan, &grid, &spec, &opts, derive_seed(scenario.seed, "profile")) {
        Ok(m) => {
            println!("valid {}", m.valid_cells());
            for c in &m.invalid { println!("invalid ({},{}): {}", c.failure_index, c.config_index, c.reason); }
        }
        Err(e) => println!("profiling error: {e}"),
    }
}

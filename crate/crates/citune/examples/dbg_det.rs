use citune::anomaly::*;
use citune::experiment::*;
use citune::pipeline_sim::*;
use citune::workload::*;
use citune::derive_seed;

fn main() {
    let scenario = Scenario::iot_analog();
    let trace = generate_trace(scenario.trace.kind, scenario.trace.duration, scenario.trace.base_rate, scenario.trace.amplitude, derive_seed(scenario.seed, "trace")).unwrap();
    let mut spec = scenario.pipeline;
    spec.capacity_mu = scenario.capacity_factor.unwrap() * trace.peak_rate();
    let ci = 120.0;
    let sub_seed = derive_seed(derive_seed(scenario.seed, "profile"), &format!("deployment-ci-{ci}"));
    let clean = run(&spec, &trace, ci, InjectionPlan::none(), vec![], sub_seed).unwrap();
    let mut det = Detector::new(scenario.profiling.detector);
    det.warmup(&clean.metrics).unwrap();
    let mut d2 = det.clone();
    let mut flips = 0;
    let mut last_anom = false;
    for m in &clean.metrics {
        let obs = d2.observe(m);
        if obs.anomalous != last_anom {
            flips += 1;
            if flips <= 12 {
                println!("t={} anomalous={} thr_ch={} lag_ch={} (lag={:.1}, thr={:.1})",
                    m.t, obs.anomalous, obs.throughput.anomalous, obs.lag.anomalous,
                    m.consumer_lag, m.input_throughput);
            }
            last_anom = obs.anomalous;
        }
    }
    println!("status flips on clean restream: {flips}");
    println!("system intervals: {:?}", &d2.system_intervals()[..d2.system_intervals().len().min(6)]);
    // lag stats
    let nonzero = clean.metrics.iter().filter(|m| m.consumer_lag > 0.5).count();
    let mean_lag = clean.metrics.iter().map(|m| m.consumer_lag).sum::<f64>() / clean.metrics.len() as f64;
    println!("lag nonzero ticks: {} / {} mean lag {:.1}", nonzero, clean.metrics.len(), mean_lag);
}

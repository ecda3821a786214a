use std::time::Instant;
use rjmort::inference::{Schedule, SamplerOptions};
use rjmort::sim::{run_study, SimRecipe, SimStudy};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sweeps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1000);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(42);
    let settings = SimStudy::grid(1);
    let template = SimRecipe::new(settings[0]);
    let schedule = Schedule::new(sweeps, sweeps, 1).unwrap();
    let opts = SamplerOptions::default();
    let t0 = Instant::now();
    let table = run_study(&settings, &template, 10, 2, schedule, &opts, seed).unwrap();
    println!("sweeps {sweeps} seed {seed} elapsed {:.0}s", t0.elapsed().as_secs_f64());
    println!("grid rows: (sigma_a, sigma_g) -> P(delta1=1), P(delta4=2), top config");
    for row in &table.rows {
        let (sa, sg) = row.study.knobs();
        let p1 = row.delta_marginal(1, 1);
        let p4 = row.delta_marginal(4, 2);
        let mut top: Vec<_> = row.avg_probability.iter().collect();
        top.sort_by(|a, b| b.1.partial_cmp(a.1).unwrap());
        println!("  ({sa:.3}, {sg:.2}): P(d1=1)={p1:.3} P(d4=2)={p4:.3} top {} {:.3}", top[0].0, top[0].1);
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eventgait::config::RunConfig;
use eventgait::core::event::{voxelize, Event, EventStream, Polarity, Window};
use eventgait::core::harness::eval::{evaluate, EvalResult};
use eventgait::core::harness::experiment::{build_benchmark, run_on_benchmark, ExperimentConfig, ExperimentResult, ToyBenchmark};
use eventgait::core::harness::gradcheck::{gradcheck_toy_model, toy_model_and_batch, FdSettings};
use eventgait::core::model::{GaitEmbedding, Sequential, StreamMode};
use eventgait::core::params;
use eventgait::core::sim::{generate_events_from_log, single_pixel_log, SimConfig};
use eventgait::core::snn::{
    lif_step, Gate, LifParams, LifState, MoseLayer, SpikeFn, SurrogateConfig, Synapse,
};
use eventgait::driver;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, budget: Duration, check: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = out.pass && in_time;
        if !pass {
            failures += 1;
        }
        let timing = if in_time { String::new() } else { format!(" (over the {budget:?} budget)") };
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{:.1?}{timing}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed
        );
    };

    report(1, "voxelization conservation", Duration::from_secs(1), &mut voxel_conservation);
    report(2, "simulator count oracle", Duration::from_secs(5), &mut simulator_counts);
    report(3, "LIF analytic laws", Duration::from_secs(1), &mut lif_laws);
    report(4, "MoSE degeneracies", Duration::from_secs(1), &mut mose_degeneracies);
    report(5, "gradient fidelity", Duration::from_secs(120), &mut gradient_fidelity);
    report(6, "metric oracle", Duration::from_secs(1), &mut metric_oracle);

    let mut toy = ToyRuns::default();
    report(7, "toy recognition", Duration::from_secs(30 * 60), &mut || toy.recognition());
    report(8, "stream ablation order", Duration::from_secs(60 * 60), &mut || toy.stream_ablation());
    report(9, "alignment ablation", Duration::from_secs(30 * 60), &mut || toy.alignment_ablation());
    report(10, "determinism", Duration::from_secs(30 * 60), &mut determinism);

    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1

fn voxel_conservation() -> Outcome {
    let (w, h, bins) = (9usize, 7usize, 6usize);
    let mut worst_mass = 0.0f64;
    let mut worst_entry = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window = Window::new(rng.random_range(0..10_000), rng.random_range(6_000..60_000));
        let dt = window.len / bins as u64 + 1;
        let n = rng.random_range(50..400);
        let events: Vec<Event> = (0..n)
            .map(|_| {
                let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
                Event::new(
                    rng.random_range(0..w as u16),
                    rng.random_range(0..h as u16),
                    rng.random_range(window.start + dt..=window.end() - dt),
                    p,
                )
            })
            .collect();
        let stream = EventStream::from_unsorted(w as u16, h as u16, window, events).unwrap();
        let grid = voxelize(&stream, bins).unwrap();
        worst_mass = worst_mass.max((grid.total_mass() - n as f64).abs());

        let delta = window.len as f64 / bins as f64;
        let mut oracle = vec![0.0; 2 * bins * h * w];
        for e in stream.events() {
            for b in 0..bins {
                let center = window.start as f64 + (b as f64 + 0.5) * delta;
                let weight = (1.0 - (e.t as f64 - center).abs() / delta).max(0.0);
                oracle[grid.index(e.p.channel(), b, e.y as usize, e.x as usize)] += weight;
            }
        }
        worst_entry = worst_entry.max(max_abs_diff(grid.data(), &oracle));
    }
    Outcome::new(
        worst_mass < 1e-9 && worst_entry < 1e-9,
        format!("max mass error {worst_mass:.1e}, max entry error vs brute force {worst_entry:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 2

const FINE: usize = 1000;

/// Reference-level counter sampled on a grid `FINE` times finer than the
/// input. For every crossing returns the first grid time at or after it, its
/// sign, and the grid spacing there.
fn fine_grid_crossings(values: &[f64], times: &[u64], c: f64) -> Vec<(u64, i8, u64)> {
    let base = values[0];
    let mut level = 0i64;
    let mut out = Vec::new();
    for s in 1..values.len() {
        let (a, b) = (values[s - 1], values[s]);
        let step = (times[s] - times[s - 1]) / FINE as u64;
        for j in 1..=FINE {
            let v = if j == FINE { b } else { a + (b - a) * j as f64 / FINE as f64 };
            let t = times[s - 1] + step * j as u64;
            while v >= base + (level + 1) as f64 * c {
                level += 1;
                out.push((t, 1, step));
            }
            while v <= base + (level - 1) as f64 * c {
                level -= 1;
                out.push((t, -1, step));
            }
        }
    }
    out
}

fn simulator_counts() -> Outcome {
    let cfg = SimConfig {
        threshold_c: 0.15,
        cutoff_hz: 0.0,
        noise_rate_hz: 0.0,
        refractory_us: 0.0,
        interp_factor: 1,
        ..SimConfig::default()
    };
    let mut count_mismatches = 0;
    let mut late = 0;
    let mut worst_steps = 0.0f64;
    let mut total = 0usize;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let segments = rng.random_range(2..8);
        let mut times = vec![rng.random_range(0..5u64) * FINE as u64];
        let mut values = vec![rng.random_range(-3.0..1.0)];
        for _ in 0..segments {
            times.push(times.last().unwrap() + rng.random_range(1..40u64) * FINE as u64);
            values.push(values.last().unwrap() + rng.random_range(-1.5..1.5));
        }
        let tf: Vec<f64> = times.iter().map(|&t| t as f64).collect();
        let stream = generate_events_from_log(&single_pixel_log(&values, &tf).unwrap(), &cfg).unwrap();
        let oracle = fine_grid_crossings(&values, &times, cfg.threshold_c);
        total += oracle.len();
        if stream.len() != oracle.len() {
            count_mismatches += 1;
            continue;
        }
        for (e, &(t, sign, step)) in stream.events().iter().zip(&oracle) {
            if e.p.sign() != sign {
                count_mismatches += 1;
                break;
            }
            let offset = e.t.abs_diff(t);
            if offset > step {
                late += 1;
            }
            worst_steps = worst_steps.max(offset as f64 / step as f64);
        }
    }
    Outcome::new(
        count_mismatches == 0 && late == 0,
        format!(
            "{total} crossings over 50 pixels, {count_mismatches} count mismatches, worst timestamp offset {worst_steps:.2} fine steps"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3

/// Period of a neuron under constant drive, integrated with `dt / 100` Euler
/// steps of the continuous equation. Returns the period in units of `dt`.
fn ode_period(p: &LifParams, current: f64) -> f64 {
    let h = p.dt / 100.0;
    let mut u = p.u_reset;
    let mut t = 0.0;
    let mut spikes = Vec::new();
    while spikes.len() < 4 {
        u += h / p.tau * (-u + p.resistance * current);
        t += h;
        if u >= p.u_th {
            spikes.push(t);
            u = p.u_reset;
        }
    }
    (spikes[3] - spikes[1]) / 2.0 / p.dt
}

fn discrete_period(p: &LifParams, current: f64) -> f64 {
    let mut state = LifState::resting(1, p);
    let mut spikes = Vec::new();
    let mut n = 0usize;
    while spikes.len() < 4 {
        n += 1;
        if lif_step(&mut state, &[current], p).unwrap()[0] == 1.0 {
            spikes.push(n);
        }
    }
    (spikes[3] - spikes[1]) as f64 / 2.0
}

fn lif_laws() -> Outcome {
    let mut decay_err = 0.0f64;
    for (tau, u0) in [(2.0, 0.9), (5.0, -0.4), (16.0, 0.7), (50.0, 0.99)] {
        let p = LifParams { tau, ..LifParams::default() };
        let mut state = LifState::new(vec![u0]);
        let keep = 1.0 - p.dt / p.tau;
        let mut expected = u0;
        for _ in 0..100 {
            lif_step(&mut state, &[0.0], &p).unwrap();
            expected *= keep;
            decay_err = decay_err.max((state.u[0] - expected).abs());
        }
    }

    let mut steady_err = 0.0f64;
    for (tau, r, i) in [(4.0, 1.0, 0.8), (8.0, 2.0, 0.3), (20.0, 0.5, 1.5)] {
        let p = LifParams { tau, resistance: r, ..LifParams::default() };
        let mut state = LifState::resting(1, &p);
        for _ in 0..3000 {
            lif_step(&mut state, &[i], &p).unwrap();
        }
        steady_err = steady_err.max((state.u[0] - r * i).abs());
    }

    let mut period_gap = 0.0f64;
    for tau in [2.0, 4.0, 8.0, 16.0] {
        for drive in [1.2, 1.5, 2.0, 3.0] {
            let p = LifParams { tau, ..LifParams::default() };
            period_gap = period_gap.max((discrete_period(&p, drive) - ode_period(&p, drive)).abs());
        }
    }
    Outcome::new(
        decay_err < 1e-12 && steady_err < 1e-6 && period_gap <= 1.0,
        format!("decay error {decay_err:.1e}, steady-state error {steady_err:.1e}, worst period gap {period_gap:.2} steps"),
    )
}

// ---------------------------------------------------------------------------
// 4

fn random_steps(rng: &mut ChaCha8Rng, steps: usize, width: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| (0..width).map(|_| rng.random_range(0.0..2.0)).collect())
        .collect()
}

fn mose_degeneracies() -> Outcome {
    let (n_in, n_out, sites, hidden) = (4, 3, 5, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let taus = [2.0, 6.0, 18.0];
    let base = MoseLayer::new(
        &mut rng,
        n_in,
        n_out,
        &taus,
        hidden,
        LifParams::default(),
        SurrogateConfig::default(),
        Synapse::Impulse,
        3.0,
    )
    .unwrap();
    let x = random_steps(&mut rng, 10, n_in * sites);

    let mut one_hot_exact = true;
    for pick in 0..taus.len() {
        let mut m = base.clone();
        m.gate.head_weights.iter_mut().for_each(|w| *w = 0.0);
        m.gate.head_bias = (0..taus.len()).map(|i| if i == pick { 1000.0 } else { 0.0 }).collect();
        let (mix, _) = m.forward(&x, sites, SpikeFn::Heaviside).unwrap();
        let (expert, _) = m.experts[pick].forward(&x, sites, SpikeFn::Heaviside).unwrap();
        one_hot_exact &= mix == expert;
    }

    let clone = base.experts[1].clone();
    let same = MoseLayer::from_parts(vec![clone.clone(); taus.len()], base.gate.clone()).unwrap();
    let mut convex_err = 0.0f64;
    for mode in [SpikeFn::Heaviside, SpikeFn::Smooth] {
        let (mix, _) = same.forward(&x, sites, mode).unwrap();
        let (single, _) = clone.forward(&x, sites, mode).unwrap();
        for (a, b) in mix.iter().zip(&single) {
            convex_err = convex_err.max(max_abs_diff(a, b));
        }
    }

    let mut simplex_err = 0.0f64;
    let mut negative = false;
    for _ in 0..100 {
        let steps = rng.random_range(1..12);
        let scale = rng.random_range(0.0..5.0);
        let input: Vec<Vec<f64>> = random_steps(&mut rng, steps, n_in * sites)
            .into_iter()
            .map(|v| v.into_iter().map(|e| e * scale).collect())
            .collect();
        let mut gate: Gate = base.gate.clone();
        gate.head_bias = (0..taus.len()).map(|_| rng.random_range(-20.0..20.0)).collect();
        let alpha = gate.forward(&input, sites, SpikeFn::Heaviside).unwrap().0.alpha;
        negative |= alpha.iter().any(|&a| a < 0.0);
        simplex_err = simplex_err.max((alpha.iter().sum::<f64>() - 1.0).abs());
    }
    Outcome::new(
        one_hot_exact && convex_err < 1e-12 && simplex_err < 1e-12 && !negative,
        format!(
            "one-hot mixture bit-exact: {one_hot_exact}; identical-expert error {convex_err:.1e}; gate sum error {simplex_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5

fn gradient_fidelity() -> Outcome {
    let (model, ..) = toy_model_and_batch(0, StreamMode::Dual).unwrap();
    let n = params::count(&model);
    let report = gradcheck_toy_model(0, StreamMode::Dual, FdSettings::default()).unwrap();
    let worst = report.max_rel_error();
    Outcome::new(
        n <= 2000 && worst < 1e-4,
        format!("{n} parameters, {} checked, max relative error {worst:.2e}", report.entries.len()),
    )
}

// ---------------------------------------------------------------------------
// 6

struct Reference {
    rank1: f64,
    map: f64,
    minp: f64,
    excluded: Vec<String>,
}

/// Scores every gallery item against every other one to find its rank.
fn exhaustive_metrics(gallery: &[GaitEmbedding], probes: &[GaitEmbedding]) -> Reference {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let (mut hits, mut ap, mut inp, mut n) = (0.0, 0.0, 0.0, 0.0);
    let mut excluded = Vec::new();
    for p in probes {
        let cands: Vec<&GaitEmbedding> = gallery.iter().filter(|g| g.sample_id != p.sample_id).collect();
        let d: Vec<f64> = cands.iter().map(|g| dist(&p.f_gait, &g.f_gait)).collect();
        let rank = |i: usize| {
            1 + (0..cands.len())
                .filter(|&j| d[j] < d[i] || (d[j] == d[i] && cands[j].sample_id < cands[i].sample_id))
                .count()
        };
        let mut positive_ranks: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].label == p.label).map(rank).collect();
        if positive_ranks.is_empty() {
            excluded.push(p.sample_id.clone());
            continue;
        }
        positive_ranks.sort_unstable();
        n += 1.0;
        if positive_ranks[0] == 1 {
            hits += 1.0;
        }
        let precision_sum: f64 = positive_ranks.iter().enumerate().map(|(k, &r)| (k + 1) as f64 / r as f64).sum();
        ap += precision_sum / positive_ranks.len() as f64;
        inp += positive_ranks.len() as f64 / *positive_ranks.last().unwrap() as f64;
    }
    let pct = |v: f64| if n > 0.0 { 100.0 * v / n } else { 0.0 };
    Reference { rank1: pct(hits), map: pct(ap), minp: pct(inp), excluded }
}

fn embedding(id: String, label: usize, f: Vec<f64>) -> GaitEmbedding {
    GaitEmbedding { f_gait: f, label, sample_id: id }
}

fn metric_gap(got: &EvalResult, want: &Reference) -> f64 {
    let mut gap = (got.rank1 - want.rank1).abs().max((got.map - want.map).abs()).max((got.minp - want.minp).abs());
    if got.excluded != want.excluded {
        gap = f64::INFINITY;
    }
    gap
}

fn metric_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut evaluated = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let ids = rng.random_range(2..12);
        let dim = rng.random_range(1..6);
        // Coarse coordinates make distance ties common.
        let coarse = seed % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim)
                .map(|_| if coarse { rng.random_range(0..3) as f64 } else { rng.random_range(-1.0..1.0) })
                .collect()
        };
        let mut gallery = Vec::new();
        let mut probes = Vec::new();
        for i in 0..rng.random_range(5..40) {
            gallery.push(embedding(format!("g{i:03}"), rng.random_range(0..ids), draw(&mut rng)));
        }
        for i in 0..rng.random_range(5..40) {
            probes.push(embedding(format!("p{i:03}"), rng.random_range(0..ids + 2), draw(&mut rng)));
        }
        if seed % 5 == 0 {
            probes.extend(gallery.iter().take(4).cloned());
        }
        let got = evaluate(&gallery, &probes).unwrap();
        evaluated += got.evaluated();
        worst = worst.max(metric_gap(&got, &exhaustive_metrics(&gallery, &probes)));
    }

    let gallery = vec![
        embedding("a".into(), 1, vec![1.0]),
        embedding("b".into(), 2, vec![2.0]),
        embedding("c".into(), 1, vec![3.0]),
        embedding("d".into(), 3, vec![4.0]),
    ];
    let probe = [embedding("q".into(), 1, vec![0.0])];
    let hand = evaluate(&gallery, &probe).unwrap();
    let hand_ok = (hand.map - 100.0 * (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-10
        && (hand.minp - 100.0 * 2.0 / 3.0).abs() < 1e-10
        && hand.rank1 == 100.0;
    Outcome::new(
        worst < 1e-10 && hand_ok,
        format!(
            "max deviation {worst:.1e} over 20 problems ({evaluated} probes); hand case AP {:.4}, mINP {:.4}",
            hand.map / 100.0,
            hand.minp / 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 7, 8, 9

#[derive(Default)]
struct ToyRuns {
    bench: Option<ToyBenchmark>,
    runs: Vec<(String, Result<ExperimentResult, String>)>,
}

impl ToyRuns {
    fn config() -> ExperimentConfig {
        ExperimentConfig::default()
    }

    fn run(&mut self, key: &str, mode: StreamMode, lambda_d: f64) -> Result<&ExperimentResult, String> {
        if !self.runs.iter().any(|(k, _)| k == key) {
            let cfg = Self::config();
            if self.bench.is_none() {
                self.bench = Some(build_benchmark(&cfg, &Sequential).map_err(|e| e.to_string())?);
            }
            let train = cfg.with_mode(mode).with_lambda(lambda_d).train;
            let result = run_on_benchmark(self.bench.as_ref().unwrap(), &train, &Sequential, |_| {}).map_err(|e| e.to_string());
            self.runs.push((key.to_string(), result));
        }
        let (_, r) = self.runs.iter().find(|(k, _)| k == key).unwrap();
        r.as_ref().map_err(Clone::clone)
    }

    fn rank1(r: &ExperimentResult, cond: &str) -> f64 {
        r.condition(cond).map_or(f64::NAN, |c| c.rank1)
    }

    fn recognition(&mut self) -> Outcome {
        match self.run("dual", StreamMode::Dual, 0.2) {
            Ok(r) => {
                let (bright, dim) = (Self::rank1(r, "bright"), Self::rank1(r, "dim"));
                Outcome::new(
                    bright >= 90.0 && dim >= 75.0,
                    format!("rank-1 bright {bright:.1}% (need 90), dim {dim:.1}% (need 75)"),
                )
            }
            Err(e) => Outcome::new(false, e),
        }
    }

    fn stream_ablation(&mut self) -> Outcome {
        let mut overall = Vec::new();
        for (key, mode) in [("dual", StreamMode::Dual), ("static", StreamMode::StaticOnly), ("dynamic", StreamMode::DynamicOnly)] {
            match self.run(key, mode, 0.2) {
                Ok(r) => overall.push(r.overall_rank1()),
                Err(e) => return Outcome::new(false, e),
            }
        }
        let (d, s, y) = (overall[0], overall[1], overall[2]);
        Outcome::new(
            d - s >= 2.0 && s - y >= 2.0,
            format!("overall rank-1 dual {d:.1}%, static-only {s:.1}%, dynamic-only {y:.1}%"),
        )
    }

    fn alignment_ablation(&mut self) -> Outcome {
        let with = match self.run("dual", StreamMode::Dual, 0.2) {
            Ok(r) => r.overall_rank1(),
            Err(e) => return Outcome::new(false, e),
        };
        let without = match self.run("dual-no-align", StreamMode::Dual, 0.0) {
            Ok(r) => r.overall_rank1(),
            Err(e) => return Outcome::new(false, e),
        };
        Outcome::new(
            with - without >= 1.0,
            format!("overall rank-1 with alignment {with:.1}%, without {without:.1}% (need a gain of at least 1 point)"),
        )
    }
}

// ---------------------------------------------------------------------------
// 10

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.experiment.train.iterations = 200;
    cfg.threads = 1;
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        if let Err(e) = driver::train(&cfg, &out, |_| {}) {
            return Outcome::new(false, e.to_string());
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        files.push((read(driver::LOG_FILE), read(driver::CHECKPOINT_FILE)));
    }
    let logs = files[0].0 == files[1].0;
    let ckpts = files[0].1 == files[1].1;
    Outcome::new(
        logs && ckpts,
        format!(
            "200-iteration runs: loss logs identical {logs} ({} bytes), checkpoints identical {ckpts} ({} bytes)",
            files[0].0.len(),
            files[0].1.len()
        ),
    )
}

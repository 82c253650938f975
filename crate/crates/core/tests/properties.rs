mod common;

use std::collections::HashMap;

use common::*;
use ebdevs::stats::{counts_from_ccdf, degree_histogram, gini};
use ebdevs::{
    Atomic, Context, CoupledSpec, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId, Outbox,
    PortRef, QueryError, RngStream, SimTime, Simulation, StreamId,
};
use proptest::prelude::*;

fn brute_gini(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let pairwise: f64 = xs.iter().flat_map(|a| xs.iter().map(move |b| (a - b).abs())).sum();
    pairwise / (2.0 * n * n * mean)
}

/// Exact probability of each ordered draw sequence under sequential
/// weighted sampling without replacement.
fn exact_sequences(weights: &[f64], count: usize) -> HashMap<Vec<usize>, f64> {
    fn rec(weights: &[f64], left: &[usize], count: usize, prefix: Vec<usize>, p: f64, out: &mut HashMap<Vec<usize>, f64>) {
        if prefix.len() == count {
            *out.entry(prefix).or_default() += p;
            return;
        }
        let total: f64 = left.iter().map(|&i| weights[i]).sum();
        for (pos, &i) in left.iter().enumerate() {
            if weights[i] == 0.0 {
                continue;
            }
            let mut rest = left.to_vec();
            rest.remove(pos);
            let mut next = prefix.clone();
            next.push(i);
            rec(weights, &rest, count, next, p * weights[i] / total, out);
        }
    }
    let mut out = HashMap::new();
    let all: Vec<usize> = (0..weights.len()).collect();
    rec(weights, &all, count, Vec::new(), 1.0, &mut out);
    out
}

proptest! {
    #[test]
    fn gini_matches_pairwise_definition(xs in prop::collection::vec(0.0f64..100.0, 1..60)) {
        prop_assume!(xs.iter().sum::<f64>() > 0.0);
        let g = gini(&xs).unwrap();
        prop_assert!((g - brute_gini(&xs)).abs() < 1e-9);
        let n = xs.len() as f64;
        prop_assert!(g >= 0.0 && g <= (n - 1.0) / n + 1e-12);
    }

    #[test]
    fn gini_is_scale_invariant(xs in prop::collection::vec(0.0f64..100.0, 1..60), c in 0.01f64..1000.0) {
        prop_assume!(xs.iter().sum::<f64>() > 0.0);
        let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
        prop_assert!((gini(&xs).unwrap() - gini(&scaled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn histogram_round_trips(degrees in prop::collection::vec(0u64..50, 1..300)) {
        let h = degree_histogram(&degrees);
        prop_assert_eq!(h.total(), degrees.len());
        prop_assert_eq!(h.ccdf[0].1, 1.0);
        prop_assert!(h.ccdf.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert_eq!(counts_from_ccdf(&h.ccdf, degrees.len()), h.counts);
    }

    #[test]
    fn weighted_sampling_returns_distinct_ids(
        weights in prop::collection::vec(0.0f64..5.0, 1..12),
        seed in any::<u64>(),
    ) {
        let positive = weights.iter().filter(|w| **w > 0.0).count();
        let pool: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
        let mut rng = RngStream::from_seed(seed);
        for count in 0..=positive {
            let drawn = rng.weighted_sample_without_replacement(&pool, count).unwrap();
            prop_assert_eq!(drawn.len(), count);
            let mut sorted = drawn.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), count);
            prop_assert!(drawn.iter().all(|i| weights[*i] > 0.0));
        }
        prop_assert!(rng.weighted_sample_without_replacement(&pool, positive + 1).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn weighted_sampling_matches_enumeration(
        weights in prop::collection::vec(prop_oneof![Just(0.0), 0.5f64..4.0], 2..=4),
        count in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let positive = weights.iter().filter(|w| **w > 0.0).count();
        prop_assume!(count <= positive);
        let exact = exact_sequences(&weights, count);
        let pool: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
        let mut rng = RngStream::from_seed(seed);
        let draws = 40_000;
        let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *freq.entry(rng.weighted_sample_without_replacement(&pool, count).unwrap()).or_default() += 1;
        }
        for (seq, p) in &exact {
            let f = *freq.get(seq).unwrap_or(&0) as f64 / draws as f64;
            // 5 sigma of a binomial proportion at 40k draws is below 0.0125
            prop_assert!((f - p).abs() < 0.0125, "{:?}: {} vs {}", seq, f, p);
        }
        prop_assert!(freq.keys().all(|k| exact.contains_key(k)));
    }
}

/// Random walker: exponential time advance, y_up on every internal
/// transition, occasionally asks for its own removal.
struct Walker {
    mean: f64,
    ta: f64,
    pending: Option<String>,
}

impl Atomic<Fam> for Walker {
    fn initialize(&mut self, ctx: &mut Context<'_, Fam>) -> HookResult {
        self.ta = ctx.rng().exponential(self.mean)?;
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_, Fam>) -> HookResult {
        self.ta = ctx.rng().exponential(self.mean)?;
        self.pending = Some(format!("{}", ctx.model_id()));
        Ok(())
    }

    fn delta_ext(&mut self, _e: SimTime, _inputs: &[Input<String>], _ctx: &mut Context<'_, Fam>) -> HookResult {
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, Fam>, out: &mut Outbox<String>) -> HookResult {
        out.send(OUT, "w".into());
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        self.ta
    }

    fn take_yup(&mut self) -> Option<String> {
        self.pending.take()
    }
}

/// Randomly adds walkers (wired to a random live one) and removes the
/// emitter of a random y_up.
struct Churn {
    alive: Vec<ModelId>,
    root: ModelId,
}

impl MacroBehaviour<Fam> for Churn {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        batch: Vec<String>,
        ctx: &mut GlobalContext<'_, Fam>,
    ) -> Result<Option<String>, ModelError> {
        let _ = self.root;
        for _ in batch {
            let u = ctx.rng().uniform();
            if u < 0.45 && self.alive.len() > 1 {
                let idx = ctx.rng().index(self.alive.len());
                let victim = self.alive.swap_remove(idx);
                ctx.remove_atomic(victim);
            } else if u < 0.9 {
                let n = ctx.rng().index(1_000_000);
                let id = ctx.add_atomic(
                    format!("w{n}-{}", self.alive.len()),
                    Walker {
                        mean: 1.0,
                        ta: 0.0,
                        pending: None,
                    },
                );
                if let Some(&peer) = ctx.rng().choose(&self.alive) {
                    ctx.connect(PortRef::output(id, OUT), PortRef::input(peer, IN));
                    ctx.connect(PortRef::output(peer, OUT), PortRef::input(id, IN));
                }
                self.alive.push(id);
            }
        }
        Ok(None)
    }

    fn v_down(&self, _q: &&'static str, _rng: &mut RngStream) -> Result<usize, QueryError> {
        Ok(self.alive.len())
    }
}

fn churn_run(seed: u64, walkers: usize, t_end: f64) -> (Vec<String>, Simulation<Fam>) {
    let mut spec = CoupledSpec::<Fam>::new("root");
    let root = spec.root();
    let alive: Vec<ModelId> = (0..walkers)
        .map(|i| {
            spec.add_atomic(
                root,
                format!("w{i}"),
                Walker {
                    mean: 1.0,
                    ta: 0.0,
                    pending: None,
                },
            )
            .unwrap()
        })
        .collect();
    spec.set_macro(root, Churn { alive, root }).unwrap();
    let mut sim = Simulation::initialize(spec, seed).unwrap();
    sim.enable_trace();
    let mut last = SimTime::ZERO;
    sim.run_until_with(t(t_end), |s, report| {
        assert!(report.time >= last, "report times must not decrease");
        last = report.time;
        assert_eq!(s.schedule_len(), s.alive_atomics());
        assert!(s
            .couplings()
            .iter()
            .all(|(a, b)| s.contains(a.model) && s.contains(b.model)));
        assert!(s.clock() <= s.next_event_time());
    })
    .unwrap();
    let trace = sim.take_trace().iter().map(ToString::to_string).collect();
    (trace, sim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedule_tracks_alive_atomics(seed in any::<u64>(), walkers in 1usize..8) {
        let (_, sim) = churn_run(seed, walkers, 15.0);
        prop_assert_eq!(sim.schedule_len(), sim.alive_atomics());
    }

    #[test]
    fn traces_are_reproducible(seed in any::<u64>()) {
        let (a, _) = churn_run(seed, 4, 10.0);
        let (b, _) = churn_run(seed, 4, 10.0);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn distinct_seeds_diverge() {
    let (a, _) = churn_run(1, 4, 10.0);
    let (b, _) = churn_run(2, 4, 10.0);
    assert_ne!(a, b);
}

#[test]
fn streams_are_isolated() {
    // Extra draws on one stream leave another stream's sequence untouched.
    let mut a = RngStream::new(9, StreamId::new(1, 0));
    let mut b1 = RngStream::new(9, StreamId::new(2, 0));
    let seq1: Vec<f64> = (0..10).map(|_| b1.uniform()).collect();
    for _ in 0..100 {
        a.uniform();
    }
    let mut b2 = RngStream::new(9, StreamId::new(2, 0));
    let seq2: Vec<f64> = (0..10).map(|_| b2.uniform()).collect();
    assert_eq!(seq1, seq2);
}

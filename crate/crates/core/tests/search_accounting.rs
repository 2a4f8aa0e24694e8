use tepkit::config::{SampleMode, SearchConfig, Selection, Strategy};
use tepkit::search::{
    best_of_n, importance_weights, predicted_budget, run_strategy, systematic_resample_with_offset, SearchResult,
};
use tepkit::sampler::uniform_plan;
use tepkit::{ExperimentConfig, Lab, LatentGrid};

fn small_lab() -> Lab {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.height = 8;
    cfg.grid.width = 8;
    cfg.sampler.steps = 8;
    cfg.search.n = 4;
    cfg.search.particles = 2;
    cfg.search.children = 3;
    cfg.search.block = 3;
    cfg.search.zo_rounds = 2;
    cfg.search.sop_rounds = 2;
    cfg.search.sop_topk = 2;
    Lab::new(cfg).unwrap()
}

fn run(lab: &Lab, sc: &SearchConfig, seed: u64) -> SearchResult {
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    run_strategy(&lab.sampler(), sc, seed, &reward).unwrap()
}

fn all_strategies(base: &SearchConfig) -> Vec<SearchConfig> {
    let mut out = Vec::new();
    for strategy in [Strategy::BestOfN, Strategy::ZeroOrder, Strategy::Particle, Strategy::SearchOverPaths] {
        out.push(SearchConfig { strategy, ..base.clone() });
    }
    out.push(SearchConfig { strategy: Strategy::Particle, selection: Selection::Importance, ..base.clone() });
    out
}

#[test]
fn systematic_counts_for_a_fixed_vector() {
    for k in 0..50 {
        let u = k as f64 / 50.0;
        let idx = systematic_resample_with_offset(&[0.5, 0.3, 0.2], 10, u).unwrap();
        let counts: Vec<usize> = (0..3).map(|j| idx.iter().filter(|&&i| i == j).count()).collect();
        assert_eq!(counts, vec![5, 3, 2], "u = {u}");
    }
    assert!(systematic_resample_with_offset(&[0.5, 0.6], 4, 0.1).is_err());
}

#[test]
fn counters_match_closed_form_budgets() {
    let lab = small_lab();
    for sc in all_strategies(&lab.config.search) {
        let res = run(&lab, &sc, 3);
        let (ndfe, nrfe) = predicted_budget(&sc, lab.config.sampler.steps);
        assert_eq!((res.ndfe, res.nrfe), (ndfe, nrfe), "{:?} {:?}", sc.strategy, sc.selection);
    }
}

#[test]
fn single_checkpoint_particle_search_scores_every_child_once() {
    let lab = small_lab();
    let sc = SearchConfig { strategy: Strategy::Particle, block: lab.config.sampler.steps, ..lab.config.search.clone() };
    let res = run(&lab, &sc, 5);
    let live = sc.particles * sc.children;
    assert_eq!(res.nrfe, live);
    assert_eq!(res.ndfe, live * lab.config.sampler.steps);
    assert_eq!(res.rewards.len(), live);
    assert_eq!(res.best_reward, res.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
}

#[test]
fn worker_count_does_not_change_results() {
    let lab = small_lab();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    for sc in all_strategies(&lab.config.search) {
        let a = one.install(|| run(&lab, &sc, 11));
        let b = four.install(|| run(&lab, &sc, 11));
        assert!(a.best.latent.bit_eq(&b.best.latent));
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.events, b.events);
    }
}

#[test]
fn best_of_n_prefixes_are_nested() {
    let lab = small_lab();
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    let plan = uniform_plan(SampleMode::Sde, lab.config.sampler.steps);
    let big = best_of_n(&lab.sampler(), &plan, 6, 2, &reward).unwrap();
    let small = best_of_n(&lab.sampler(), &plan, 3, 2, &reward).unwrap();
    assert_eq!(&big.rewards[..3], &small.rewards[..]);
    assert!(big.best_reward >= small.best_reward);
}

#[test]
fn importance_weights_follow_temperature() {
    let r = [1.0, 2.0, 4.0];
    let hot = importance_weights(&r, 100.0).unwrap();
    assert!(hot.iter().all(|w| (w - 1.0 / 3.0).abs() < 0.01));
    let cold = importance_weights(&r, 1e-3).unwrap();
    assert!(cold[2] > 0.999);
    let flat = importance_weights(&[2.0, 2.0], 0.1).unwrap();
    assert_eq!(flat, vec![0.5, 0.5]);
    assert!(importance_weights(&[1.0, f64::NAN], 0.1).is_err());
}

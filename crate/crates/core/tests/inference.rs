use sfcr_core::inference::{
    checkpoint, checkpoint_path, lag_posterior, resume, run, summarize_curves, ChainRunner, FitProblem, RunConfig,
};
use sfcr_core::model::{simulate, Hyperparams, Scenario};
use sfcr_core::Error;

fn small_hp() -> Hyperparams {
    Hyperparams { k_factors: 2, l_factors: 1, p_gamma: 4, h_lrtps: 8, j_dr: 6, max_lag: 5, ..Default::default() }
}

fn problem(seed: u64) -> FitProblem {
    let hp = small_hp();
    let mut sc = Scenario::new(hp.clone(), 4, 40);
    sc.schedule.y_random_missing = 0.2;
    let sim = simulate(&sc, None, seed).unwrap();
    FitProblem::new(sim.data, hp).unwrap()
}

fn config(iterations: usize, burn_in: usize, thin: usize) -> RunConfig {
    RunConfig { iterations, burn_in, thin, chains: 2, seed: 9, checkpoint_every: 0 }
}

#[test]
fn config_validation() {
    assert!(config(10, 11, 1).validate().is_err());
    assert!(config(10, 5, 0).validate().is_err());
    assert!(RunConfig { chains: 0, ..config(10, 5, 1) }.validate().is_err());
    assert!(config(10, 10, 1).validate().is_ok());
    let c = config(20, 5, 4);
    assert_eq!(c.retained_draws(), 3);
    assert_eq!((1..=20).filter(|&s| c.retains(s)).count(), 3);
}

#[test]
fn no_retained_draws_gives_empty_summaries() {
    let p = problem(1);
    let out = run(&p, &config(6, 6, 1), None).unwrap();
    assert_eq!(out.len(), 2);
    for o in &out {
        assert_eq!(o.draws(), 0);
        assert_eq!(o.lag_counts.iter().sum::<u64>(), 0);
    }
    let s = summarize_curves(&out, &p.data.grid).unwrap();
    assert_eq!(s.draws, 0);
    assert!(s.gamma.is_empty());
    assert!(lag_posterior(&out).iter().all(|&v| v == 0.0));
}

#[test]
fn runs_are_deterministic_and_counted() {
    let p = problem(2);
    let c = config(30, 10, 3);
    let a = run(&p, &c, None).unwrap();
    let b = run(&p, &c, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].scalars.log_joint, a[1].scalars.log_joint);
    for o in &a {
        assert_eq!(o.draws(), c.retained_draws());
        assert_eq!(o.lag_counts.iter().sum::<u64>() as usize, o.draws());
        assert_eq!(o.gamma.draws(), o.draws());
        assert!(o.x.iter().all(|t| t.draws() == o.draws()));
    }
    let s = summarize_curves(&a, &p.data.grid).unwrap();
    for band in std::iter::once(&s.gamma).chain(&s.fitted_y).chain(&s.x) {
        for t in 0..band.len() {
            assert!(band.q025[t] <= band.q50[t] && band.q50[t] <= band.q975[t]);
        }
    }
}

#[test]
fn checkpoint_round_trip_continues_bit_exactly() {
    let p = problem(3);
    let c = RunConfig { chains: 1, ..config(40, 10, 2) };
    let mut straight = ChainRunner::start(&p, &c, 0).unwrap();
    straight.run_to(40, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = ChainRunner::start(&p, &c, 0).unwrap();
    first.run_to(17, Some(dir.path())).unwrap();
    let path = checkpoint_path(dir.path(), 0);
    let ckpt = checkpoint::read(&path).unwrap();
    assert_eq!(ckpt.iteration, 17);
    assert_eq!(checkpoint::decode(&checkpoint::encode(&ckpt).unwrap()).unwrap(), ckpt);

    let resumed = resume(&p, &[path.as_path()], 40, None).unwrap();
    assert_eq!(resumed[0], straight.output);
    let mut again = ChainRunner::resume(&p, ckpt).unwrap();
    again.run_to(40, None).unwrap();
    assert_eq!(again.state, straight.state);
    assert_eq!(again.ctx.rng, straight.ctx.rng);
}

#[test]
fn checkpoint_rejects_other_versions_and_data() {
    let p = problem(4);
    let c = RunConfig { chains: 1, ..config(5, 0, 1) };
    let mut r = ChainRunner::start(&p, &c, 0).unwrap();
    r.run_to(5, None).unwrap();
    let mut bytes = checkpoint::encode(&r.checkpoint()).unwrap();
    bytes[8..12].copy_from_slice(&(checkpoint::VERSION + 1).to_le_bytes());
    match checkpoint::decode(&bytes) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("incompatible"), "{m}"),
        other => panic!("expected a version error, got {other:?}"),
    }
    assert!(checkpoint::decode(b"not a checkpoint").is_err());
    let good = checkpoint::encode(&r.checkpoint()).unwrap();
    assert!(checkpoint::decode(&good[..good.len() - 3]).is_err());

    let other = problem(5);
    assert!(matches!(ChainRunner::resume(&other, r.checkpoint()), Err(Error::Checkpoint(_))));
}

#[test]
fn failing_sweep_writes_checkpoint_and_reports_position() {
    let p = problem(6);
    let c = RunConfig { chains: 1, ..config(20, 0, 1) };
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChainRunner::start(&p, &c, 0).unwrap();
    r.run_to(4, None).unwrap();
    r.state.sigma2_eps_y = -1.0;
    match r.run_to(20, Some(dir.path())) {
        Err(Error::Sampler { chain, iteration, .. }) => {
            assert_eq!((chain, iteration), (0, 5));
        }
        other => panic!("expected a sampler error, got {other:?}"),
    }
    let ckpt = checkpoint::read(&checkpoint_path(dir.path(), 0)).unwrap();
    assert_eq!(ckpt.iteration, 4);
    assert_eq!(ckpt.state.sigma2_eps_y, -1.0);
}

#[test]
fn small_synthetic_fit_recovers_lag() {
    let hp = Hyperparams::for_grid(120);
    let mut sc = Scenario::new(hp.clone(), 6, 120);
    sc.lag = Some(8);
    let sim = simulate(&sc, None, 1).unwrap();
    let p = FitProblem::new(sim.data, hp).unwrap();
    let out = run(&p, &RunConfig { seed: 1, checkpoint_every: 0, ..RunConfig::default() }, None).unwrap();
    let probs = lag_posterior(&out);
    let mode = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    assert_eq!(mode, 8, "{probs:?}");
}

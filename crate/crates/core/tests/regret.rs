mod common;

use rtpipe::envs::{Action, DefaultPolicy, WorstCase};
use rtpipe::pipeline::ExecTime;
use rtpipe::regret::{
    delay_regret, inaction_regret, regret_sweep, write_sweep, Beta, ModalSuccessor, PolicyKind,
    SweepConfig,
};

fn chain(n: usize, p: f64, steps: usize) -> impl Fn(u64) -> Result<WorstCase, rtpipe::envs::EnvError> + Sync {
    move |s| WorstCase::new(n, p, s).map(|e| e.with_max_steps(steps))
}

#[test]
fn delay_regret_matches_path_enumeration() {
    let (n, p) = (64, 0.8);
    let model = WorstCase::new(n, p, 0).unwrap();
    for d in [1, 3] {
        let pol = ModalSuccessor::for_worstcase(&model, d);
        let rep = delay_regret(chain(n, p, 4000), &pol, d, 3000, 30, 7).unwrap();
        let exact = 1.0 - common::modal_hit_probability(n, p, d);
        let bound = 1.0 - p.powi(d as i32);
        assert!((rep.delay_rate - bound).abs() <= 0.02, "d={d}: {} vs {bound}", rep.delay_rate);
        assert!(
            (rep.delay_rate - exact).abs() <= rep.delay_ci,
            "d={d}: {} vs {exact} ± {}",
            rep.delay_rate,
            rep.delay_ci
        );
        assert_eq!(rep.inaction_regret, 0.0);
        assert!((rep.delay_regret - (rep.g_opt - rep.g_pi)).abs() < 1e-9);
    }
}

#[test]
fn deterministic_chain_has_no_delay_regret() {
    let model = WorstCase::new(8, 1.0, 0).unwrap();
    let pol = ModalSuccessor::for_worstcase(&model, 4);
    let rep = delay_regret(chain(8, 1.0, 600), &pol, 4, 500, 30, 1).unwrap();
    assert_eq!(rep.delay_regret, 0.0);
    assert_eq!(rep.g_pi, 500.0);
}

#[test]
fn inaction_regret_is_linear_in_idle_steps() {
    let (n, p) = (16, 0.8);
    let beta = Beta::Default(DefaultPolicy::FixedAction(Action::Discrete(0)));
    let one = inaction_regret(chain(n, p, 4000), &beta, 1, 1000, 30, 3).unwrap();
    assert_eq!(one.inaction_regret, 0.0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for delta in [2, 3, 4] {
        let rep = inaction_regret(chain(n, p, 4000), &beta, delta, 1000, 30, 3).unwrap();
        assert!(rep.inaction_rate > 0.0 && rep.inaction_rate <= (delta - 1) as f64);
        x.push((delta - 1) as f64);
        y.push(rep.inaction_rate);
    }
    let (slope, r2) = common::fit_through_origin(&x, &y);
    assert!(slope > 0.0);
    assert!(r2 > 0.95, "R² = {r2}");

    let opt = inaction_regret(chain(n, p, 4000), &Beta::Optimal, 3, 1000, 30, 3).unwrap();
    assert_eq!(opt.inaction_regret, 0.0);
}

#[test]
fn sweep_is_monotone_in_depth_and_replayable() {
    let cfg = SweepConfig {
        depth: vec![1, 2, 3],
        policies: vec![PolicyKind::Vanilla],
        horizon: 1000,
        ..SweepConfig::default()
    };
    let rows = regret_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].delay_regret >= w[0].delay_regret);
    }
    for r in &rows {
        assert!(r.delay_regret <= 1.0 && r.inaction_regret <= 1.0);
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_sweep(&mut a, &rows).unwrap();
    write_sweep(&mut b, &regret_sweep(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("p,n_states,delta,N,policy,t,delay_regret,inaction_regret,ci\n"));
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn single_cell_sweep_matches_delay_regret() {
    let delta = ExecTime::new(2, 5).unwrap();
    let cfg = SweepConfig {
        delta: vec![delta],
        depth: vec![5],
        policies: vec![PolicyKind::Vanilla],
        horizon: 500,
        ..SweepConfig::default()
    };
    let rows = regret_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    let model = WorstCase::new(64, 0.8, 0).unwrap();
    let pol = ModalSuccessor::for_worstcase(&model, 2);
    let rep = delay_regret(chain(64, 0.8, 502), &pol, 2, 500, 30, 0).unwrap();
    assert_eq!(rows[0].delay_regret, rep.delay_rate);
    assert_eq!(rows[0].ci, rep.delay_ci);
}

#[test]
fn empty_grid_is_rejected() {
    let cfg = SweepConfig { depth: vec![], ..SweepConfig::default() };
    assert!(regret_sweep(&cfg).is_err());
}

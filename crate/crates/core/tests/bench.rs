mod common;

use rand::Rng as _;
use rtpipe::bench::{
    build_executor, check_streams, correctness_gate, plot_throughput, read_bench, run_bench,
    write_bench, BenchConfig, BenchError, ChainNet, ExecutorKind, TickExecutor,
};
use rtpipe::numerics::RngStream;

fn all(net: &ChainNet, rows: usize, threads: usize) -> Vec<Box<dyn TickExecutor>> {
    ExecutorKind::ALL.iter().map(|&k| build_executor(k, net, rows, threads).unwrap()).collect()
}

#[test]
fn executors_agree_on_random_configs() {
    let mut rng = RngStream::new(11).rng();
    for i in 0..100 {
        let depth = rng.random_range(1..=8);
        let width = rng.random_range(1..=16);
        let rows = rng.random_range(1..=4);
        let threads = rng.random_range(2..=4);
        let net = ChainNet::new(depth, width, i).unwrap();
        let mut ex = all(&net, rows, threads);
        let diff = check_streams(&net, &mut ex, rows, depth + 6, i).unwrap();
        assert!(diff <= 1e-6);
    }
}

#[test]
fn skewed_weights_fail_the_gate() {
    let net = ChainNet::new(4, 8, 3).unwrap();
    let mut skewed = net.clone();
    for v in skewed.params.stages[3].layers[0].b.data_mut() {
        *v += 1e-3;
    }
    let mut ex = vec![
        build_executor(ExecutorKind::Sequential, &net, 2, 2).unwrap(),
        build_executor(ExecutorKind::FusedBlockdiag, &skewed, 2, 2).unwrap(),
    ];
    match check_streams(&net, &mut ex, 2, 10, 0) {
        Err(BenchError::GateFailed { executor, .. }) => assert_eq!(executor, ExecutorKind::FusedBlockdiag),
        other => panic!("expected gate failure, got {other:?}"),
    }
}

#[test]
fn wide_deep_fused_matches_sequential() {
    let cfg = BenchConfig { depths: vec![16], width: 256, batch: 2, threads: 4, ..BenchConfig::default() };
    assert!(correctness_gate(&cfg).unwrap() <= 1e-6);
}

#[test]
fn sequential_latency_grows_with_depth_and_csv_round_trips() {
    let cfg = BenchConfig {
        depths: vec![1, 2, 4, 8, 16],
        width: 64,
        batch: 8,
        runs: 3,
        executors: vec![ExecutorKind::Sequential, ExecutorKind::FusedBlockdiag],
        ..BenchConfig::default()
    };
    let rows = run_bench(&cfg).unwrap();
    assert_eq!(rows.len(), 10);
    let seq: Vec<_> = rows.iter().filter(|r| r.executor == ExecutorKind::Sequential).collect();
    let depth: Vec<f64> = seq.iter().map(|r| r.depth as f64).collect();
    let lat: Vec<f64> = seq.iter().map(|r| r.latency_per_action).collect();
    let rho = common::spearman(&depth, &lat);
    assert!(rho > 0.9, "rho = {rho}");
    for r in &seq {
        assert_eq!(r.speedup_vs_sequential, 1.0);
    }

    let mut buf = Vec::new();
    write_bench(&mut buf, &rows).unwrap();
    assert!(String::from_utf8_lossy(&buf)
        .starts_with("executor,depth,actions_per_sec,latency_per_action,speedup_vs_sequential\n"));
    let back = read_bench(buf.as_slice()).unwrap();
    assert_eq!(back, rows);
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("throughput.svg");
    plot_throughput(&back, &svg).unwrap();
    assert!(std::fs::read_to_string(svg).unwrap().contains("<svg"));
}

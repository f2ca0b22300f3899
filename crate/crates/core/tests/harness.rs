use std::fs::{self, File};

use lpwa_core::config::SweepParam;
use lpwa_core::harness::{
    run_to_dir, sweep, sweep_with, ArtifactOptions, FRAMES_CSV, PACKETS_CSV, SUMMARY_CSV,
};
use lpwa_core::metrics::{compute_metrics, read_frames_csv, read_packets_csv};
use lpwa_core::sim::metrics_window;
use lpwa_core::{simulate, ExperimentConfig, Protocol, SweepSpec};

fn small(protocol: Protocol) -> ExperimentConfig {
    ExperimentConfig {
        protocol,
        n_nodes: 20,
        network_load: 2.5,
        horizon_s: 300.0,
        ..Default::default()
    }
}

fn all_opts() -> ArtifactOptions {
    ArtifactOptions {
        frame_log: true,
        trace: true,
    }
}

#[test]
fn repeated_runs_write_identical_files() {
    for p in Protocol::ALL {
        let cfg = small(p);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_to_dir(&cfg, a.path(), all_opts()).unwrap();
        run_to_dir(&cfg, b.path(), all_opts()).unwrap();
        for name in [
            PACKETS_CSV,
            FRAMES_CSV,
            SUMMARY_CSV,
            "config.toml",
            "trace.txt",
        ] {
            let x = fs::read(a.path().join(name)).unwrap();
            let y = fs::read(b.path().join(name)).unwrap();
            assert!(!x.is_empty(), "{name} empty");
            assert_eq!(x, y, "{p} {name} differs");
        }
    }
}

#[test]
fn protocols_differ_with_same_seed() {
    let a = simulate(&small(Protocol::LpwaMac)).unwrap();
    let b = simulate(&small(Protocol::LoRaWan)).unwrap();
    // arrivals come from the same traffic streams
    let gen_a: Vec<_> = a.records.iter().map(|r| (r.node, r.t_generated)).collect();
    let gen_b: Vec<_> = b.records.iter().map(|r| (r.node, r.t_generated)).collect();
    assert_eq!(gen_a, gen_b);
    assert_ne!(a.summary, b.summary);
}

#[test]
fn summary_recomputes_from_written_logs() {
    for p in Protocol::ALL {
        let cfg = small(p);
        let dir = tempfile::tempdir().unwrap();
        let out = run_to_dir(&cfg, dir.path(), all_opts()).unwrap();
        let records = read_packets_csv(File::open(dir.path().join(PACKETS_CSV)).unwrap()).unwrap();
        let frames = read_frames_csv(File::open(dir.path().join(FRAMES_CSV)).unwrap()).unwrap();
        assert_eq!(records, out.records);
        let again = compute_metrics(&records, &frames, &metrics_window(&cfg));
        assert_eq!(again, out.summary);
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let mut cfg = small(Protocol::LpwaMac);
    cfg.seed = 77;
    cfg.lpwa.max_slots_per_grant = 5;
    let dir = tempfile::tempdir().unwrap();
    let out = run_to_dir(&cfg, dir.path(), ArtifactOptions::default()).unwrap();
    let text = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let echoed = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(echoed, cfg);
    let again = simulate(&echoed).unwrap();
    assert_eq!(again.records, out.records);
    assert_eq!(again.summary, out.summary);
}

#[test]
fn zero_horizon_runs_cleanly() {
    for p in Protocol::ALL {
        let mut cfg = small(p);
        cfg.horizon_s = 0.0;
        let dir = tempfile::tempdir().unwrap();
        let out = run_to_dir(&cfg, dir.path(), ArtifactOptions::default()).unwrap();
        assert_eq!(out.summary.generated, 0);
        assert_eq!(out.summary.mean_e2e_delay_s, None);
        let summary = fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        let row = summary.lines().nth(1).unwrap();
        assert!(row.contains(",NaN,NaN,0,0,0,"), "{row}");
    }
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let mut cfg = small(Protocol::LoRaWan);
    cfg.radio.spreading_factor = 13;
    let dir = tempfile::tempdir().unwrap();
    let err = run_to_dir(&cfg, dir.path(), ArtifactOptions::default()).unwrap_err();
    assert!(format!("{err:#}").contains("spreading_factor"), "{err:#}");
    assert!(!dir.path().join(PACKETS_CSV).exists());
}

#[test]
fn preset_row_counts() {
    let mut base = ExperimentConfig {
        horizon_s: 30.0,
        ..Default::default()
    };
    base.seed = 3;
    for name in ["fig1", "fig2"] {
        let spec = SweepSpec::preset(name, base.clone(), 2).unwrap();
        let res = sweep(&spec).unwrap();
        assert_eq!(res.rows.len(), 2 * 5 * 2);
        assert_eq!(res.aggregates().len(), 2 * 5);
        assert!(res.rows.iter().all(|r| r.result.is_ok()));
        let seeds: Vec<u64> = res.rows.iter().map(|r| r.config.seed).take(2).collect();
        assert_eq!(seeds, vec![3, 4]);
    }
    let fig1 = SweepSpec::preset("fig1", base.clone(), 1).unwrap();
    assert!(fig1.points().iter().all(|c| c.n_nodes == 50));
    let fig2 = SweepSpec::preset("fig2", base, 1).unwrap();
    assert!(fig2.points().iter().all(|c| c.network_load == 4.5));
}

#[test]
fn sweep_matches_serial_runs() {
    let spec = SweepSpec {
        base: small(Protocol::LpwaMac),
        protocols: Protocol::ALL.to_vec(),
        param: SweepParam::NNodes,
        values: vec![5.0, 10.0],
        seeds: 2,
    };
    let res = sweep(&spec).unwrap();
    for (row, cfg) in res.rows.iter().zip(spec.points()) {
        assert_eq!(row.config, cfg);
        let serial = simulate(&cfg).unwrap();
        assert_eq!(row.result.as_ref().unwrap(), &serial.summary);
    }
    let (_, frames) = sweep_with(&spec, |out| out.frames.len()).unwrap();
    assert_eq!(frames.len(), res.rows.len());
    assert!(frames.iter().all(|f| f.is_some_and(|n| n > 0)));
}

#[test]
fn sweep_writes_rows_and_aggregates() {
    let spec = SweepSpec {
        base: small(Protocol::LoRaWan),
        protocols: vec![Protocol::LoRaWan],
        param: SweepParam::NetworkLoad,
        values: vec![1.0, 2.0],
        seeds: 3,
    };
    let dir = tempfile::tempdir().unwrap();
    sweep(&spec).unwrap().write_to_dir(dir.path()).unwrap();
    let rows = fs::read_to_string(dir.path().join("sweep_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 6);
    assert!(rows.starts_with("protocol,n_nodes,network_load,seed,"));
    assert!(rows.lines().next().unwrap().ends_with(",error"));
    let agg = fs::read_to_string(dir.path().join("sweep_aggregates.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2);
}

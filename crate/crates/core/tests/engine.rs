use ef21_momentum::engine::{run_centralized_reference, Simulation};
use ef21_momentum::harness::audit_contraction;
use ef21_momentum::momentum::{replay_oracle, CallTally};
use ef21_momentum::{run, CompressorChoice, Granularity, MomentumKind, ProblemSpec, RunConfig, Schedule};

fn noisy(kind: MomentumKind, n: usize, d: usize, iters: usize) -> RunConfig {
    let mut c = RunConfig::new(kind, n, d, iters);
    c.sigma_g = 0.5;
    c.sigma_h = 0.5;
    c.seed = 42;
    c
}

#[test]
fn server_mirror_stays_consistent() {
    for kind in MomentumKind::ALL {
        let mut sim = Simulation::new(noisy(kind, 6, 30, 500)).unwrap();
        for _ in 0..500 {
            sim.step().unwrap();
            assert!(sim.mirror_gap() <= 1e-9, "{kind}: {}", sim.mirror_gap());
        }
    }
}

#[test]
fn identity_compressor_keeps_memories_equal_to_momentum() {
    for kind in MomentumKind::ALL {
        let mut c = noisy(kind, 4, 20, 200);
        c.compressor = CompressorChoice::Identity;
        let out = run(&c).unwrap();
        for r in &out.trajectory.records {
            assert_eq!(r.v_t, 0.0, "{kind} t={}", r.t);
        }
    }
}

#[test]
fn replay_reproduces_engine_momentum_bitwise() {
    for kind in
        [MomentumKind::Sgdm, MomentumKind::Mvr, MomentumKind::Hm, MomentumKind::Rhm, MomentumKind::Igt]
    {
        let c = noisy(kind, 3, 12, 10);
        let mut sim = Simulation::new(c).unwrap();
        let v0: Vec<_> = sim.clients().iter().map(|cl| cl.momentum.v.clone()).collect();
        sim.enable_replay_log();
        sim.run_to_end().unwrap();
        for (i, start) in v0.iter().enumerate() {
            let log = sim.replay_log(i).unwrap();
            assert_eq!(log.len(), 10);
            let replayed = replay_oracle(kind, log, start).unwrap();
            assert_eq!(replayed, sim.clients()[i].momentum.v, "{kind} client {i}");
        }
    }
}

#[test]
fn runs_are_bitwise_reproducible_and_thread_independent() {
    let mut c = noisy(MomentumKind::Rhm, 8, 40, 200);
    c.compressor = "randk:0.2".parse().unwrap();
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.x_output, b.x_output);

    c.parallel = true;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let p = pool.install(|| run(&c)).unwrap();
    assert_eq!(a.trajectory, p.trajectory);
    assert_eq!(a.x_output, p.x_output);
}

#[test]
fn compression_error_contracts_with_topk() {
    for kind in MomentumKind::ALL {
        let mut c = RunConfig::new(kind, 5, 40, 300);
        c.compressor = CompressorChoice::TopK(0.1);
        let sim_alpha = c.compressor.resolve(c.d).unwrap().alpha();
        let out = run(&c).unwrap();
        let report = audit_contraction(&out.trajectory, sim_alpha, 1e-12).unwrap();
        assert_eq!(report.violation_count(), 0, "{kind}: worst {}", report.worst_margin);
    }
}

#[test]
fn noiseless_corrected_momenta_track_gradients() {
    for kind in [MomentumKind::Hm, MomentumKind::Rhm, MomentumKind::Mvr] {
        let out = run(&RunConfig::new(kind, 4, 20, 100)).unwrap();
        for r in &out.trajectory.records {
            assert!(r.u_t <= 1e-12, "{kind} t={}: U_t = {}", r.t, r.u_t);
        }
    }
}

#[test]
fn rhm_equals_hm_on_quadratics() {
    let mut hm = RunConfig::new(MomentumKind::Hm, 3, 15, 50);
    hm.sigma_g = 0.3;
    let mut rhm = hm.clone();
    rhm.kind = MomentumKind::Rhm;
    let a = run(&hm).unwrap();
    let b = run(&rhm).unwrap();
    for (ra, rb) in a.trajectory.records.iter().zip(&b.trajectory.records) {
        assert!((ra.grad_norm - rb.grad_norm).abs() <= 1e-12 * (1.0 + ra.grad_norm));
    }
}

#[test]
fn oracle_budget_matches_method() {
    let expected = [
        (MomentumKind::Sgdm, CallTally { grads: 1, hvps: 0 }),
        (MomentumKind::Igt, CallTally { grads: 1, hvps: 0 }),
        (MomentumKind::Mvr, CallTally { grads: 2, hvps: 0 }),
        (MomentumKind::Hm, CallTally { grads: 1, hvps: 1 }),
        (MomentumKind::Rhm, CallTally { grads: 1, hvps: 1 }),
    ];
    for (kind, per_step) in expected {
        let mut sim = Simulation::new(noisy(kind, 3, 8, 7)).unwrap();
        for t in 1..=7u64 {
            sim.step().unwrap();
            for client in sim.clients() {
                assert_eq!(client.calls, CallTally { grads: per_step.grads * t, hvps: per_step.hvps * t });
            }
        }
    }
}

#[test]
fn output_iterate_is_a_visited_state() {
    let c = noisy(MomentumKind::Sgdm, 3, 10, 40);
    let out = run(&c).unwrap();
    let mut sim = Simulation::new(c).unwrap();
    for _ in 0..out.output_index {
        sim.step().unwrap();
    }
    assert_eq!(sim.server().x, out.x_output);
}

#[test]
fn centralized_reference_matches_engine() {
    for kind in MomentumKind::ALL {
        let mut c = RunConfig::new(kind, 1, 10, 60);
        c.compressor = CompressorChoice::Identity;
        c.sigma_g = 0.1;
        c.problem = ProblemSpec::default_logreg();
        c.schedule = Schedule::for_kind(kind, 0.2, Granularity::PerEpoch { epoch_length: 5 }).unwrap();
        let reference = run_centralized_reference(&c).unwrap();
        let mut sim = Simulation::new(c).unwrap();
        for x_ref in &reference[1..] {
            sim.step().unwrap();
            for (a, b) in sim.server().x.as_slice().iter().zip(x_ref.as_slice()) {
                assert!((a - b).abs() <= 1e-12, "{kind}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn baseline_step_is_not_normalized() {
    let mut c = RunConfig::new(MomentumKind::Sgdm, 2, 6, 1);
    c.normalized = false;
    c.schedule = Schedule::constant(0.01, 1.0).unwrap();
    let mut sim = Simulation::new(c).unwrap();
    let x0 = sim.server().x.clone();
    let g0 = sim.server().g.clone();
    sim.step().unwrap();
    let moved = sim.server().x.sub(&x0).norm();
    assert!((moved - 0.01 * g0.norm()).abs() <= 1e-15);
}

#[test]
fn recording_stride_keeps_first_and_last_state() {
    let mut c = noisy(MomentumKind::Igt, 2, 6, 23);
    c.record_stride = 5;
    let out = run(&c).unwrap();
    let ts: Vec<usize> = out.trajectory.records.iter().map(|r| r.t).collect();
    assert_eq!(ts, vec![0, 5, 10, 15, 20, 23]);
    assert_eq!(out.trajectory.candidates.len(), 23);
}

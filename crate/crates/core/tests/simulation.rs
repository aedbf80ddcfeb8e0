use neat::arch::ArchConfig;
use neat::signature::SignatureMode;
use neat::sim::stats::FlitCategory;
use neat::sim::trace::{Trace, TraceEvent};
use neat::sim::{run_simulation, run_simulation_logged, AccessKind, SimError, SimOptions, SimProtocol};
use neat::sweep::{sweep, to_csv};
use neat::workload::{generate, verify_drf, WorkloadKind, WorkloadSpec, SHARED_BASE};

fn desk() -> ArchConfig {
    ArchConfig::desk_scale()
}

fn small(kind: WorkloadKind) -> WorkloadSpec {
    let mut s = WorkloadSpec::new(kind);
    s.iterations = s.iterations.min(40);
    s
}

#[test]
fn every_backend_returns_the_last_write() {
    let opts = SimOptions::default();
    for kind in WorkloadKind::ALL {
        let trace = generate(&small(kind)).unwrap();
        verify_drf(&trace).unwrap();
        for p in SimProtocol::ALL {
            let r = run_simulation(&trace, p, &desk(), &opts);
            assert!(r.is_ok(), "{kind} on {}: {}", p.name(), r.unwrap_err());
        }
    }
}

#[test]
fn consumer_sees_each_produced_value() {
    let mut spec = WorkloadSpec::new(WorkloadKind::ProducerConsumer);
    spec.cores = 2;
    spec.lines = 1;
    spec.iterations = 20;
    let trace = generate(&spec).unwrap();
    for p in SimProtocol::ALL {
        let (_, log) = run_simulation_logged(&trace, p, &desk(), &SimOptions::default()).unwrap();
        let produced: Vec<_> = log.iter().filter(|a| a.core == 0 && a.kind == AccessKind::Write).collect();
        let consumed: Vec<_> = log.iter().filter(|a| a.core == 1 && a.kind == AccessKind::Read).collect();
        assert_eq!(produced.len(), 20);
        assert_eq!(consumed.len(), 20);
        for (k, (w, r)) in produced.iter().zip(&consumed).enumerate() {
            assert_eq!(w.addr, SHARED_BASE);
            assert_eq!(r.values, w.values, "{}: handoff {k}", p.name());
            assert!(r.cycle > w.cycle);
        }
    }
}

#[test]
fn neat_never_invalidates_under_false_sharing() {
    let mut spec = WorkloadSpec::new(WorkloadKind::FalseSharing);
    spec.iterations = 2000;
    let trace = generate(&spec).unwrap();
    let opts = SimOptions::default();
    let mesi = run_simulation(&trace, SimProtocol::Mesi, &desk(), &opts).unwrap();
    assert!(mesi.flits.get(FlitCategory::Invalidation) > 0);
    for p in [SimProtocol::NeatBase, SimProtocol::NeatPi, SimProtocol::NeatFull] {
        let r = run_simulation(&trace, p, &desk(), &opts).unwrap();
        assert_eq!(r.flits.get(FlitCategory::Invalidation), 0, "{}", p.name());
        assert!(r.max_cycles() < mesi.max_cycles(), "{}", p.name());
    }
}

#[test]
fn signatures_spare_private_lines() {
    let mut spec = WorkloadSpec::new(WorkloadKind::Disjoint);
    spec.iterations = 20;
    let trace = generate(&spec).unwrap();
    let base = run_simulation(&trace, SimProtocol::NeatBase, &desk(), &SimOptions::default()).unwrap();
    assert!(base.self_inv_per_acquire() >= 10.0, "{}", base.self_inv_per_acquire());
    let exact = SimOptions { signatures: SignatureMode::Exact, ..SimOptions::default() };
    let full = run_simulation(&trace, SimProtocol::NeatFull, &desk(), &exact).unwrap();
    assert_eq!(full.self_inv_per_acquire(), 0.0);
}

#[test]
fn mesi_pays_nothing_for_synchronization() {
    let mut t = Trace::new(1, 64);
    t.push(0, TraceEvent::Acquire(0));
    t.push(0, TraceEvent::Release(0));
    let r = run_simulation(&t, SimProtocol::Mesi, &desk(), &SimOptions::default()).unwrap();
    assert_eq!(r.max_cycles(), 0);
}

#[test]
fn lock_cycle_is_a_deadlock() {
    let mut t = Trace::new(2, 64);
    t.push(0, TraceEvent::Acquire(0));
    t.push(0, TraceEvent::Acquire(1));
    t.push(1, TraceEvent::Acquire(1));
    t.push(1, TraceEvent::Nop(10));
    t.push(1, TraceEvent::Acquire(0));
    for p in SimProtocol::ALL {
        let e = run_simulation(&t, p, &desk(), &SimOptions::default()).unwrap_err();
        assert!(matches!(e, SimError::Deadlock(_)), "{e}");
        assert!(e.is_functional());
    }
}

#[test]
fn trace_text_round_trip_simulates_identically() {
    let trace = generate(&small(WorkloadKind::RandomDrf)).unwrap();
    let again = Trace::parse(&trace.to_text()).unwrap();
    for p in SimProtocol::ALL {
        let a = run_simulation(&trace, p, &desk(), &SimOptions::default()).unwrap();
        let b = run_simulation(&again, p, &desk(), &SimOptions::default()).unwrap();
        assert_eq!(a.csv_row("x", 0), b.csv_row("x", 0));
    }
}

#[test]
fn sweep_is_deterministic() {
    let specs: Vec<_> = WorkloadKind::ALL.into_iter().map(small).collect();
    let a = to_csv(&sweep(&specs, &SimProtocol::ALL, &desk(), &SimOptions::default()).unwrap());
    let b = to_csv(&sweep(&specs, &SimProtocol::ALL, &desk(), &SimOptions::default()).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 25);
}

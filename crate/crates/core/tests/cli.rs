use std::fs;
use std::process::{Command, Output};

fn neatsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neatsim")).args(args).output().expect("spawn neatsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&neatsim(&[])), 1);
    assert_eq!(code(&neatsim(&["frobnicate"])), 1);
    assert_eq!(code(&neatsim(&["check", "--protocol", "moesi"])), 1);
    assert_eq!(code(&neatsim(&["check", "--protocol", "mesi", "--mutate", "skip-commit"])), 1);
    assert_eq!(code(&neatsim(&["sim", "--protocol", "mesi", "--trace", "/nonexistent/t.trace"])), 1);
    assert_eq!(code(&neatsim(&["--help"])), 0);
}

#[test]
fn clean_check_exits_zero_and_mutant_exits_two() {
    let o = neatsim(&["check", "--protocol", "neat-base", "--lines", "1", "--bytes", "1", "--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("completed=true") && out.contains("violations=0"), "{out}");

    let o = neatsim(&["check", "--protocol", "neat-base", "--mutate", "skip-commit", "--workers", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("violation 1 [lastWrite]"));
}

#[test]
fn gen_then_sim() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("pc.trace");
    let csv = dir.path().join("pc.csv");
    let t = trace.to_str().unwrap();
    let o = neatsim(&["gen", "--workload", "producerConsumer", "--iterations", "10", "--seed", "3", "--out", t]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&trace).unwrap().starts_with("#neatsim-trace v1"));

    let o = neatsim(&["sim", "--protocol", "neat-full", "--trace", t, "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let o = neatsim(&["sim", "--protocol", "mesi", "--trace", t, "--set", "line_size=32"]);
    assert_eq!(code(&o), 1);
    let o = neatsim(&["sim", "--protocol", "mesi", "--trace", t, "--set", "bogus=1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn deadlocked_trace_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("dl.trace");
    fs::write(&trace, "#neatsim-trace v1 cores=2 linesize=64\nT0 ACQ 0\nT0 ACQ 1\nT1 ACQ 1\nT1 NOP 5\nT1 ACQ 0\n").unwrap();
    let o = neatsim(&["sim", "--protocol", "vips-unopt", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let run = |p: &std::path::Path| {
        neatsim(&[
            "sweep",
            "--workloads",
            "disjoint,falseSharing",
            "--protocols",
            "neat-base,mesi",
            "--iterations",
            "20",
            "--csv",
            p.to_str().unwrap(),
        ])
    };
    assert_eq!(code(&run(&a)), 0);
    assert_eq!(code(&run(&b)), 0);
    let (a, b) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 5);
}

#[test]
fn gen_list_names_every_workload() {
    let o = neatsim(&["gen", "--list"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    for w in ["disjoint", "sharedCounter", "falseSharing", "producerConsumer", "randomDrf"] {
        assert!(out.contains(w), "{out}");
    }
}

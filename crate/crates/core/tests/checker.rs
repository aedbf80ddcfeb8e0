use neat::checker::{
    check, explore, initial_labels, replay, CheckOptions, CheckProtocol, CheckRequest, Events, Label, MesiModel,
    Model, NeatModel, Op, ReplayEnd, ViolationKind,
};
use neat::message::Message;
use neat::neat::{Mutation, NeatVariant};

fn opts() -> CheckOptions {
    CheckOptions { workers: 1, ..CheckOptions::default() }
}

#[test]
fn initial_state_successors() {
    // read, write 0, write 1 per core, plus an acquire per core.
    let labels = initial_labels(&NeatModel::new(NeatVariant::Base, 1, 1));
    assert_eq!(labels.len(), 8, "{labels:?}");
    assert!(labels.contains(&Label::Program { core: 1, op: Op::Acquire }));
}

#[test]
fn every_protocol_is_clean_at_one_by_one() {
    for p in CheckProtocol::ALL {
        let r = check(&CheckRequest { options: opts(), ..CheckRequest::new(p, 1, 1) }).unwrap();
        assert!(r.completed, "{}", r.summary());
        assert!(r.violations.is_empty(), "{}", r.render_violations());
    }
}

#[test]
fn mechanisms_add_states_at_one_by_one() {
    let states = |v| explore(&NeatModel::new(v, 1, 1), &opts()).states;
    let (b, p, f) = (states(NeatVariant::Base), states(NeatVariant::PiOnly), states(NeatVariant::Full));
    assert!(b < p && p < f, "{b} {p} {f}");
    let mesi = explore(&MesiModel::new(1, 1), &opts()).states;
    assert!(mesi >= 5 * b, "mesi {mesi} vs base {b}");
}

#[test]
fn worker_count_does_not_change_the_count() {
    let m = NeatModel::new(NeatVariant::PiOnly, 1, 2);
    let one = explore(&m, &CheckOptions { workers: 1, ..CheckOptions::default() });
    let four = explore(&m, &CheckOptions { workers: 4, ..CheckOptions::default() });
    assert_eq!((one.states, one.transitions), (four.states, four.transitions));
}

#[test]
fn races_break_last_write_without_the_filter() {
    let off = CheckOptions { drf_filter: false, ..opts() };
    let r = explore(&NeatModel::new(NeatVariant::Base, 1, 1), &off);
    let v = r.violations.first().expect("a racy execution reads a stale value");
    assert_eq!(v.kind, ViolationKind::LastWrite);
    assert!(!v.trace.is_empty());
    assert!(matches!(replay(&NeatModel::new(NeatVariant::Base, 1, 1), &v.labels, false), ReplayEnd::Violation(..)));

    let r = explore(&MesiModel::new(1, 1), &off);
    assert!(r.completed && r.violations.is_empty(), "{}", r.render_violations());
}

#[test]
fn mutations_are_caught_and_replay() {
    for m in Mutation::ALL {
        let mut req = CheckRequest::new(CheckProtocol::Neat(m.natural_variant()), 1, 2);
        req.mutation = Some(m);
        req.options = opts();
        let r = check(&req).unwrap();
        let v = r.violations.first().unwrap_or_else(|| panic!("{m} survived: {}", r.summary()));
        let model = NeatModel::new(m.natural_variant(), 1, 2).with_mutation(Some(m));
        let first = replay(&model, &v.labels, true);
        assert!(matches!(first, ReplayEnd::Violation(..)), "{m}: {first:?}");
        assert_eq!(first, replay(&model, &v.labels, true));
    }
}

#[test]
fn skip_commit_witness_is_short() {
    let mut req = CheckRequest::new(CheckProtocol::Neat(NeatVariant::Base), 1, 1);
    req.mutation = Some(Mutation::SkipCommit);
    req.options = opts();
    let r = check(&req).unwrap();
    assert!(r.violations[0].labels.len() <= 12, "{}", r.render_violations());
}

#[test]
fn mesi_rejects_mutations() {
    let mut req = CheckRequest::new(CheckProtocol::Mesi, 1, 1);
    req.mutation = Some(Mutation::SkipCommit);
    assert!(check(&req).is_err());
    assert!(check(&CheckRequest::new(CheckProtocol::Mesi, 0, 1)).is_err());
}

struct Driver {
    m: NeatModel,
    s: <NeatModel as Model>::State,
}

impl Driver {
    fn op(&mut self, core: usize, op: Op) {
        self.s = self.m.apply_op(&self.s, core, op, &mut Events::new()).unwrap();
    }

    fn deliver_where(&mut self, pred: impl Fn(&Message) -> bool) -> bool {
        match self.s.net.iter().position(pred) {
            Some(i) => {
                self.s = self.m.deliver(&self.s, i as u16, &mut Events::new()).unwrap();
                true
            }
            None => false,
        }
    }

    fn settle_fetches(&mut self) {
        while self.deliver_where(|m| matches!(m, Message::GetLine { .. } | Message::Data { .. })) {}
    }

    fn put_all_ack_sent(&self) -> bool {
        self.s.net.iter().any(|m| matches!(m, Message::PutAllAck { .. }))
    }
}

#[test]
fn count_message_overtaking_its_writebacks() {
    let m = NeatModel::new(NeatVariant::Base, 2, 1);
    let mut d = Driver { s: m.initial(), m };
    d.op(0, Op::Acquire);
    for line in 0..2 {
        d.op(0, Op::Write { line, byte: 0, value: 1 });
        d.settle_fetches();
    }
    d.op(0, Op::Release);
    let wbs = d.s.net.iter().filter(|m| matches!(m, Message::WriteBack { cnt: 0, body: Some(_), .. })).count();
    assert_eq!(wbs, 2);

    assert!(d.deliver_where(|m| matches!(m, Message::WriteBack { cnt: 2, body: None, .. })));
    assert!(!d.put_all_ack_sent());
    assert_eq!(d.s.llc.pending_cnt[0], 2);
    assert!(d.deliver_where(|m| matches!(m, Message::WriteBack { body: Some(_), .. })));
    assert!(!d.put_all_ack_sent());
    assert_eq!(d.s.llc.wb_received[0], 1);
    assert!(d.deliver_where(|m| matches!(m, Message::WriteBack { body: Some(_), .. })));
    assert!(d.put_all_ack_sent());
    assert_eq!((d.s.llc.wb_received[0], d.s.llc.pending_cnt[0]), (0, 0));
    assert!(d.deliver_where(|m| matches!(m, Message::PutAllAck { .. })));
    assert!(d.s.net.is_empty());
    assert!(d.s.cores[0].ready());
}

#[test]
fn count_message_overtaking_is_explored_without_violation() {
    // Every interleaving of the count message and the write-backs, including
    // count-first, is reachable at 2 lines and none violates an assertion.
    let r = explore(&NeatModel::new(NeatVariant::Base, 2, 1), &CheckOptions { max_states: 300_000, ..opts() });
    assert!(r.violations.is_empty(), "{}", r.render_violations());
}

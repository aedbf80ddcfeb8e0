//! Injects each registered protocol bug, lets the checker find a
//! counterexample and replays it.
//!
//!     cargo run --release --example mutation_hunt

use neat::checker::{check, replay, CheckProtocol, CheckRequest, NeatModel, ReplayEnd};
use neat::neat::Mutation;

fn main() {
    for m in Mutation::ALL {
        let mut req = CheckRequest::new(CheckProtocol::Neat(m.natural_variant()), 1, 2);
        req.mutation = Some(m);
        let r = check(&req).expect("valid request");
        let Some(v) = r.violations.first() else {
            println!("{m}: survived ({})", r.summary());
            continue;
        };
        println!("{m}: {} after {} states, {:.2}s", v.kind, r.states, r.seconds);
        print!("{}", r.render_violations());
        let model = NeatModel::new(m.natural_variant(), 1, 2).with_mutation(Some(m));
        match replay(&model, &v.labels, true) {
            ReplayEnd::Violation(..) => println!("  replay reproduces it"),
            other => println!("  replay ended differently: {other:?}"),
        }
    }
}

//! Builds write signatures, shows their wire encoding and measures the Bloom
//! false-positive rate against the analytic estimate.
//!
//!     cargo run --release --example signatures [members]

use neat::signature::{WriteSignature, TAG_SPARSE};
use neat::types::LineAddr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BITS: usize = 1008;
const HASHES: usize = 4;

fn main() {
    let members: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sig = WriteSignature::bloom(BITS, HASHES);
    let mut exact = WriteSignature::exact();
    for _ in 0..members {
        let a = LineAddr(rng.gen());
        sig.insert(a);
        exact.insert(a);
    }
    let wire = sig.serialize();
    println!(
        "{members} lines: {} bits set, {} encoding of {} bytes, {} flits with the control byte",
        sig.population(),
        if wire[0] == TAG_SPARSE { "sparse" } else { "dense" },
        wire.len(),
        (wire.len() + 1).div_ceil(16)
    );
    assert_eq!(WriteSignature::deserialize(&wire, BITS, HASHES).unwrap(), sig);

    let (mut hits, mut probes) = (0u64, 0u64);
    for _ in 0..1_000_000 {
        let a = LineAddr(rng.gen());
        if !exact.may_contain(a) {
            probes += 1;
            hits += sig.may_contain(a) as u64;
        }
    }
    let k = HASHES as f64;
    let analytic = (1.0 - (-k * members as f64 / BITS as f64).exp()).powf(k);
    println!("false positives {:.5}, analytic {analytic:.5}", hits as f64 / probes as f64);
}

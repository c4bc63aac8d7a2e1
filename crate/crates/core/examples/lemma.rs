//! Compare empirical failure rates of the concentration lemmas with their
//! bounds.
//!
//! cargo run --release --example lemma

use relu_overfit::experiments::{verify_lemma, LemmaId, LemmaParams};

fn main() -> relu_overfit::Result<()> {
    for id in LemmaId::ALL {
        // the Gram bound is about m rows in a much larger dimension
        let params = match id {
            LemmaId::GramNorm => LemmaParams {
                d: 2000,
                m: 50,
                t: 3.0,
                ..LemmaParams::default()
            },
            _ => LemmaParams::default(),
        };
        let v = verify_lemma(id, params, 500, 1)?;
        println!(
            "{:<20} failures {:.4}  bound {:.4}  consistent {}",
            id.as_str(),
            v.empirical_failure_rate,
            v.theoretical_bound,
            v.consistent
        );
    }
    Ok(())
}

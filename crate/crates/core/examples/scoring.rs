//! Aligns hypotheses against references and breaks the error rate down into
//! substitutions, deletions and insertions, per character and per word.
//!
//!     cargo run --example scoring

use iris::eval::{wer, Unit, WerBreakdown};

fn main() -> iris::Result<()> {
    let pairs = [
        ("the cat sat", "the cat sat"),
        ("the cat sat", "a cat sat down"),
        ("noisy speech", "nosy speech"),
        ("abc", ""),
    ];
    for unit in [Unit::Char, Unit::Word] {
        let mut pooled = WerBreakdown::default();
        for (r, h) in pairs {
            let b = wer(r, h, unit)?;
            println!(
                "{unit:?} {r:>12} | {h:<14} S={} D={} I={} N={} -> {:.1}%",
                b.substitutions,
                b.deletions,
                b.insertions,
                b.ref_words,
                b.wer()
            );
            pooled = pooled + b;
        }
        println!("{unit:?} pooled {:.2}%\n", pooled.wer());
    }
    Ok(())
}

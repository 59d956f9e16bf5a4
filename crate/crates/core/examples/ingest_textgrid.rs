//! Turn the bundled TextGrid and Praat-style CSV tracks into an aligned
//! utterance and print its words.
//!
//! cargo run --example ingest_textgrid

use prosodike::datamodel::validate;
use prosodike::ingestion::{align_to_utterance, assemble_utterance, mark_emphasis, parse_textgrid, read_track_csv};

const SHIFT_MS: f64 = 10.0;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let doc = parse_textgrid(&std::fs::read_to_string(dir.join("the_cat_sat.TextGrid"))?)?;
    let mut skeleton = align_to_utterance(&doc, "phones", "words", SHIFT_MS)?;
    mark_emphasis(&doc, "emphasis", &mut skeleton, SHIFT_MS)?;

    let pitch = read_track_csv(&std::fs::read_to_string(dir.join("the_cat_sat.pitch.csv"))?, SHIFT_MS)?;
    let energy = read_track_csv(&std::fs::read_to_string(dir.join("the_cat_sat.energy.csv"))?, SHIFT_MS)?;
    let utt = assemble_utterance("the_cat_sat", skeleton, pitch, energy, 16_000, SHIFT_MS);

    let problems = validate(&utt);
    println!("{} frames, {} phones, {} problems", utt.num_frames(), utt.phones.len(), problems.len());
    for w in &utt.words {
        let phones: Vec<&str> = utt.phones[w.phone_start..w.phone_end].iter().map(|p| p.label.as_str()).collect();
        let mark = if w.emphasized == Some(true) { "*" } else { " " };
        println!("{mark} {:<6} {}", w.text, phones.join(" "));
    }
    Ok(())
}

//! Ingest a labelled CSV with custom column names, then split it 60/20/20,
//! first as is and then after dropping short reviews and capping each label.

use pex::datasets::{ingest, of_split, split, Format, Schema, Split, SplitSpec};
use pex::toy::{generate_corpus, CorpusSpec};

fn main() -> pex::Result<()> {
    let dir = std::env::temp_dir().join("pex-split-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("reviews.csv");
    let mut w = csv::Writer::from_path(&path).expect("writable temp dir");
    w.write_record(["review_id", "body", "gold"]).unwrap();
    for (i, e) in generate_corpus(&CorpusSpec::new(2400, 3))
        .iter()
        .enumerate()
    {
        let text = format!("{}{}", e.text, " and the room was clean".repeat(i % 4));
        w.write_record([e.id.as_str(), text.as_str(), e.label.as_str()])
            .unwrap();
    }
    w.flush().unwrap();

    let schema = Schema {
        id: "review_id".into(),
        text: "body".into(),
        label: "gold".into(),
        label_values: Vec::new(),
    };
    let examples = ingest(&path, Format::Csv, &schema)?;
    for (min_words, cap) in [(0, None), (13, Some(400))] {
        let spec = SplitSpec {
            min_words,
            per_class_cap: cap,
            ..SplitSpec::standard(42)
        };
        let out = split(examples.clone(), &spec)?;
        println!(
            "min_words {min_words}, cap {cap:?}: {} kept -> train {}, validation {}, test {}",
            out.len(),
            of_split(&out, Split::Train).len(),
            of_split(&out, Split::Validation).len(),
            of_split(&out, Split::Test).len()
        );
    }
    Ok(())
}

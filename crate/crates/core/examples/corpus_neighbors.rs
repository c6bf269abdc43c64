//! Ingests the synthetic corpus and lists the nearest and farthest documents for one
//! evidence paragraph under the term-overlap scorer.

use std::collections::HashSet;

use knowconflict::corpus::{ingest_corpus, IngestFormat, TermOverlapCosine};
use knowconflict::toy::ToyCorpus;

fn main() -> knowconflict::Result<()> {
    let dir = std::env::temp_dir().join("knowconflict-neighbors");
    std::fs::create_dir_all(&dir).expect("create temp dir");
    let (corpus, _) = ToyCorpus::new(50).write(&dir)?;

    let snapshot = ingest_corpus(&corpus, IngestFormat::GenericQa)?;
    let counts = snapshot.counts();
    println!("snapshot {} : {} questions, {} documents, {} rejects", &snapshot.snapshot_id()[..12], counts.questions, counts.documents, counts.rejects);

    let scorer = TermOverlapCosine::new();
    let query = "toy-007-ev";
    println!("\nquery: {}", snapshot.document(query).expect("toy doc").text);
    let exclude = HashSet::new();
    for (label, same) in [("same topic", true), ("different topic", false)] {
        println!("\n{label}:");
        for id in snapshot.topic_neighbors(query, same, 3, &exclude, &scorer)? {
            let d = snapshot.document(&id).expect("neighbor exists");
            println!("  {id:<12} [{}] {}", d.title, d.text);
        }
    }
    Ok(())
}

//! Asks a scripted model for its parametric answers, then picks or forges a conflicting
//! answer for each question.

use knowconflict::config::RunConfig;
use knowconflict::corpus::{ingest_corpus, IngestFormat};
use knowconflict::gateway::{Gateway, GatewayConfig, MockBackend};
use knowconflict::toy::ToyCorpus;
use knowconflict::{forge, probe};

fn main() -> knowconflict::Result<()> {
    let dir = std::env::temp_dir().join("knowconflict-forge");
    std::fs::create_dir_all(&dir).expect("create temp dir");
    let toy = ToyCorpus::new(10);
    let (corpus, _) = toy.write(&dir)?;
    let snapshot = ingest_corpus(&corpus, IngestFormat::GenericQa)?;

    let gateway = Gateway::new(Box::new(MockBackend::new(toy.script())), GatewayConfig::default())?;
    let cfg = RunConfig::default();

    println!("{:<8} {:<16} {:<16} {:<14} a_cf", "id", "realistic", "alpha", "kind");
    for q in snapshot.questions() {
        let alpha = probe::probe(q, &gateway, &cfg.probe_config())?;
        let shown = if alpha.abstained { "(abstained)".to_string() } else { alpha.alpha_text.clone() };
        match forge::forge(q, &alpha, &gateway, &cfg.retry_policy()) {
            Ok(c) => println!("{:<8} {:<16} {:<16} {:<14} {}", q.question_id, q.realistic_answers[0], shown, format!("{:?}", c.kind), c.text),
            Err(e) => println!("{:<8} {:<16} {:<16} failed: {e}", q.question_id, q.realistic_answers[0], shown),
        }
    }
    Ok(())
}

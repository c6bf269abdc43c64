//! Re-asks questions without context and measures how often a model repeats the
//! conflicting answer it was trained on. Here half the questions "leaked".

use knowconflict::corpus::{ingest_corpus, IngestFormat};
use knowconflict::eval::leakage_check;
use knowconflict::forge::{ConflictAnswer, ConflictKind};
use knowconflict::gateway::{Gateway, GatewayConfig, MockBackend};
use knowconflict::toy::ToyCorpus;

fn main() -> knowconflict::Result<()> {
    let dir = std::env::temp_dir().join("knowconflict-leakage");
    std::fs::create_dir_all(&dir).expect("create temp dir");
    let toy = ToyCorpus::new(20);
    let (corpus, _) = toy.write(&dir)?;
    let snapshot = ingest_corpus(&corpus, IngestFormat::GenericQa)?;

    let conflicts: Vec<ConflictAnswer> = toy
        .questions
        .iter()
        .map(|q| ConflictAnswer {
            question_id: q.question_id.clone(),
            text: q.rival.clone(),
            kind: ConflictKind::Counterfactual,
            alpha_ref: q.alpha.clone().unwrap_or_default(),
            audit: None,
        })
        .collect();
    let even = |id: &str| id.ends_with(['0', '2', '4', '6', '8']);
    let script = toy.probe_script(|q| Some(if even(&q.question_id) { q.rival.clone() } else { q.answer.clone() }));
    let gateway = Gateway::new(Box::new(MockBackend::new(script)), GatewayConfig::default())?;

    let report = leakage_check(&gateway, snapshot.questions(), &conflicts)?;
    println!(
        "leakage {}/{} = {}",
        report.matched,
        report.completed,
        report.rate.map_or("absent".into(), |r| format!("{r:.3}"))
    );
    Ok(())
}

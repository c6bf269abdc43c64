//! Builds, validates and summarizes a dataset from the bundled synthetic corpus and
//! scripted mock model. Pass an output directory, or a temporary one is used.

use knowconflict::config::RunConfig;
use knowconflict::corpus::IngestFormat;
use knowconflict::toy::ToyCorpus;
use knowconflict::{pipeline, validate};

fn main() -> knowconflict::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("knowconflict-toy"));
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out).expect("create output dir");

    let toy = ToyCorpus::new(50);
    let (corpus, script) = toy.write(&out)?;
    let cfg = RunConfig {
        corpus: Some(corpus),
        corpus_format: IngestFormat::GenericQa,
        backend: format!("mock:{}", script.display()),
        out: out.join("dataset"),
        gateway_backoff_ms: 0,
        ..RunConfig::default()
    };

    let started = std::time::Instant::now();
    let outcome = pipeline::cmd_build(&cfg)?;
    println!("built in {:.2?}", started.elapsed());
    print!("{}", outcome.summary());

    let report = validate::cmd_validate(&cfg.out)?;
    print!("{}", report.render());
    println!("dataset written to {}", cfg.out.display());
    Ok(())
}

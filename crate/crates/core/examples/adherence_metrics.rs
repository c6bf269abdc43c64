//! Judges a handful of model outputs, aggregates adherence and robustness with
//! bootstrap spread, and bins adherence by the model's prior confidence.

use std::collections::BTreeMap;

use knowconflict::context::{context_ref, ContextGolds, ContextKind};
use knowconflict::eval::{aggregate, judge, prior_analysis, ModelOutput};

fn main() -> knowconflict::Result<()> {
    let cases = [
        ("q1", ContextKind::Conflicting, "Lyon", "Paris", -0.3, "The capital is Lyon."),
        ("q2", ContextKind::Conflicting, "Mars", "Venus", -0.4, "It is Venus."),
        ("q3", ContextKind::Conflicting, "1921", "1919", -2.1, "That happened in 1921."),
        ("q4", ContextKind::Conflicting, "Ada Lovelace", "Alan Turing", -2.5, "Ada Lovelace wrote it."),
        ("q5", ContextKind::Irrelevant, "", "Nile", -0.2, "The longest river is the Nile."),
        ("q6", ContextKind::Irrelevant, "", "Everest", -1.0, "I'm not sure."),
    ];
    let mut judgments = Vec::new();
    let mut priors = BTreeMap::new();
    for (qid, kind, cf, alpha, prior, response) in cases {
        let golds = ContextGolds {
            conflict: (!cf.is_empty()).then(|| cf.to_string()),
            alpha: Some(alpha.to_string()),
            alpha_prior_logprob: Some(prior),
            ..ContextGolds::default()
        };
        let output = ModelOutput {
            question_id: qid.into(),
            context_ref: context_ref(qid, kind),
            response_text: response.into(),
            mean_token_logprob: None,
        };
        let j = judge(&output, &golds, kind).expect("golds present");
        println!("{:<18} {:?}", j.context_ref, j.verdict);
        priors.insert(qid.to_string(), prior);
        judgments.push(j);
    }

    let agg = aggregate(&judgments, 1000, 42)?;
    let show = |m: &Option<knowconflict::eval::MetricValue>| match m {
        Some(m) => format!("{:.3} ± {}", m.value, m.std.map_or("absent".into(), |s| format!("{s:.3}"))),
        None => "absent".into(),
    };
    println!("\nR_ad = {} (n={})", show(&agg.r_ad), agg.n_conflicting);
    println!("R_ro = {} (n={})", show(&agg.r_ro), agg.n_irrelevant);

    let analysis = prior_analysis(&judgments, &priors, 2)?;
    println!("\nprior bin            count  adherence");
    for b in &analysis.bins {
        println!("[{:>6.2}, {:>6.2}]   {:>5}  {}", b.lo, b.hi, b.count, b.rate.map_or("-".into(), |r| format!("{r:.2}")));
    }
    Ok(())
}

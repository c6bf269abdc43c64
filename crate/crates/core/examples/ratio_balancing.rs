//! How the ignorance/overinclusion ratio is met by downsampling, and what the two
//! response templates look like.

use knowconflict::pairs::{balance_counts, render, Template};

fn main() -> knowconflict::Result<()> {
    let (ignorance, overinclusion) = (280, 120);
    println!("available: cf_ignorance={ignorance} ir_overinclusion={overinclusion}\n");
    println!("{:>6}  {:>12}  {:>16}  {:>8}", "target", "cf_ignorance", "ir_overinclusion", "realized");
    for target in [0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0] {
        match balance_counts(ignorance, overinclusion, target) {
            Ok((a, b)) => println!("{target:>6}  {a:>12}  {b:>16}  {:>8.3}", a as f64 / b as f64),
            Err(e) => println!("{target:>6}  {e}"),
        }
    }
    if let Err(e) = balance_counts(ignorance, overinclusion, 1000.0) {
        println!("\n{e}");
    }

    println!();
    for t in [Template::Adherent, Template::Robust] {
        let r = render("the Eiffel Tower was designed by Gustave Eiffel.", t)?;
        println!("{t:?} ({} tokens): {}", r.token_length, r.text);
    }
    Ok(())
}

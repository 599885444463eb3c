//! Answer normalization, exact match, F1, candidate recall and an
//! evaluation report.

use effqa::eval::{candidate_recall, exact_match, f1, normalize_answer, EvalReport};

fn main() -> effqa::Result<()> {
    for s in ["The  Eiffel Tower!", "an apple a day", "rock-n-roll"] {
        println!("{s:?} -> {:?}", normalize_answer(s));
    }
    let golds = vec!["the cat".to_string(), "a black cat".to_string()];
    for pred in ["Cat", "cat sat", "black cat", "dog"] {
        println!("{pred:<10} EM {:.0}  F1 {:.3}", exact_match(pred, &golds)?, f1(pred, &golds)?);
    }

    let candidates = vec![vec!["cat", "mat"], vec!["blue", "sky"]];
    let answers = vec![vec!["the cat".to_string()], vec!["red".to_string()]];
    let r = candidate_recall(&candidates, &answers)?;
    println!("\ncandidate EM-recall {:.2}, F1-recall {:.2} (k = {})", r.em_recall, r.f1_max_mean, r.k);

    let report = EvalReport::from_predictions([
        ("q1", "cat", answers[0].as_slice()),
        ("q2", "blue", answers[1].as_slice()),
    ])?;
    println!("\n{}", report.summary());
    println!("{}", report.to_json());
    Ok(())
}

//! Answer, evidence and joint F1 on hand-written predictions.

use std::collections::BTreeSet;

use memqa::evalmetrics::{answer_prf, evidence_prf, joint_f1, normalize_answer};

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

fn main() {
    let cases: [(&[&str], &[&str], &[(usize, usize)], &[(usize, usize)]); 3] = [
        (&["the", "red", "car"], &["red", "car"], &[(0, 1), (2, 0)], &[(0, 1), (2, 0)]),
        (&["yes"], &["no"], &[(1, 0)], &[(1, 0), (3, 2)]),
        (&["kalo", "mi"], &["kalo", "mi"], &[(0, 0), (4, 1), (5, 0)], &[(0, 0), (4, 1)]),
    ];
    println!("{:>22} {:>22} {:>6} {:>6} {:>6}", "pred", "gold", "ans", "sup", "joint");
    for (pred, gold, psp, gsp) in cases {
        let a = answer_prf(&words(pred), &words(gold));
        let psp: BTreeSet<_> = psp.iter().copied().collect();
        let gsp: BTreeSet<_> = gsp.iter().copied().collect();
        let e = evidence_prf(&psp, &gsp);
        println!(
            "{:>22} {:>22} {:>6.3} {:>6.3} {:>6.3}",
            pred.join(" "),
            gold.join(" "),
            a.f1,
            e.f1,
            joint_f1(&a, &e)
        );
    }
    let norm = normalize_answer(&words(&["The", "Red,", "car!"]));
    println!("normalized: {norm:?}");
}

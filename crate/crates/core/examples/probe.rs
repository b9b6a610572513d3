use std::time::Instant;

use jetsym::invariance;

fn main() {
    for n in [1usize, 2] {
        let t0 = Instant::now();
        let det = invariance::extract_determining(n).unwrap();
        let t_extract = t0.elapsed();
        println!("n={}: {} extracted rows in {:?}", n, det.rows.len(), t_extract);
        for (k, _) in &det.rows {
            println!("    key {}", k);
        }
        let tab = invariance::tabulated_determining(&det.sp).unwrap();
        println!("n={}: {} tabulated rows", n, tab.len());
        let a: Vec<_> = det.rows.iter().map(|(_, e)| e.clone()).collect();
        let b: Vec<_> = tab.iter().map(|(_, e)| e.clone()).collect();
        let t1 = Instant::now();
        let cmp = invariance::compare_systems(&det.sp, &a, &b, &det.ansatz.unknowns, 2).unwrap();
        println!(
            "n={}: equivalent={} depth_a={} depth_b={} cmp in {:?}",
            n,
            cmp.equivalent,
            cmp.depth_a,
            cmp.depth_b,
            t1.elapsed()
        );
        if !cmp.equivalent {
            println!("  extracted-only: {:#?}", cmp.a_leftover);
            println!("  tabulated-only: {:#?}", cmp.b_leftover);
        }
        let t2 = Instant::now();
        let rep = invariance::verify_solution(&det, invariance::Mutation::None).unwrap();
        println!("n={}: solution pass={} in {:?}", n, rep.passed(), t2.elapsed());
        if !rep.passed() {
            for it in rep.items.iter().filter(|it| !it.is_zero) {
                println!("  NONZERO {} -> {}", it.id, it.detail);
            }
        }
        for m in [
            invariance::Mutation::SymmetricRotation,
            invariance::Mutation::ConjugatePhaseUnshifted,
        ] {
            let rep = invariance::verify_solution(&det, m).unwrap();
            println!("n={}: mutation {:?} pass={}", n, m, rep.passed());
        }
    }
}

// temporary: exhaustive placement oracles on acceptance rectangle shapes
use disperse::engine::ChoicePolicy;
use disperse::graphcore::LabelPolicy;
use disperse::verify::exhaustive_oracle_grids_labeled;

fn main() {
    let shape: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let (x, y, rot) = (shape[0], shape[1], shape[2]);
    let label = if rot == 1 {
        LabelPolicy::Rotated(42)
    } else {
        LabelPolicy::Canonical
    };
    let t0 = std::time::Instant::now();
    match exhaustive_oracle_grids_labeled(&[(x, y)], ChoicePolicy::LowestPort, label) {
        Ok(None) => println!("{x}x{y} {label:?}: ok in {:?}", t0.elapsed()),
        Ok(Some(cex)) => println!(
            "{x}x{y} COUNTEREXAMPLE ({label:?}): k={} placement={:?} violation: {}",
            cex.k, cex.placement, cex.violation
        ),
        Err(e) => println!("{x}x{y} FAULT ({label:?}): {e}"),
    }
}

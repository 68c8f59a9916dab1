//! Maximin Latin hypercubes and a nested coarse/fine design pair.

use seqdesign::design::{is_latin, lhs_maximin, min_distance, nested_pair};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lhs = lhs_maximin(10, 3, 2000, 9)?;
    println!(
        "LHS 10x3: min distance {:.4} (random start {:.4}), latin {}",
        lhs.score,
        lhs.initial_score,
        is_latin(&lhs.points)
    );
    let nested = nested_pair(&lhs.points, 20, 10)?;
    println!(
        "coarse design: {} points, the first {} are the fine ones; min distance {:.4}",
        nested.coarse.len(),
        lhs.points.len(),
        min_distance(&nested.coarse)
    );
    assert_eq!(nested.coarse[..10], lhs.points[..]);
    Ok(())
}

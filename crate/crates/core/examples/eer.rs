//! Equal error rate on the ROC convex hull.

use plda2x::scoring::{eer, roc_points};

fn main() -> plda2x::Result<()> {
    let tar = [2.1, 1.4, 0.9, 0.3, -0.2];
    let non = [0.5, -0.4, -1.0, -1.3, -2.2, 0.0];
    for (p_miss, p_fa) in roc_points(&tar, &non) {
        println!("P_miss {p_miss:.3}  P_fa {p_fa:.3}");
    }
    println!("EER {:.4}", eer(&tar, &non)?);
    println!("EER of identical scores {:.4}", eer(&[1.0], &[1.0])?);
    Ok(())
}

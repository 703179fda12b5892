//! Scalar loss functions: cross-entropy, focal loss and InfoNCE, including
//! the focal(γ = 0) = CE and uniform-InfoNCE = ln(K + 1) identities.

use fairfuse::losses::{classification_loss, cross_entropy, focal_loss, info_nce};

fn main() -> fairfuse::Result<()> {
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "p", "CE", "focal γ=0", "focal γ=2", "CE+focal");
    for p in [0.05, 0.3, 0.5, 0.7, 0.95] {
        println!(
            "{p:>6.2} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            cross_entropy(p, 1)?,
            focal_loss(p, 0.0)?,
            focal_loss(p, 2.0)?,
            classification_loss(p, 1, 2.0)?,
        );
    }

    println!("\nInfoNCE with positive score 2.0, temperature 0.5:");
    for negs in [vec![0.0; 3], vec![1.0, -1.0, 0.5], vec![2.0; 3]] {
        println!("  negatives {negs:?} -> {:.5}", info_nce(2.0, &negs, 0.5)?);
    }
    for k in [1usize, 7, 127] {
        let loss = info_nce(0.3, &vec![0.3; k], 1.0)?;
        println!("  K = {k:>3}: uniform scores give {loss:.12}, ln(K+1) = {:.12}", ((k + 1) as f64).ln());
    }
    Ok(())
}

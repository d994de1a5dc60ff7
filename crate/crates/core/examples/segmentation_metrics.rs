//! Overlap and surface metrics for a pair of hand-made masks, plus the
//! small-structure restriction used in evaluation.

use overseg::metrics::{evaluate, small_structure_pair, Mask};

fn disc(n: usize, cy: f64, cx: f64, r: f64) -> Vec<bool> {
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            (y - cy).powi(2) + (x - cx).powi(2) <= r * r
        })
        .collect()
}

fn union(a: Vec<bool>, b: Vec<bool>) -> Vec<bool> {
    a.into_iter().zip(b).map(|(x, y)| x || y).collect()
}

fn main() -> overseg::Result<()> {
    let n = 48;
    // Ground truth: one large disc and one speck; the prediction is shifted
    // and misses the speck.
    let gt = Mask::new(&[n, n], union(disc(n, 20.0, 20.0, 10.0), disc(n, 40.0, 40.0, 1.5)))?;
    let pred = Mask::new(&[n, n], disc(n, 21.0, 22.0, 10.0))?;

    let r = evaluate(&pred, &gt, &[1.0, 1.0])?;
    println!("full image:   {r:?}");

    if let Some((p, g)) = small_structure_pair(&pred, &gt, 30, 2)? {
        let s = evaluate(&p, &g, &[1.0, 1.0])?;
        println!(
            "small subset: dice {:.4}, sentinel distances {}",
            s.dice,
            s.is_sentinel()
        );
    }
    Ok(())
}

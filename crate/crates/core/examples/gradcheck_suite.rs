//! Runs the finite-difference gradient suite over every differentiable op.
//!
//! ```bash
//! cargo run --release --example gradcheck_suite -- 7
//! ```

fn main() -> overseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut failed = 0;
    for r in overseg::gradcheck::gradcheck_suite(seed)? {
        println!(
            "{:<20} coords {:>4}  max rel err {:.3e}  {}",
            r.name,
            r.coords,
            r.max_rel_err,
            if r.pass { "ok" } else { "FAIL" }
        );
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        std::process::exit(2);
    }
    Ok(())
}

//! Chance level of recall@k, analytic and simulated.
//!
//!     cargo run --release --example random_baseline

use histo_reid::evaluation::random_baseline;
use histo_reid::seed::rng_from;

fn main() -> histo_reid::Result<()> {
    let mut rng = rng_from(0);
    for (n, k, n_test) in [(244usize, 1usize, 300usize), (244, 5, 300), (10, 5, 20), (50, 3, 100)] {
        let labels: Vec<usize> = (0..n_test).map(|i| i % n).collect();
        let b = random_baseline(n, &labels, k, 2000, &mut rng)?;
        println!(
            "N={n:>3} k={k}: analytic {:.2}%  simulated {:.2}% (sd {:.2}%)  within 3 SE: {}",
            100.0 * b.analytic,
            100.0 * b.simulated_mean,
            100.0 * b.simulated_std,
            b.agrees(3.0)
        );
    }
    Ok(())
}

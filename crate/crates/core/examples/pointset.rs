//! Poisson configurations on the torus, cell-list queries, window counts
//! and the snapshot format.
//!
//! cargo run --example pointset

use spatial_bd::pointset::{read_snapshot, sample_poisson, write_snapshot, Torus, Window};
use spatial_bd::rng::stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let torus = Torus::new(2, 20.0)?;
    let mut cfg = sample_poisson(1.5, torus, 2.0, &mut stream(3, "example", 0));
    println!("{} points, density {:.3}", cfg.len(), cfg.density());

    let centre = [10.0, 10.0];
    let near = cfg.neighbors_within(&centre, 2.0, None)?;
    println!("{} points within 2 of {centre:?} (brute force: {})", near.len(), cfg.neighbors_within_brute(&centre, 2.0, None).len());

    let id = cfg.insert(&[19.9, 0.05])?;
    println!("wrapped neighbours of a corner point: {}", cfg.neighbors_within(&[0.1, 19.95], 0.5, None)?.contains(&id));

    let window = Window::cube(vec![0.0, 0.0], 5.0);
    println!("count in [0,5)^2: {} (expected {:.1})", cfg.window_count(&window)?, 1.5 * 25.0);

    let mut buf = Vec::new();
    write_snapshot(&mut buf, &cfg, 0.0, 3)?;
    let (header, rows) = read_snapshot(buf.as_slice())?;
    println!("snapshot round trip: {} rows, side {}", rows.len(), header.side);
    Ok(())
}

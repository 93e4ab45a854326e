//! Writes a small seeded dataset to a temp directory and reads it back.
//!
//! ```text
//! cargo run --example generate_dataset -- 10 5
//! ```

use coop_mtsp::bench::{generate_dataset, Dataset};

fn main() -> coop_mtsp::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let count: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);

    let data = generate_dataset(n, count, 7)?;
    let dir = std::env::temp_dir().join(format!("coop_mtsp_n{n}"));
    let files = data.save(&dir)?;
    println!("wrote {} instances to {}", files.len(), dir.display());

    let back = Dataset::load(&dir)?;
    assert_eq!(back.instances, data.instances);
    let first = &back.instances[0];
    for (k, task) in first.tasks.iter().enumerate() {
        let (a, b) = (task.pick.position, task.place.position);
        println!("task {k}: ({:+.3}, {:+.3}) -> ({:+.3}, {:+.3})", a[0], a[1], b[0], b[1]);
    }
    Ok(())
}

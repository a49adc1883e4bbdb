//! Writes the disc-vs-blank corpus: `make_synthetic <dir> [per_class] [side] [seed]`.

use std::path::PathBuf;

use attnbench::data::synthetic::{generate, SyntheticSpec};

fn main() -> attnbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let d = SyntheticSpec::default();
    let mut num = |default: u64| args.next().map_or(default, |s| s.parse().expect("a number"));
    let spec = SyntheticSpec {
        per_class: num(d.per_class as u64) as usize,
        side: num(d.side.into()) as u32,
        seed: num(d.seed),
    };
    generate(&dir, &spec)?;
    println!("wrote {} images under {}", 2 * spec.per_class, dir.display());
    Ok(())
}

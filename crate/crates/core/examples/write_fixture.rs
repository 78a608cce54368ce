use boxgt_core::synthetic::{write_fixture, FixtureSpec};

fn main() {
    let dir = std::env::args().nth(1).expect("usage: write_fixture DIR");
    std::fs::create_dir_all(&dir).unwrap();
    let manifest = write_fixture(std::path::Path::new(&dir), &FixtureSpec::default()).unwrap();
    println!("{}", manifest.display());
}

//! Level counts for a taxonomy CSV.
//!
//!     cargo run --example taxonomy_summary [path/to/taxonomy.csv]

use std::path::PathBuf;

use nurseforge::taxonomy::{load_taxonomy, load_taxonomy_skipping_duplicates};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/demo/taxonomy.csv"));

    match load_taxonomy(&path) {
        Ok(tax) => {
            let c = tax.summarize();
            println!("{}: {} paths", path.display(), tax.len());
            println!("  {c:?}");
        }
        Err(e) => {
            // Repeated rows are an error for the strict loader; show what the lenient one sees.
            println!("strict load failed: {e}");
            let (tax, skipped) = load_taxonomy_skipping_duplicates(&path).expect("readable csv");
            for s in &skipped {
                println!("  skipped {s:?}");
            }
            println!("  {:?} over {} unique paths", tax.summarize(), tax.len());
        }
    }
}

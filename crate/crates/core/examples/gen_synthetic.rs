//! Writes the bundled synthetic dataset.
//!
//! ```text
//! cargo run -p duocascade --example gen_synthetic -- <out-dir> [--images]
//! ```
//!
//! Produces `<out-dir>/model_a.jsonl` and `<out-dir>/model_b.jsonl`; with
//! `--images`, also one random 32×32 PGM per sample under `<out-dir>/images`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use duocascade::records::write_prediction_records;
use duocascade::synthetic::{generate, random_images, SyntheticParams};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data/synthetic".into()));
    let with_images = args.any(|a| a == "--images");

    let params = SyntheticParams::default();
    let (a, b) = generate(&params);
    fs::create_dir_all(&out)?;
    write_prediction_records(BufWriter::new(File::create(out.join("model_a.jsonl"))?), &a)?;
    write_prediction_records(BufWriter::new(File::create(out.join("model_b.jsonl"))?), &b)?;

    if with_images {
        let dir = out.join("images");
        fs::create_dir_all(&dir)?;
        for (record, image) in a.iter().zip(random_images(a.len(), 32, params.seed)) {
            fs::write(dir.join(format!("{}.pgm", record.id)), image.to_pnm())?;
        }
    }
    eprintln!("wrote {} samples to {}", a.len(), out.display());
    Ok(())
}

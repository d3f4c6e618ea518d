//! Generates the nonlinear 20-channel benchmark and writes it as CSV.

use d4::simulation::{generate_sim, SimSpec};

fn main() -> d4::Result<()> {
    let spec = SimSpec::default();
    let data = generate_sim(&spec, 1)?;
    for (i, ch) in data.channels.iter().take(4).enumerate() {
        println!("channel {i}: {:?} lag {} weights {:?}", ch.nonlinearity, ch.lag(), ch.weights);
    }
    let dir = std::env::temp_dir().join("d4-sim20");
    std::fs::create_dir_all(&dir).map_err(|e| d4::Error::Io { path: dir.clone(), source: e })?;
    let files = d4::io::write_dataset(&dir, &data.episode, &spec)?;
    for f in files {
        println!("wrote {} ({})", f.display(), &d4::io::sha256_file(&f)?[..16]);
    }
    Ok(())
}

//! Write a sampled module configuration and the fast campaign to `dir`.
//!
//! cargo run --example sample_configs -- configs

use std::path::PathBuf;

use parapack::montecarlo::CampaignSpec;
use parapack::params::save_config;

fn main() -> parapack::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    let spec = CampaignSpec::fast(1);
    let mut module = spec.module_config(0)?;
    module.n_cycles = 3;
    module.solver.record_every = 1;
    save_config(&module, &dir.join("module.toml"))?;
    parapack::io::write_atomic(&dir.join("campaign.toml"), spec.to_toml()?.as_bytes())?;
    println!("wrote {}/module.toml and {}/campaign.toml", dir.display(), dir.display());
    Ok(())
}

//! Writes the default configuration as TOML, edits it and reads it back.

use amdi_qcka::model::ProtocolConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = ProtocolConfig::default().to_toml_string();
    println!("{text}");
    let edited = text.replace("n_users = 3", "n_users = 4").replace("phase_locked = true", "phase_locked = false");
    let config = ProtocolConfig::from_toml_str(&edited)?;
    println!("users {}, phase locked {}, eta {:.4e}", config.n_users, config.timing.phase_locked, config.eta()?);
    match ProtocolConfig::from_toml_str("n_users = 1") {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}

//! Bits shared by the command-line tools.

use clap::Args;
use etapbox::crypto::AeadAlgorithm;
use etapbox::wire::{ChannelKeys, Role};

/// Tunnel key options. Both ends must agree; how the secret is agreed on
/// is outside the scope of these tools.
#[derive(Debug, Clone, Args)]
pub struct KeyArgs {
    /// Shared session secret.
    #[arg(long, env = "ETAPBOX_SECRET", default_value = "etapbox demo secret")]
    pub secret: String,
    /// Record cipher: aes256gcm or chacha20poly1305.
    #[arg(long, default_value = "aes256gcm", value_parser = parse_aead)]
    pub aead: AeadAlgorithm,
}

impl KeyArgs {
    pub fn keys(&self, role: Role) -> ChannelKeys {
        ChannelKeys::derive(self.secret.as_bytes(), self.aead, role)
    }
}

pub fn parse_aead(s: &str) -> Result<AeadAlgorithm, String> {
    match s {
        "aes256gcm" | "aes" => Ok(AeadAlgorithm::Aes256Gcm),
        "chacha20poly1305" | "chacha" => Ok(AeadAlgorithm::ChaCha20Poly1305),
        _ => Err(format!("unknown cipher {s:?}")),
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
}

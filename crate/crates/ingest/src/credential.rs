//! Transport credentials. Secrets are generated here, handed out once, and
//! only their salted SHA-256 digests are kept.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Mqtt,
    Http,
    Dropdir,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Mqtt => "mqtt",
            Transport::Http => "http",
            Transport::Dropdir => "dropdir",
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mqtt" => Ok(Transport::Mqtt),
            "http" => Ok(Transport::Http),
            "dropdir" => Ok(Transport::Dropdir),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

/// `sha256$<salt hex>$<digest hex>`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SecretHash(String);

impl fmt::Debug for SecretHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretHash(..)")
    }
}

fn digest(salt: &[u8], secret: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(secret.as_bytes());
    h.finalize().to_vec()
}

impl SecretHash {
    pub fn new(secret: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        SecretHash(format!("sha256${}${}", hex::encode(salt), hex::encode(digest(&salt, secret))))
    }

    pub fn verify(&self, secret: &str) -> bool {
        let mut parts = self.0.split('$');
        let (Some("sha256"), Some(salt), Some(expected), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return false;
        };
        let (Ok(salt), Ok(expected)) = (hex::decode(salt), hex::decode(expected)) else {
            return false;
        };
        let actual = digest(&salt, secret);
        // Constant-time comparison.
        actual.len() == expected.len()
            && actual.iter().zip(&expected).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// A fresh random secret: 32 random bytes, hex encoded.
pub fn generate_secret() -> String {
    let mut bytes = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCredential {
    pub thing_uuid: Uuid,
    pub username: String,
    pub secret_hash: SecretHash,
    pub transport: Transport,
}

impl IngestCredential {
    /// Issues a credential; the clear secret is returned alongside and is
    /// not recoverable afterwards.
    pub fn issue(thing_uuid: Uuid, transport: Transport) -> (Self, String) {
        let secret = generate_secret();
        let cred = IngestCredential {
            thing_uuid,
            username: thing_uuid.to_string(),
            secret_hash: SecretHash::new(&secret),
            transport,
        };
        (cred, secret)
    }

    pub fn verify(&self, secret: &str) -> bool {
        self.secret_hash.verify(secret)
    }
}

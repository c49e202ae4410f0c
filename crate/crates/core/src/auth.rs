//! Bearer tokens with two roles.
//!
//! A token reads `fst_<id>_<secret>`; only a salted hash of the secret is
//! kept. The bootstrap admin token from the config file is accepted as is.
//! [`Authenticator`] is the single seam another identity provider would
//! implement.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use fairstream_ingest::{generate_secret, SecretHash};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Registry writes and token management, plus everything an operator may do.
    Admin,
    /// Thing, dashboard and QC management.
    Operator,
}

impl Role {
    pub fn grants(self, required: Role) -> bool {
        self == Role::Admin || self == required
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: String,
    pub role: Role,
    pub secret_hash: SecretHash,
    pub created_at: DateTime<Utc>,
    pub revoked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Principal {
    pub token_id: String,
    pub role: Role,
}

pub const BOOTSTRAP_TOKEN_ID: &str = "bootstrap";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("missing bearer token")]
    MissingToken,
    #[error("invalid bearer token")]
    InvalidToken,
    #[error("token has been revoked")]
    RevokedToken,
    #[error("requires the {required:?} role")]
    Forbidden { required: Role },
}

impl AuthError {
    pub fn status(&self) -> u16 {
        match self {
            AuthError::Forbidden { .. } => 403,
            _ => 401,
        }
    }

    /// Machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            AuthError::MissingToken => "missing_token",
            AuthError::InvalidToken => "invalid_token",
            AuthError::RevokedToken => "revoked_token",
            AuthError::Forbidden { .. } => "insufficient_role",
        }
    }
}

pub trait Authenticator: Send + Sync {
    fn authenticate(&self, bearer: &str) -> Result<Principal, AuthError>;

    fn authorize(&self, bearer: Option<&str>, required: Option<Role>) -> Result<Principal, AuthError> {
        let principal = self.authenticate(bearer.ok_or(AuthError::MissingToken)?)?;
        match required {
            Some(role) if !principal.role.grants(role) => Err(AuthError::Forbidden { required: role }),
            _ => Ok(principal),
        }
    }
}

/// Issues a token; the clear value is returned once and not stored.
pub fn issue_token(role: Role) -> (TokenRecord, String) {
    let id = hex::encode(rand::thread_rng().gen::<[u8; 6]>());
    let secret = generate_secret();
    let record = TokenRecord {
        id: id.clone(),
        role,
        secret_hash: SecretHash::new(&secret),
        created_at: Utc::now(),
        revoked: false,
    };
    (record, format!("fst_{id}_{secret}"))
}

fn split_token(token: &str) -> Option<(&str, &str)> {
    token.strip_prefix("fst_")?.split_once('_')
}

/// Token check against the bootstrap hash and the issued tokens.
pub fn check_token(
    bootstrap: &SecretHash,
    tokens: &BTreeMap<String, TokenRecord>,
    bearer: &str,
) -> Result<Principal, AuthError> {
    if let Some((id, secret)) = split_token(bearer) {
        if let Some(record) = tokens.get(id) {
            if !record.secret_hash.verify(secret) {
                return Err(AuthError::InvalidToken);
            }
            if record.revoked {
                return Err(AuthError::RevokedToken);
            }
            return Ok(Principal {
                token_id: record.id.clone(),
                role: record.role,
            });
        }
    }
    if bootstrap.verify(bearer) {
        return Ok(Principal {
            token_id: BOOTSTRAP_TOKEN_ID.to_string(),
            role: Role::Admin,
        });
    }
    Err(AuthError::InvalidToken)
}

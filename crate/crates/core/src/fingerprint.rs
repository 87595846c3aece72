use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn of<T: Serialize + ?Sized>(value: &T) -> String {
    digest(&serde_json::to_vec(value).expect("value serializes"))
}

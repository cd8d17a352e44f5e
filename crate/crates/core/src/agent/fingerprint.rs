use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{ChatMessage, ContentPart, GenerationParams};
use crate::canonical::canonical_json;

/// Stable content hash of a request: roles, text parts, image hashes and
/// decoding parameters. Image paths and references are excluded, so the same
/// image stored in two places fingerprints identically.
pub fn fingerprint(messages: &[ChatMessage], params: &GenerationParams) -> String {
    let messages: Vec<Value> = messages
        .iter()
        .map(|m| {
            let parts: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text { text } => json!({ "text": text }),
                    ContentPart::Image { image_hash, .. } => json!({ "image": image_hash }),
                })
                .collect();
            json!({ "role": m.role, "parts": parts })
        })
        .collect();
    let doc = json!({
        "messages": messages,
        "params": {
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        }
    });
    hex::encode(Sha256::digest(canonical_json(&doc).as_bytes()))
}

//! Node identities and signatures.
//!
//! Two schemes share one interface: Ed25519, and a keyed-hash mode
//! (HMAC-SHA256) for large simulations where every verifier is trusted to
//! hold the keyring.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureScheme {
    Ed25519,
    KeyedHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Vehicle; reads blocks, never takes part in consensus.
    CavPassive,
    /// Edge node; worker, validator or miner.
    MecActive,
}

#[derive(Debug, thiserror::Error)]
pub enum CryptoError {
    #[error("malformed key for {0}")]
    MalformedKey(NodeId),
}

/// A node's key pair. The public key is the node's on-chain identifier.
#[derive(Clone)]
pub struct Identity {
    pub id: NodeId,
    pub kind: NodeKind,
    pub public_key: [u8; 32],
    scheme: SignatureScheme,
    secret: [u8; 32],
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("public_key", &hex::encode(self.public_key))
            .finish_non_exhaustive()
    }
}

impl Identity {
    /// Key pair derived from `seed` and the node id.
    pub fn generate(id: NodeId, kind: NodeKind, scheme: SignatureScheme, seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"osfl-node-key");
        h.update(seed.to_le_bytes());
        h.update(id.0.to_le_bytes());
        let secret: [u8; 32] = h.finalize().into();
        let public_key = match scheme {
            SignatureScheme::Ed25519 => SigningKey::from_bytes(&secret).verifying_key().to_bytes(),
            SignatureScheme::KeyedHash => Sha256::digest(secret).into(),
        };
        Self {
            id,
            kind,
            public_key,
            scheme,
            secret,
        }
    }

    pub fn scheme(&self) -> SignatureScheme {
        self.scheme
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        match self.scheme {
            SignatureScheme::Ed25519 => SigningKey::from_bytes(&self.secret).sign(msg).to_bytes().to_vec(),
            SignatureScheme::KeyedHash => hmac_tag(&self.secret, msg),
        }
    }
}

fn hmac_tag(key: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("any key length");
    mac.update(msg);
    mac.finalize().into_bytes().to_vec()
}

enum Verifying {
    Ed25519(VerifyingKey),
    KeyedHash([u8; 32]),
}

/// Verification material for every registered node.
#[derive(Default)]
pub struct Keyring {
    keys: BTreeMap<NodeId, Verifying>,
    public: BTreeMap<NodeId, [u8; 32]>,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, identity: &Identity) -> Result<(), CryptoError> {
        let v = match identity.scheme {
            SignatureScheme::Ed25519 => Verifying::Ed25519(
                VerifyingKey::from_bytes(&identity.public_key).map_err(|_| CryptoError::MalformedKey(identity.id))?,
            ),
            SignatureScheme::KeyedHash => Verifying::KeyedHash(identity.secret),
        };
        self.keys.insert(identity.id, v);
        self.public.insert(identity.id, identity.public_key);
        Ok(())
    }

    pub fn public_key(&self, id: NodeId) -> Option<&[u8; 32]> {
        self.public.get(&id)
    }

    /// False for unknown nodes, malformed signatures or any mismatch.
    pub fn verify(&self, id: NodeId, msg: &[u8], sig: &[u8]) -> bool {
        match self.keys.get(&id) {
            Some(Verifying::Ed25519(vk)) => match ed25519_dalek::Signature::from_slice(sig) {
                Ok(s) => vk.verify(msg, &s).is_ok(),
                Err(_) => false,
            },
            Some(Verifying::KeyedHash(secret)) => {
                let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("any key length");
                mac.update(msg);
                mac.verify_slice(sig).is_ok()
            }
            None => false,
        }
    }
}

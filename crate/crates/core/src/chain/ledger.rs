//! Transactions, blocks and the hash-chained ledger.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::crypto::{Identity, Keyring, NodeId};

/// A 32-byte digest, hex in JSON.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let a: [u8; 32] = v
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
        Ok(Hash32(a))
    }
}

/// Signature bytes, hex in JSON.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Sig(pub Vec<u8>);

impl fmt::Debug for Sig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", &hex::encode(&self.0)[..self.0.len().min(6) * 2])
    }
}

impl Serialize for Sig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Sig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Sig(hex::decode(&s).map_err(serde::de::Error::custom)?))
    }
}

pub fn sha256(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Hash32(h.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    #[serde(rename = "T_AD")]
    Ad,
    #[serde(rename = "T_AC")]
    Ac,
}

impl TxKind {
    fn code(self) -> u8 {
        match self {
            TxKind::Ad => 1,
            TxKind::Ac => 2,
        }
    }
}

/// A signed model update. The payload stays off the ledger export; blocks
/// carry its hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub kind: TxKind,
    pub author: NodeId,
    pub author_key: Hash32,
    pub round: u64,
    pub sample_count: u64,
    pub payload: Vec<u8>,
    pub payload_hash: Hash32,
    pub signature: Sig,
}

/// Bytes covered by a transaction signature.
pub fn tx_signing_bytes(kind: TxKind, payload_hash: &Hash32, round: u64, sample_count: u64) -> Vec<u8> {
    let mut v = Vec::with_capacity(56);
    v.extend_from_slice(b"osfl-tx");
    v.push(kind.code());
    v.extend_from_slice(&payload_hash.0);
    v.extend_from_slice(&round.to_le_bytes());
    v.extend_from_slice(&sample_count.to_le_bytes());
    v
}

impl Transaction {
    pub fn new(author: &Identity, kind: TxKind, round: u64, sample_count: u64, payload: Vec<u8>) -> Self {
        let payload_hash = sha256(&[&payload]);
        let signature = Sig(author.sign(&tx_signing_bytes(kind, &payload_hash, round, sample_count)));
        Self {
            kind,
            author: author.id,
            author_key: Hash32(author.public_key),
            round,
            sample_count,
            payload,
            payload_hash,
            signature,
        }
    }

    pub fn id(&self) -> Hash32 {
        tx_id(
            self.kind,
            self.author,
            &self.payload_hash,
            self.round,
            self.sample_count,
        )
    }

    /// Signature, author key and payload hash all check out.
    pub fn verify(&self, keyring: &Keyring) -> bool {
        keyring.public_key(self.author) == Some(&self.author_key.0)
            && sha256(&[&self.payload]) == self.payload_hash
            && keyring.verify(
                self.author,
                &tx_signing_bytes(self.kind, &self.payload_hash, self.round, self.sample_count),
                &self.signature.0,
            )
    }
}

fn tx_id(kind: TxKind, author: NodeId, payload_hash: &Hash32, round: u64, sample_count: u64) -> Hash32 {
    sha256(&[
        &tx_signing_bytes(kind, payload_hash, round, sample_count),
        &author.0.to_le_bytes(),
    ])
}

/// A transaction as recorded in a block, with its summed accuracy gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTx {
    pub id: Hash32,
    pub kind: TxKind,
    pub author: NodeId,
    pub author_key: Hash32,
    pub round: u64,
    pub sample_count: u64,
    pub payload_hash: Hash32,
    pub signature: Sig,
    pub acc_gain: f64,
}

impl ScoredTx {
    pub fn from_tx(tx: &Transaction, acc_gain: f64) -> Self {
        Self {
            id: tx.id(),
            kind: tx.kind,
            author: tx.author,
            author_key: tx.author_key,
            round: tx.round,
            sample_count: tx.sample_count,
            payload_hash: tx.payload_hash,
            signature: tx.signature.clone(),
            acc_gain,
        }
    }

    pub fn verify(&self, keyring: &Keyring) -> bool {
        self.id
            == tx_id(
                self.kind,
                self.author,
                &self.payload_hash,
                self.round,
                self.sample_count,
            )
            && keyring.public_key(self.author) == Some(&self.author_key.0)
            && keyring.verify(
                self.author,
                &tx_signing_bytes(self.kind, &self.payload_hash, self.round, self.sample_count),
                &self.signature.0,
            )
    }
}

/// Canonical block order: by kind, then author.
pub fn canonical_order(txs: &mut [ScoredTx]) {
    txs.sort_by_key(|t| (t.kind, t.author, t.id));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endorsement {
    pub validator: NodeId,
    pub signature: Sig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub hash: Hash32,
    pub prev_hash: Hash32,
    pub round: u64,
    /// Validator set of the round, ranked; the quorum is taken over it.
    pub validators: Vec<NodeId>,
    pub txs: Vec<ScoredTx>,
    pub miner: NodeId,
    pub miner_signature: Sig,
    pub endorsements: Vec<Endorsement>,
}

/// `ceil(2n / 3)` signatures, the miner's own included.
pub fn quorum(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

/// Digest over height, parent, round, validator set and scored txs.
///
/// Miner identity and signatures are excluded so that every honest
/// proposer at a height produces the same digest.
pub fn block_digest(height: u64, prev: &Hash32, round: u64, validators: &[NodeId], txs: &[ScoredTx]) -> Hash32 {
    let mut h = Sha256::new();
    h.update(b"osfl-block");
    h.update(height.to_le_bytes());
    h.update(prev.0);
    h.update(round.to_le_bytes());
    h.update((validators.len() as u32).to_le_bytes());
    for v in validators {
        h.update(v.0.to_le_bytes());
    }
    h.update((txs.len() as u32).to_le_bytes());
    for t in txs {
        h.update([t.kind.code()]);
        h.update(t.author.0.to_le_bytes());
        h.update(t.author_key.0);
        h.update(t.payload_hash.0);
        h.update(t.round.to_le_bytes());
        h.update(t.sample_count.to_le_bytes());
        h.update(&t.signature.0);
        h.update(t.acc_gain.to_bits().to_le_bytes());
    }
    Hash32(h.finalize().into())
}

fn endorse_bytes(digest: &Hash32) -> Vec<u8> {
    [b"osfl-endorse".as_slice(), &digest.0].concat()
}

fn propose_bytes(digest: &Hash32) -> Vec<u8> {
    [b"osfl-propose".as_slice(), &digest.0].concat()
}

impl Block {
    pub fn genesis(round: u64, validators: Vec<NodeId>) -> Self {
        let prev = Hash32::default();
        Self {
            height: 0,
            hash: block_digest(0, &prev, round, &validators, &[]),
            prev_hash: prev,
            round,
            validators,
            txs: Vec::new(),
            miner: NodeId(0),
            miner_signature: Sig::default(),
            endorsements: Vec::new(),
        }
    }

    /// Unendorsed candidate signed by `miner`.
    pub fn propose(
        miner: &Identity,
        height: u64,
        prev: Hash32,
        round: u64,
        validators: Vec<NodeId>,
        mut txs: Vec<ScoredTx>,
    ) -> Self {
        canonical_order(&mut txs);
        let hash = block_digest(height, &prev, round, &validators, &txs);
        Self {
            height,
            hash,
            prev_hash: prev,
            round,
            validators,
            txs,
            miner: miner.id,
            miner_signature: Sig(miner.sign(&propose_bytes(&hash))),
            endorsements: Vec::new(),
        }
    }

    pub fn recompute_hash(&self) -> Hash32 {
        block_digest(self.height, &self.prev_hash, self.round, &self.validators, &self.txs)
    }

    pub fn miner_signature_valid(&self, keyring: &Keyring) -> bool {
        keyring.verify(self.miner, &propose_bytes(&self.hash), &self.miner_signature.0)
    }

    pub fn endorse(&self, validator: &Identity) -> Endorsement {
        Endorsement {
            validator: validator.id,
            signature: Sig(validator.sign(&endorse_bytes(&self.hash))),
        }
    }

    pub fn endorsement_valid(&self, e: &Endorsement, keyring: &Keyring) -> bool {
        self.validators.contains(&e.validator)
            && keyring.verify(e.validator, &endorse_bytes(&self.hash), &e.signature.0)
    }

    /// Number of distinct validators with a valid endorsement.
    pub fn valid_endorsements(&self, keyring: &Keyring) -> usize {
        let mut seen: Vec<NodeId> = self
            .endorsements
            .iter()
            .filter(|e| self.endorsement_valid(e, keyring))
            .map(|e| e.validator)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn is_final(&self, keyring: &Keyring) -> bool {
        self.valid_endorsements(keyring) >= quorum(self.validators.len())
    }

    pub fn mean_gain(&self) -> f64 {
        if self.txs.is_empty() {
            0.0
        } else {
            self.txs.iter().map(|t| t.acc_gain).sum::<f64>() / self.txs.len() as f64
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChainError {
    #[error("block {height}: {what}")]
    Invalid { height: u64, what: &'static str },
    #[error("ledger line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Ledger {
    pub fn with_genesis(genesis: Block) -> Self {
        Self { blocks: vec![genesis] }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger has genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    /// Appends a finalised block that extends the tip.
    pub fn append(&mut self, block: Block, keyring: &Keyring) -> Result<(), ChainError> {
        check_link(self.tip(), &block)?;
        check_block(&block, keyring)?;
        self.blocks.push(block);
        Ok(())
    }

    /// Recomputes every digest, link and signature.
    pub fn verify(&self, keyring: &Keyring) -> Result<(), ChainError> {
        let Some(g) = self.blocks.first() else {
            return Err(ChainError::Invalid {
                height: 0,
                what: "empty ledger",
            });
        };
        if g.height != 0 || g.recompute_hash() != g.hash {
            return Err(ChainError::Invalid {
                height: 0,
                what: "genesis digest",
            });
        }
        for w in self.blocks.windows(2) {
            check_link(&w[0], &w[1])?;
            check_block(&w[1], keyring)?;
        }
        Ok(())
    }

    /// One compact JSON object per block.
    pub fn export_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for b in &self.blocks {
            serde_json::to_writer(&mut w, b)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn import_jsonl<R: BufRead>(r: R) -> Result<Self, ChainError> {
        let mut blocks = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| ChainError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            blocks.push(serde_json::from_str(&line).map_err(|e| ChainError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { blocks })
    }
}

fn check_link(prev: &Block, next: &Block) -> Result<(), ChainError> {
    if next.height != prev.height + 1 {
        return Err(ChainError::Invalid {
            height: next.height,
            what: "height does not extend tip",
        });
    }
    if next.prev_hash != prev.hash {
        return Err(ChainError::Invalid {
            height: next.height,
            what: "previous hash mismatch",
        });
    }
    Ok(())
}

fn check_block(b: &Block, keyring: &Keyring) -> Result<(), ChainError> {
    let bad = |what| Err(ChainError::Invalid { height: b.height, what });
    if b.recompute_hash() != b.hash {
        return bad("digest mismatch");
    }
    if !b.miner_signature_valid(keyring) {
        return bad("miner signature");
    }
    if !b.validators.contains(&b.miner) {
        return bad("miner outside validator set");
    }
    if b.endorsements.iter().any(|e| !b.endorsement_valid(e, keyring)) {
        return bad("endorsement signature");
    }
    if !b.is_final(keyring) {
        return bad("endorsements below quorum");
    }
    if b.txs.iter().any(|t| !t.verify(keyring)) {
        return bad("transaction signature");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::crypto::{NodeKind, SignatureScheme};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nodes(n: u32) -> (Vec<Identity>, Keyring) {
        let ids: Vec<Identity> = (0..n)
            .map(|i| Identity::generate(NodeId(i), NodeKind::MecActive, SignatureScheme::KeyedHash, 1))
            .collect();
        let mut k = Keyring::new();
        for i in &ids {
            k.register(i).unwrap();
        }
        (ids, k)
    }

    fn finalised_chain(len: u64) -> (Ledger, Keyring) {
        let (ids, k) = nodes(6);
        let vals: Vec<NodeId> = (0..4).map(NodeId).collect();
        let mut l = Ledger::with_genesis(Block::genesis(0, vals.clone()));
        for h in 1..=len {
            let txs = vec![
                ScoredTx::from_tx(&Transaction::new(&ids[5], TxKind::Ac, h, 10, vec![h as u8; 8]), 0.25),
                ScoredTx::from_tx(&Transaction::new(&ids[4], TxKind::Ad, h, 12, vec![1, 2, 3]), -0.5),
            ];
            let mut b = Block::propose(&ids[0], h, l.tip().hash, h, vals.clone(), txs);
            for v in &ids[..3] {
                let e = b.endorse(v);
                b.endorsements.push(e);
            }
            l.append(b, &k).unwrap();
        }
        (l, k)
    }

    #[test]
    fn quorum_values() {
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(7), 5);
        assert_eq!(quorum(1), 1);
        assert_eq!(quorum(3), 2);
        for n in 1..100 {
            // oracle: smallest q with 3q >= 2n
            let q = (0..=n).find(|q| 3 * q >= 2 * n).unwrap();
            assert_eq!(quorum(n), q);
        }
    }

    #[test]
    fn canonical_tx_order() {
        let (ids, _) = nodes(6);
        let txs: Vec<ScoredTx> = [
            (5, TxKind::Ac),
            (2, TxKind::Ad),
            (4, TxKind::Ad),
            (1, TxKind::Ac),
            (3, TxKind::Ad),
        ]
        .iter()
        .map(|&(a, k)| ScoredTx::from_tx(&Transaction::new(&ids[a], k, 1, 1, vec![]), 0.0))
        .collect();
        let b = Block::propose(&ids[0], 1, Hash32::default(), 1, vec![NodeId(0)], txs.clone());
        let order: Vec<(TxKind, u32)> = b.txs.iter().map(|t| (t.kind, t.author.0)).collect();
        assert_eq!(
            order,
            vec![
                (TxKind::Ad, 2),
                (TxKind::Ad, 3),
                (TxKind::Ad, 4),
                (TxKind::Ac, 1),
                (TxKind::Ac, 5)
            ]
        );
        let mut rev = txs;
        rev.reverse();
        let b2 = Block::propose(&ids[1], 1, Hash32::default(), 1, vec![NodeId(0)], rev);
        assert_eq!(b.hash, b2.hash);
    }

    #[test]
    fn chain_verifies_and_round_trips() {
        let (l, k) = finalised_chain(3);
        l.verify(&k).unwrap();
        let mut buf = Vec::new();
        l.export_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), 4);
        let back = Ledger::import_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn below_quorum_rejected() {
        let (ids, k) = nodes(4);
        let vals: Vec<NodeId> = (0..4).map(NodeId).collect();
        let mut l = Ledger::with_genesis(Block::genesis(0, vals.clone()));
        let mut b = Block::propose(&ids[0], 1, l.tip().hash, 1, vals, vec![]);
        for v in &ids[..2] {
            let e = b.endorse(v);
            b.endorsements.push(e);
        }
        // a duplicated endorsement does not count twice
        b.endorsements.push(b.endorsements[1].clone());
        assert!(matches!(
            l.append(b.clone(), &k),
            Err(ChainError::Invalid {
                what: "endorsements below quorum",
                ..
            })
        ));
        let e = b.endorse(&ids[3]);
        b.endorsements.push(e);
        l.append(b, &k).unwrap();
    }

    #[test]
    fn fork_and_bad_parent_rejected() {
        let (l, k) = finalised_chain(2);
        let mut l2 = l.clone();
        let mut b = l.blocks()[2].clone();
        b.height = 3;
        assert!(l2.append(b, &k).is_err());
    }

    #[test]
    fn single_byte_tamper_detected() {
        let (l, k) = finalised_chain(2);
        let mut buf = Vec::new();
        l.export_jsonl(&mut buf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut tried = 0;
        while tried < 300 {
            let mut t = buf.clone();
            let i = rng.random_range(0..t.len());
            let c: u8 = rng.random_range(0x20..0x7f);
            if t[i] == c || t[i] == b'\n' {
                continue;
            }
            t[i] = c;
            tried += 1;
            match Ledger::import_jsonl(t.as_slice()) {
                Err(_) => {}
                Ok(back) if back == l => {} // semantically identical, not a tamper
                Ok(back) => assert!(back.verify(&k).is_err(), "undetected tamper at byte {i}"),
            }
        }
    }
}

//! Canonical byte encodings.
//!
//! All integers are little-endian.
//!
//! Header (80 bytes):
//!
//! | offset | len | field            |
//! |--------|-----|------------------|
//! | 0      | 32  | hash_prev_block  |
//! | 32     | 32  | hash_merkle_root |
//! | 64     | 8   | bits (u64)       |
//! | 72     | 8   | nonce (u64)      |
//!
//! Transaction: `u32` input count, then per input the 32-byte previous
//! txid, `u32` output index, `u32` script length and script bytes; then a
//! `u32` output count and per output a `u64` amount, `u32` script length
//! and script bytes.
//!
//! Block: header, `u64` nominal size, one tag byte (`0` placement-only,
//! `1` transactions) and, for tag `1`, a `u32` transaction count followed
//! by the transactions.
//!
//! Chain file: the 8-byte magic `KRKSCHN1`, a `u64` block count, then each
//! block as a `u32` length prefix and the block encoding.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{
    Block, BlockContent, BlockHeader, Hash256, OutPoint, Transaction, TxIn, TxOut, HEADER_LEN,
};

pub const CHAIN_MAGIC: &[u8; 8] = b"KRKSCHN1";

const TAG_PLACEMENT: u8 = 0;
const TAG_TRANSACTIONS: u8 = 1;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("unknown block content tag {0}")]
    BadTag(u8),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("bad chain file magic")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_header(header: &BlockHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[..32].copy_from_slice(&header.hash_prev_block.0);
    out[32..64].copy_from_slice(&header.hash_merkle_root.0);
    out[64..72].copy_from_slice(&header.bits.to_le_bytes());
    out[72..80].copy_from_slice(&header.nonce.to_le_bytes());
    out
}

pub fn decode_header(bytes: &[u8]) -> Result<BlockHeader, DecodeError> {
    let mut r = Reader::new(bytes);
    let header = r.header()?;
    r.finish()?;
    Ok(header)
}

fn put_script(out: &mut Vec<u8>, script: &[u8]) {
    out.extend_from_slice(&(script.len() as u32).to_le_bytes());
    out.extend_from_slice(script);
}

fn put_transaction(out: &mut Vec<u8>, tx: &Transaction) {
    out.extend_from_slice(&(tx.inputs.len() as u32).to_le_bytes());
    for input in &tx.inputs {
        out.extend_from_slice(&input.prev_out.txid.0);
        out.extend_from_slice(&input.prev_out.index.to_le_bytes());
        put_script(out, &input.unlocking_script);
    }
    out.extend_from_slice(&(tx.outputs.len() as u32).to_le_bytes());
    for output in &tx.outputs {
        out.extend_from_slice(&output.amount.to_le_bytes());
        put_script(out, &output.locking_script);
    }
}

pub fn encode_transaction(tx: &Transaction) -> Vec<u8> {
    let mut out = Vec::new();
    put_transaction(&mut out, tx);
    out
}

pub fn decode_transaction(bytes: &[u8]) -> Result<Transaction, DecodeError> {
    let mut r = Reader::new(bytes);
    let tx = r.transaction()?;
    r.finish()?;
    Ok(tx)
}

pub fn encode_block(block: &Block) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 9);
    out.extend_from_slice(&encode_header(&block.header));
    out.extend_from_slice(&block.nominal_size.to_le_bytes());
    match &block.content {
        BlockContent::PlacementOnly => out.push(TAG_PLACEMENT),
        BlockContent::Transactions(txs) => {
            out.push(TAG_TRANSACTIONS);
            out.extend_from_slice(&(txs.len() as u32).to_le_bytes());
            for tx in txs {
                put_transaction(&mut out, tx);
            }
        }
    }
    out
}

pub fn decode_block(bytes: &[u8]) -> Result<Block, DecodeError> {
    let mut r = Reader::new(bytes);
    let header = r.header()?;
    let nominal_size = r.u64()?;
    let content = match r.u8()? {
        TAG_PLACEMENT => BlockContent::PlacementOnly,
        TAG_TRANSACTIONS => {
            let n = r.u32()?;
            let mut txs = Vec::new();
            for _ in 0..n {
                txs.push(r.transaction()?);
            }
            BlockContent::Transactions(txs)
        }
        tag => return Err(DecodeError::BadTag(tag)),
    };
    r.finish()?;
    Ok(Block {
        header,
        content,
        nominal_size,
    })
}

/// Writes a chain as a length-prefixed binary dump.
pub fn write_chain<W: Write>(mut w: W, blocks: &[Block]) -> io::Result<()> {
    w.write_all(CHAIN_MAGIC)?;
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for block in blocks {
        let bytes = encode_block(block);
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(&bytes)?;
    }
    w.flush()
}

pub fn read_chain<R: Read>(mut r: R) -> Result<Vec<Block>, DecodeError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHAIN_MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let count = u64::from_le_bytes(word);
    let mut blocks = Vec::new();
    let mut len = [0u8; 4];
    for _ in 0..count {
        r.read_exact(&mut len)?;
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut buf)?;
        blocks.push(decode_block(&buf)?);
    }
    Ok(blocks)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<Hash256, DecodeError> {
        Ok(Hash256(self.take(32)?.try_into().unwrap()))
    }

    fn script(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn header(&mut self) -> Result<BlockHeader, DecodeError> {
        Ok(BlockHeader {
            hash_prev_block: self.hash()?,
            hash_merkle_root: self.hash()?,
            bits: self.u64()?,
            nonce: self.u64()?,
        })
    }

    fn transaction(&mut self) -> Result<Transaction, DecodeError> {
        let n_in = self.u32()?;
        let mut inputs = Vec::new();
        for _ in 0..n_in {
            let txid = self.hash()?;
            let index = self.u32()?;
            inputs.push(TxIn {
                prev_out: OutPoint { txid, index },
                unlocking_script: self.script()?,
            });
        }
        let n_out = self.u32()?;
        let mut outputs = Vec::new();
        for _ in 0..n_out {
            let amount = self.u64()?;
            outputs.push(TxOut {
                amount,
                locking_script: self.script()?,
            });
        }
        Ok(Transaction::new(inputs, outputs))
    }

    fn finish(&self) -> Result<(), DecodeError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

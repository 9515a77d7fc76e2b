use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use super::{Block, OutPoint, Transaction, TxOut, BLOCK_REWARD};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("input {input} spends missing output {outpoint:?}")]
    MissingUtxo { input: usize, outpoint: OutPoint },
    #[error("input {input} unlocking script does not match")]
    ScriptMismatch { input: usize },
    #[error("outputs ({outputs}) exceed inputs ({inputs})")]
    ValueOverspend { inputs: u64, outputs: u64 },
    #[error("input {input} spends an output already spent by this transaction")]
    DuplicateInput { input: usize },
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("transaction has no outputs")]
    NoOutputs,
    #[error("coinbase outside position 0, or missing at position 0")]
    CoinbasePosition,
    #[error("coinbase pays {paid}, allowed {allowed}")]
    CoinbaseOverpay { paid: u64, allowed: u64 },
    #[error("amount overflow")]
    Overflow,
}

/// A transaction failure inside a block, tagged with its position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transaction {position}: {cause}")]
pub struct BlockTxError {
    pub position: usize,
    pub cause: TxError,
}

trait UtxoLookup {
    fn lookup(&self, outpoint: &OutPoint) -> Option<&TxOut>;
}

/// Pool of unspent outputs, keyed by outpoint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UtxoSet {
    entries: BTreeMap<OutPoint, TxOut>,
}

impl UtxoLookup for UtxoSet {
    fn lookup(&self, outpoint: &OutPoint) -> Option<&TxOut> {
        self.entries.get(outpoint)
    }
}

impl UtxoSet {
    pub fn new() -> UtxoSet {
        UtxoSet::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, outpoint: &OutPoint) -> Option<&TxOut> {
        self.entries.get(outpoint)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OutPoint, &TxOut)> {
        self.entries.iter()
    }

    pub fn total_value(&self) -> u128 {
        self.entries.values().map(|o| u128::from(o.amount)).sum()
    }

    /// Applies every transaction of `block` in order. Either the whole block
    /// applies or the set is left untouched.
    pub fn apply(&mut self, block: &Block) -> Result<(), BlockTxError> {
        let mut staged = Staged {
            base: self,
            spent: HashSet::new(),
            created: HashMap::new(),
        };
        let mut fees: u64 = 0;
        let mut coinbase_paid = None;
        for (position, tx) in block.transactions().iter().enumerate() {
            let err = |cause| BlockTxError { position, cause };
            if tx.is_coinbase() != (position == 0) {
                return Err(err(TxError::CoinbasePosition));
            }
            let fee = check_transaction(tx, &staged).map_err(err)?;
            if tx.is_coinbase() {
                coinbase_paid = Some(tx.output_value());
            } else {
                fees = fees.checked_add(fee).ok_or(err(TxError::Overflow))?;
            }
            for input in tx.inputs() {
                if !tx.is_coinbase() {
                    staged.spent.insert(input.prev_out);
                }
            }
            for (index, output) in tx.outputs().iter().enumerate() {
                let outpoint = OutPoint {
                    txid: tx.txid(),
                    index: index as u32,
                };
                staged.created.insert(outpoint, output.clone());
            }
        }
        if let Some(paid) = coinbase_paid {
            let allowed = BLOCK_REWARD.saturating_add(fees);
            if paid > allowed {
                return Err(BlockTxError {
                    position: 0,
                    cause: TxError::CoinbaseOverpay { paid, allowed },
                });
            }
        }
        let Staged { spent, created, .. } = staged;
        for outpoint in &spent {
            // Outputs created and spent inside the same block never reach the base set.
            self.entries.remove(outpoint);
        }
        for (outpoint, output) in created {
            if !spent.contains(&outpoint) {
                self.entries.insert(outpoint, output);
            }
        }
        Ok(())
    }
}

struct Staged<'a> {
    base: &'a UtxoSet,
    spent: HashSet<OutPoint>,
    created: HashMap<OutPoint, TxOut>,
}

impl UtxoLookup for Staged<'_> {
    fn lookup(&self, outpoint: &OutPoint) -> Option<&TxOut> {
        if self.spent.contains(outpoint) {
            return None;
        }
        self.created
            .get(outpoint)
            .or_else(|| self.base.lookup(outpoint))
    }
}

/// Returns the fee (inputs minus outputs) on success; zero for coinbases.
fn check_transaction(tx: &Transaction, utxo: &impl UtxoLookup) -> Result<u64, TxError> {
    if tx.outputs().is_empty() {
        return Err(TxError::NoOutputs);
    }
    let outputs = tx
        .outputs()
        .iter()
        .try_fold(0u64, |acc, o| acc.checked_add(o.amount))
        .ok_or(TxError::Overflow)?;
    if tx.is_coinbase() {
        return Ok(0);
    }
    if tx.inputs().is_empty() {
        return Err(TxError::NoInputs);
    }
    let mut seen = HashSet::new();
    let mut inputs = 0u64;
    for (i, input) in tx.inputs().iter().enumerate() {
        if !seen.insert(input.prev_out) {
            return Err(TxError::DuplicateInput { input: i });
        }
        let spent = utxo.lookup(&input.prev_out).ok_or(TxError::MissingUtxo {
            input: i,
            outpoint: input.prev_out,
        })?;
        if spent.locking_script != input.unlocking_script {
            return Err(TxError::ScriptMismatch { input: i });
        }
        inputs = inputs.checked_add(spent.amount).ok_or(TxError::Overflow)?;
    }
    if outputs > inputs {
        return Err(TxError::ValueOverspend { inputs, outputs });
    }
    Ok(inputs - outputs)
}

/// Checks `tx` against `utxo`: every input names a live output whose
/// locking script equals the input's unlocking script, and outputs do not
/// exceed inputs. Coinbases skip the input checks. Returns the fee.
pub fn verify_transaction(tx: &Transaction, utxo: &UtxoSet) -> Result<u64, TxError> {
    check_transaction(tx, utxo)
}

pub fn apply_block(utxo: &UtxoSet, block: &Block) -> Result<UtxoSet, BlockTxError> {
    let mut next = utxo.clone();
    next.apply(block)?;
    Ok(next)
}

/// Replays blocks in height order from an empty set. The error carries the
/// height of the failing block.
pub fn build_utxoset<'a, I>(blocks: I) -> Result<UtxoSet, (usize, BlockTxError)>
where
    I: IntoIterator<Item = &'a Block>,
{
    let mut utxo = UtxoSet::new();
    for (height, block) in blocks.into_iter().enumerate() {
        utxo.apply(block).map_err(|e| (height, e))?;
    }
    Ok(utxo)
}

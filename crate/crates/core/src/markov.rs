//! Order-k Markov next-symbol predictor with recursive fallback.
//!
//! Table `j` maps every observed `j`-symbol context to the counts of the
//! symbols that followed it. Prediction uses the longest context suffix that
//! has been observed, down to order 0 (the plain symbol frequencies).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use thiserror::Error;

use crate::trace::SymbolId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MarkovError {
    #[error("model has no observations yet")]
    ColdModel,
}

type Successors = BTreeMap<SymbolId, u64>;

#[derive(Debug, Clone)]
pub struct MarkovModel {
    order: usize,
    tables: Vec<HashMap<Vec<SymbolId>, Successors>>,
}

impl MarkovModel {
    pub fn new(order: usize) -> Self {
        MarkovModel {
            order,
            tables: vec![HashMap::new(); order + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Records that `next` followed `context`. Only the last `k` symbols of
    /// the context are used; every suffix order `0..=min(k, len)` is counted.
    pub fn update(&mut self, context: &[SymbolId], next: SymbolId) {
        let ctx = &context[context.len().saturating_sub(self.order)..];
        for j in 0..=ctx.len() {
            let key = ctx[ctx.len() - j..].to_vec();
            *self.tables[j]
                .entry(key)
                .or_default()
                .entry(next)
                .or_insert(0) += 1;
        }
    }

    /// Most frequent successor of the longest observed suffix of `context`.
    /// Ties go to the smaller symbol id.
    pub fn predict(&self, context: &[SymbolId]) -> Result<SymbolId, MarkovError> {
        let ctx = &context[context.len().saturating_sub(self.order)..];
        for j in (0..=ctx.len()).rev() {
            if let Some(succ) = self.tables[j].get(&ctx[ctx.len() - j..]) {
                return Ok(argmax(succ));
            }
        }
        Err(MarkovError::ColdModel)
    }

    /// Trains on every transition of `seq` (the first symbol is counted with
    /// an empty context).
    pub fn train_sequence(&mut self, seq: &[SymbolId]) {
        for t in 0..seq.len() {
            let lo = t.saturating_sub(self.order);
            self.update(&seq[lo..t], seq[t]);
        }
    }

    /// Count of `next` after `context` in the table of order `context.len()`.
    pub fn count(&self, context: &[SymbolId], next: SymbolId) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|s| s.get(&next))
            .copied()
            .unwrap_or(0)
    }

    /// Sum of all counts in the table of order `j`.
    pub fn table_total(&self, j: usize) -> u64 {
        self.tables[j].values().flat_map(|s| s.values()).sum()
    }

    /// Debug dump: `order<TAB>context<TAB>next<TAB>count`, context symbols
    /// space-separated, rows sorted.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (j, table) in self.tables.iter().enumerate() {
            let mut keys: Vec<_> = table.keys().collect();
            keys.sort();
            for key in keys {
                let ctx = key
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                for (next, count) in &table[key] {
                    writeln!(out, "{j}\t{ctx}\t{next}\t{count}")?;
                }
            }
        }
        Ok(())
    }
}

fn argmax(succ: &Successors) -> SymbolId {
    let mut best = (0, 0);
    for (&sym, &count) in succ {
        if count > best.1 {
            best = (sym, count);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: SymbolId = 1;
    const B: SymbolId = 2;
    const C: SymbolId = 3;

    #[test]
    fn single_transition() {
        let mut m = MarkovModel::new(1);
        m.update(&[A], B);
        m.update(&[A], B);
        assert_eq!(m.count(&[A], B), 2);
        assert_eq!(m.predict(&[A]), Ok(B));
    }

    #[test]
    fn order_two_counts() {
        let mut m = MarkovModel::new(2);
        m.train_sequence(&[A, B, A, C, A, B, A, C]);
        assert_eq!(m.count(&[B, A], C), 2);
        assert_eq!(m.count(&[A, B], A), 2);
        assert_eq!(m.count(&[C, A], B), 1);
    }

    #[test]
    fn empty_context_updates_only_order_zero() {
        let mut m = MarkovModel::new(3);
        m.update(&[], A);
        assert_eq!(m.table_total(0), 1);
        assert_eq!(m.table_total(1), 0);
        assert_eq!(m.predict(&[C, C]), Ok(A));
    }

    #[test]
    fn alternation() {
        let mut m = MarkovModel::new(1);
        m.train_sequence(&[A, B, A, B, A, B]);
        assert_eq!(m.predict(&[A]), Ok(B));
    }

    #[test]
    fn falls_back_to_lower_order() {
        let mut m = MarkovModel::new(2);
        m.train_sequence(&[A, B, A, C, A, B, A, C]);
        // (C, B) never observed; order-1 context [B] was always followed by A.
        assert_eq!(m.count(&[C, B], A), 0);
        assert_eq!(m.predict(&[C, B]), Ok(A));
    }

    #[test]
    fn cold_model() {
        assert_eq!(
            MarkovModel::new(2).predict(&[A]),
            Err(MarkovError::ColdModel)
        );
    }

    #[test]
    fn ties_pick_smaller_id() {
        let mut m = MarkovModel::new(1);
        m.update(&[A], C);
        m.update(&[A], B);
        assert_eq!(m.predict(&[A]), Ok(B));
    }

    #[test]
    fn dump_format() {
        let mut m = MarkovModel::new(1);
        m.update(&[A], B);
        let mut buf = Vec::new();
        m.dump(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\t\t2\t1\n1\t1\t2\t1\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn table_totals_match_context_lengths(seq in prop::collection::vec(0u32..5, 1..80), k in 0usize..5) {
                let mut m = MarkovModel::new(k);
                m.train_sequence(&seq);
                for j in 0..=k {
                    let events = (0..seq.len()).filter(|&t| t >= j).count() as u64;
                    prop_assert_eq!(m.table_total(j), events);
                }
                for t in 1..seq.len() {
                    prop_assert!(m.predict(&seq[..t]).is_ok());
                }
            }

            #[test]
            fn relabeling_maps_unique_argmax(seq in prop::collection::vec(1u32..5, 2..60), shift in 1u32..10) {
                let perm = |s: SymbolId| (s + shift) % 7 + 1;
                let mut m = MarkovModel::new(2);
                let mut mp = MarkovModel::new(2);
                m.train_sequence(&seq);
                mp.train_sequence(&seq.iter().map(|&s| perm(s)).collect::<Vec<_>>());
                let ctx = &seq[seq.len() - 2..];
                let pctx: Vec<_> = ctx.iter().map(|&s| perm(s)).collect();
                // only compare when the deciding table has a unique maximum
                let j = (0..=2).rev().find(|&j| m.tables[j].contains_key(&ctx[2 - j..])).unwrap();
                let succ = &m.tables[j][&ctx[2 - j..]];
                let max = succ.values().max().unwrap();
                if succ.values().filter(|&c| c == max).count() == 1 {
                    prop_assert_eq!(mp.predict(&pctx).unwrap(), perm(m.predict(ctx).unwrap()));
                }
            }
        }
    }
}

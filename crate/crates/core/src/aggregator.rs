//! Behavior aggregation and feature-parallel user encoding.
//!
//! A user's `n`-th domain sequence becomes an `M_n × d` matrix of table
//! vectors, goes through the high blocks with positions restarting at 0, is
//! pooled and reduced by `F_d`. The `N` reduced vectors are concatenated in
//! domain order; no segment ever sees another domain's behaviors.

use std::ops::Range;
use std::sync::Arc;

use crate::atomic::{BehaviorEmbeddingTable, MissPolicy, TableError};
use crate::cost::CostProbe;
use crate::data::{AtomicBehavior, ItemProfile, UserProfile};
use crate::nn::{pool, pool_backward, Mlp, MlpCache, NnError, PoolMode, StackCache, Tensor2, TransformerStack};

/// `Q_un`: one reduced domain-sequence representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRepr {
    pub q: Vec<f64>,
}

/// `Q_u`: `N` sequence representations concatenated in domain order.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRepr {
    pub q_u: Vec<f64>,
    pub segment_dim: usize,
}

impl UserRepr {
    pub fn segment(&self, n: usize) -> &[f64] {
        &self.q_u[n * self.segment_dim..(n + 1) * self.segment_dim]
    }

    pub fn n_segments(&self) -> usize {
        self.q_u.len() / self.segment_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemRepr {
    pub q_i: Vec<f64>,
}

fn row_of(v: &[f32]) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(|x| f64::from(*x))
}

/// Stacks the table vectors of `seq` as rows, order preserved.
pub fn assemble_sequence(table: &BehaviorEmbeddingTable, seq: &[Arc<AtomicBehavior>]) -> Result<Tensor2, TableError> {
    let d = table.dim();
    let mut data = Vec::with_capacity(seq.len() * d);
    for b in seq {
        data.extend(row_of(table.require(b)?));
    }
    Ok(Tensor2::from_vec(seq.len(), d, data)?)
}

/// Like [`assemble_sequence`] but resolves misses through `policy`.
pub fn assemble_sequence_with(
    table: &mut BehaviorEmbeddingTable,
    seq: &[Arc<AtomicBehavior>],
    policy: MissPolicy<'_>,
) -> Result<Tensor2, TableError> {
    let d = table.dim();
    let mut data = Vec::with_capacity(seq.len() * d);
    for b in seq {
        data.extend(row_of(table.lookup(b, policy)?));
    }
    Ok(Tensor2::from_vec(seq.len(), d, data)?)
}

/// Input of one independently encoded segment.
#[derive(Clone, Debug)]
pub enum SegmentInput {
    /// Raw token ids; embedded with positions from 0.
    Tokens(Vec<u32>),
    /// Already-encoded rows (behavior vectors or cached token states);
    /// positions from 0 are added on top.
    Rows(Tensor2),
}

/// Cached forward of one segment for [`segment_backward`].
#[derive(Clone, Debug)]
pub struct SegmentCache {
    tokens: Option<Vec<u32>>,
    rows: usize,
    stack: StackCache,
    fd: MlpCache,
}

fn segment_input(stack: &TransformerStack, input: SegmentInput) -> Result<(Tensor2, Option<Vec<u32>>), NnError> {
    match input {
        SegmentInput::Tokens(t) => Ok((stack.embed(&t)?, Some(t))),
        SegmentInput::Rows(mut r) => {
            if r.rows() == 0 {
                return Err(NnError::EmptySequence);
            }
            if r.cols() != stack.d() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{} columns", stack.d()),
                    found: format!("{} columns", r.cols()),
                });
            }
            stack.add_positions(&mut r);
            Ok((r, None))
        }
    }
}

/// `F_d(F_p(stack[range](input)))`.
pub fn segment_forward(
    stack: &TransformerStack,
    fd: &Mlp,
    input: SegmentInput,
    range: Range<usize>,
    mode: PoolMode,
    probe: Option<&CostProbe>,
) -> Result<Vec<f64>, NnError> {
    let (x, _) = segment_input(stack, input)?;
    let h = stack.forward(range, &x, stack.attention(), probe)?;
    fd.forward(&pool(&h, mode)?, probe)
}

/// [`segment_forward`] keeping the activations.
pub fn segment_forward_train(
    stack: &TransformerStack,
    fd: &Mlp,
    input: SegmentInput,
    range: Range<usize>,
    mode: PoolMode,
    probe: Option<&CostProbe>,
) -> Result<(Vec<f64>, SegmentCache), NnError> {
    let (x, tokens) = segment_input(stack, input)?;
    let rows = x.rows();
    let (h, stack_cache) = stack.forward_train(range, &x, stack.attention(), probe)?;
    let (q, fd_cache) = fd.forward_train(&pool(&h, mode)?, probe)?;
    Ok((q, SegmentCache { tokens, rows, stack: stack_cache, fd: fd_cache }))
}

/// Backpropagates `dq` into `F_d`, the blocks of the cached range and, for
/// token segments, the token embedding. Row inputs receive no gradient.
pub fn segment_backward(
    stack: &TransformerStack,
    fd: &Mlp,
    cache: &SegmentCache,
    dq: &[f64],
    mode: PoolMode,
    stack_grad: &mut TransformerStack,
    fd_grad: &mut Mlp,
) {
    let dpooled = fd.backward(&cache.fd, dq, fd_grad);
    let dh = pool_backward(cache.rows, &dpooled, mode);
    let dx = stack.backward(&cache.stack, &dh, stack_grad);
    if let Some(tokens) = &cache.tokens {
        stack.embed_backward(tokens, &dx, stack_grad);
    }
}

/// `Q_un = F_d(F_p(LLM_high(E(s_un))))` for an assembled `M_n × d` input.
pub fn encode_sequence(
    stack: &TransformerStack,
    fd: &Mlp,
    rows: &Tensor2,
    mode: PoolMode,
    probe: Option<&CostProbe>,
) -> Result<SequenceRepr, NnError> {
    let q = segment_forward(stack, fd, SegmentInput::Rows(rows.clone()), stack.high_range(), mode, probe)?;
    Ok(SequenceRepr { q })
}

/// Encodes each domain sequence on its own and concatenates in domain order.
pub fn encode_user(
    stack: &TransformerStack,
    fd: &Mlp,
    table: &BehaviorEmbeddingTable,
    user: &UserProfile,
    mode: PoolMode,
    probe: Option<&CostProbe>,
) -> Result<UserRepr, TableError> {
    user.validate().map_err(|e| TableError::Corrupt(e.to_string()))?;
    let segment_dim = fd.spec.output_dim();
    let mut q_u = Vec::with_capacity(user.n_domains() * segment_dim);
    for seq in &user.sequences {
        let rows = assemble_sequence(table, seq)?;
        q_u.extend(encode_sequence(stack, fd, &rows, mode, probe)?.q);
    }
    Ok(UserRepr { q_u, segment_dim })
}

/// The title as a one-behavior sequence.
pub fn encode_item(
    stack: &TransformerStack,
    fd: &Mlp,
    table: &mut BehaviorEmbeddingTable,
    item: &ItemProfile,
    mode: PoolMode,
    policy: MissPolicy<'_>,
    probe: Option<&CostProbe>,
) -> Result<ItemRepr, TableError> {
    let rows = assemble_sequence_with(table, std::slice::from_ref(&item.title), policy)?;
    Ok(ItemRepr { q_i: encode_sequence(stack, fd, &rows, mode, probe)?.q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::build_table;
    use crate::data::{extract_atomic_set, Vocab};
    use crate::nn::{MlpSpec, StackConfig};

    struct Fixture {
        stack: TransformerStack,
        fd: Mlp,
        table: BehaviorEmbeddingTable,
        vocab: Vocab,
    }

    fn fixture() -> Fixture {
        let vocab = Vocab::parse("<unk>\na\nb\nc\nd\ne\nf\n").unwrap();
        let stack = TransformerStack::new(
            StackConfig { d: 8, heads: 2, l_low: 1, l_high: 1, vocab_size: vocab.len(), ..StackConfig::default() },
            1,
        )
        .unwrap();
        let mut rng = crate::rng::stream(1, "fd");
        let fd = Mlp::new(MlpSpec::new(vec![8, 6, 4], false).unwrap(), 0.3, &mut rng);
        let texts = ["a", "b c", "d", "e f", "a b", "c"];
        let users = [UserProfile {
            user_id: "u".into(),
            sequences: vec![texts.iter().map(|t| Arc::new(AtomicBehavior::new(t, &vocab).unwrap())).collect()],
        }];
        let table = build_table(&stack, &extract_atomic_set(&users, &[]), PoolMode::Mean, None).unwrap();
        Fixture { stack, fd, table, vocab }
    }

    fn seq(f: &Fixture, texts: &[&str]) -> Vec<Arc<AtomicBehavior>> {
        texts.iter().map(|t| Arc::new(AtomicBehavior::new(t, &f.vocab).unwrap())).collect()
    }

    #[test]
    fn rows_are_table_lookups_in_order() {
        let f = fixture();
        let m = assemble_sequence(&f.table, &seq(&f, &["d", "a", "a"])).unwrap();
        assert_eq!(m.rows(), 3);
        let expect: Vec<f64> = f.table.get("d").unwrap().iter().map(|x| f64::from(*x)).collect();
        assert_eq!(m.row(0), expect.as_slice());
        assert_eq!(m.row(1), m.row(2));
    }

    #[test]
    fn permuting_behaviors_permutes_rows() {
        let f = fixture();
        let texts = ["a", "b c", "d", "e f"];
        let perm = [2usize, 0, 3, 1];
        let base = assemble_sequence(&f.table, &seq(&f, &texts)).unwrap();
        let permuted: Vec<&str> = perm.iter().map(|&i| texts[i]).collect();
        let m = assemble_sequence(&f.table, &seq(&f, &permuted)).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            assert_eq!(m.row(r), base.row(i));
        }
    }

    #[test]
    fn missing_behavior_propagates() {
        let f = fixture();
        let err = assemble_sequence(&f.table, &seq(&f, &["a", "f f"])).unwrap_err();
        assert!(matches!(err, TableError::MissingBehavior(k) if k == "f f"));
    }

    #[test]
    fn single_behavior_pools_identically_and_shape_is_d_hat() {
        let f = fixture();
        let rows = assemble_sequence(&f.table, &seq(&f, &["b c"])).unwrap();
        let mean = encode_sequence(&f.stack, &f.fd, &rows, PoolMode::Mean, None).unwrap();
        let eos = encode_sequence(&f.stack, &f.fd, &rows, PoolMode::Eos, None).unwrap();
        assert_eq!(mean, eos);
        assert_eq!(mean.q.len(), 4);
        let rows = assemble_sequence(&f.table, &seq(&f, &["a", "d", "e f", "c", "a b"])).unwrap();
        assert_eq!(encode_sequence(&f.stack, &f.fd, &rows, PoolMode::Mean, None).unwrap().q.len(), 4);
    }

    #[test]
    fn high_stack_sees_behavior_count_not_tokens() {
        let f = fixture();
        let probe = CostProbe::new();
        let rows = assemble_sequence(&f.table, &seq(&f, &["b c", "e f", "a b"])).unwrap();
        encode_sequence(&f.stack, &f.fd, &rows, PoolMode::Mean, Some(&probe)).unwrap();
        let s = probe.snapshot();
        assert_eq!(s.low_invocations, 0);
        assert_eq!(s.high_lengths.keys().copied().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn user_segments_are_independent() {
        let f = fixture();
        let user = UserProfile { user_id: "u".into(), sequences: vec![seq(&f, &["a", "d"]), seq(&f, &["b c"]), seq(&f, &["e f", "c"])] };
        let q = encode_user(&f.stack, &f.fd, &f.table, &user, PoolMode::Mean, None).unwrap();
        assert_eq!(q.q_u.len(), 12);
        let mut changed = user.clone();
        changed.sequences[1] = seq(&f, &["a b", "a"]);
        let q2 = encode_user(&f.stack, &f.fd, &f.table, &changed, PoolMode::Mean, None).unwrap();
        assert_eq!(q.segment(0), q2.segment(0));
        assert_eq!(q.segment(2), q2.segment(2));
        assert_ne!(q.segment(1), q2.segment(1));

        let one = UserProfile { user_id: "v".into(), sequences: vec![seq(&f, &["a", "d"])] };
        let q1 = encode_user(&f.stack, &f.fd, &f.table, &one, PoolMode::Mean, None).unwrap();
        assert_eq!(q1.q_u, q.segment(0));
    }

    #[test]
    fn item_uses_table_or_encodes_on_miss() {
        let mut f = fixture();
        let item = ItemProfile { item_id: "i".into(), title: seq(&f, &["e f"]).remove(0) };
        let rows = assemble_sequence(&f.table, std::slice::from_ref(&item.title)).unwrap();
        let direct = encode_sequence(&f.stack, &f.fd, &rows, PoolMode::Mean, None).unwrap().q;
        let stack = f.stack.clone();
        let got = encode_item(&stack, &f.fd, &mut f.table, &item, PoolMode::Mean, MissPolicy::Error, None).unwrap();
        assert_eq!(got.q_i, direct);

        let unseen = ItemProfile { item_id: "j".into(), title: seq(&f, &["f a d"]).remove(0) };
        assert!(encode_item(&stack, &f.fd, &mut f.table, &unseen, PoolMode::Mean, MissPolicy::Error, None).is_err());
        let a = encode_item(&stack, &f.fd, &mut f.table, &unseen, PoolMode::Mean, MissPolicy::EncodeOnMiss(&stack), None)
            .unwrap();
        let b = encode_item(&stack, &f.fd, &mut f.table, &unseen, PoolMode::Mean, MissPolicy::Error, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.q_i.len(), 4);
    }
}

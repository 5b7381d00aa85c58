//! Dependency-tree sentiment data: parsing, validation, traversal, and a
//! synthetic generator for desk-scale experiments.
//!
//! File format (UTF-8 text): one token per line with TAB-separated fields
//! `index  form  head  relation  sentiment`; sentences separated by one
//! blank line; `sentiment` in {-1, 0, 1}; `index` 1-based ascending within
//! a sentence; `head` 0 marks the root. Lines starting with `#` are
//! comments.

use std::fmt;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Node-level sentiment label. Classes are indexed 0/1/2 in the order
/// negative, neutral, positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Sentiment::Negative),
            0 => Some(Sentiment::Neutral),
            1 => Some(Sentiment::Positive),
            _ => None,
        }
    }

    pub fn from_class(c: usize) -> Option<Self> {
        match c {
            0 => Some(Sentiment::Negative),
            1 => Some(Sentiment::Neutral),
            2 => Some(Sentiment::Positive),
            _ => None,
        }
    }

    /// Class index in {0, 1, 2}.
    pub fn class(self) -> usize {
        match self {
            Sentiment::Negative => 0,
            Sentiment::Neutral => 1,
            Sentiment::Positive => 2,
        }
    }

    /// Label value in {-1, 0, 1} as written in treebank files.
    pub fn value(self) -> i8 {
        match self {
            Sentiment::Negative => -1,
            Sentiment::Neutral => 0,
            Sentiment::Positive => 1,
        }
    }
}

pub const NUM_CLASSES: usize = 3;

/// One token of a sentence. `head` is the 1-based index of the governing
/// token, 0 for the root. `relation` is carried through but never used by
/// the model. `lemma` is an optional sixth column produced by an external
/// tool; when present it replaces the form for embedding lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub head: usize,
    pub relation: String,
    pub sentiment: Sentiment,
    pub lemma: Option<String>,
}

impl Token {
    /// The string the embedding layer looks up for this token.
    pub fn embedding_key(&self) -> &str {
        self.lemma.as_deref().unwrap_or(&self.form)
    }
}

/// A single sentence as a dependency tree, with a derived child map.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceTree {
    tokens: Vec<Token>,
    /// children[i] lists the children of token i+1, ascending.
    children: Vec<Vec<usize>>,
}

/// A constraint violated by a malformed tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    MultipleRoots { tokens: Vec<usize> },
    NoRoot,
    SelfLoop { token: usize },
    DanglingHead { token: usize, head: usize },
    Cycle { token: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MultipleRoots { tokens } => write!(f, "multiple roots at tokens {tokens:?}"),
            Violation::NoRoot => write!(f, "no root"),
            Violation::SelfLoop { token } => write!(f, "token {token} is its own head"),
            Violation::DanglingHead { token, head } => {
                write!(f, "token {token} has dangling head {head}")
            }
            Violation::Cycle { token } => {
                write!(f, "token {token} has no path to the root (cycle)")
            }
        }
    }
}

/// All violations found by [`SentenceTree::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct TreeReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for TreeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl SentenceTree {
    /// Builds the tree and its child map. Heads outside 1..=n produce no
    /// child edges; [`validate`](Self::validate) reports them.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let n = tokens.len();
        let mut children = vec![Vec::new(); n];
        for t in &tokens {
            if t.head >= 1 && t.head <= n && t.head != t.index {
                children[t.head - 1].push(t.index);
            }
        }
        SentenceTree { tokens, children }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Children of token `index` (1-based), in ascending order.
    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index - 1]
    }

    /// The unique root index, if the tree has exactly one.
    pub fn root(&self) -> Option<usize> {
        let mut roots = self.tokens.iter().filter(|t| t.head == 0);
        match (roots.next(), roots.next()) {
            (Some(r), None) => Some(r.index),
            _ => None,
        }
    }

    /// Accepts iff the sentence is single-rooted, acyclic, and connected.
    /// On rejection the report lists every violated constraint.
    pub fn validate(&self) -> std::result::Result<(), TreeReport> {
        let n = self.tokens.len();
        let mut violations = Vec::new();

        let roots: Vec<usize> = self
            .tokens
            .iter()
            .filter(|t| t.head == 0)
            .map(|t| t.index)
            .collect();
        if roots.is_empty() {
            violations.push(Violation::NoRoot);
        } else if roots.len() > 1 {
            violations.push(Violation::MultipleRoots { tokens: roots });
        }

        for t in &self.tokens {
            if t.head == t.index {
                violations.push(Violation::SelfLoop { token: t.index });
            } else if t.head > n {
                violations.push(Violation::DanglingHead {
                    token: t.index,
                    head: t.head,
                });
            }
        }

        // Walk each token's head chain; revisiting a token means a cycle.
        for t in &self.tokens {
            if t.head == 0 || t.head == t.index || t.head > n {
                continue;
            }
            let mut seen = vec![false; n + 1];
            seen[t.index] = true;
            let mut cur = t.head;
            loop {
                if seen[cur] {
                    violations.push(Violation::Cycle { token: t.index });
                    break;
                }
                seen[cur] = true;
                let next = self.tokens[cur - 1].head;
                if next == 0 {
                    break; // reached the root
                }
                if next == cur || next > n {
                    break; // reported separately
                }
                cur = next;
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(TreeReport { violations })
        }
    }

    /// Node indices ordered so every token appears after all of its
    /// children. Requires a validated tree.
    pub fn bottom_up_order(&self) -> Vec<usize> {
        let root = self.root().expect("bottom_up_order needs a validated tree");
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![(root, false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
            } else {
                stack.push((node, true));
                for &c in self.children(node).iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }
}

/// A parsed collection of sentences plus the vocabulary of surface forms
/// in first-occurrence order with frequency counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Treebank {
    sentences: Vec<SentenceTree>,
    vocabulary: IndexMap<String, usize>,
}

impl Treebank {
    pub fn from_sentences(sentences: Vec<SentenceTree>) -> Self {
        let mut vocabulary = IndexMap::new();
        for s in &sentences {
            for t in s.tokens() {
                *vocabulary.entry(t.form.clone()).or_insert(0) += 1;
            }
        }
        Treebank {
            sentences,
            vocabulary,
        }
    }

    pub fn sentences(&self) -> &[SentenceTree] {
        &self.sentences
    }

    pub fn vocabulary(&self) -> &IndexMap<String, usize> {
        &self.vocabulary
    }

    /// Vocabulary forms in first-occurrence order.
    pub fn forms(&self) -> Vec<String> {
        self.vocabulary.keys().cloned().collect()
    }

    /// Distinct embedding-lookup keys (lemma when present, form
    /// otherwise) in first-occurrence order.
    pub fn embedding_keys(&self) -> Vec<String> {
        let mut seen = indexmap::IndexSet::new();
        for s in &self.sentences {
            for t in s.tokens() {
                seen.insert(t.embedding_key().to_string());
            }
        }
        seen.into_iter().collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Parses a treebank stream. Every sentence is validated; labels are
/// mapped to class indices via [`Sentiment::class`].
pub fn parse_treebank(reader: impl BufRead) -> Result<Treebank> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();

    let finalize = |current: &mut Vec<Token>, sentences: &mut Vec<SentenceTree>| -> Result<()> {
        if current.is_empty() {
            return Ok(());
        }
        let tree = SentenceTree::from_tokens(std::mem::take(current));
        if let Err(report) = tree.validate() {
            return Err(Error::InvalidTree {
                sentence: sentences.len() + 1,
                report: report.to_string(),
            });
        }
        sentences.push(tree);
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.starts_with('#') {
            continue;
        }
        if line.trim().is_empty() {
            finalize(&mut current, &mut sentences)?;
            continue;
        }
        let token = parse_token_line(&line, line_no)?;
        let expected = current.len() + 1;
        if token.index != expected {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token index {} out of order, expected {expected}", token.index),
            });
        }
        current.push(token);
    }
    finalize(&mut current, &mut sentences)?;

    Ok(Treebank::from_sentences(sentences))
}

fn parse_token_line(line: &str, line_no: usize) -> Result<Token> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 && fields.len() != 6 {
        return Err(Error::Parse {
            line: line_no,
            message: format!(
                "expected 5 tab-separated fields (6 with a lemma), found {}",
                fields.len()
            ),
        });
    }
    let index: usize = fields[0].parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("bad token index {:?}", fields[0]),
    })?;
    let head: usize = fields[2].parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("bad head index {:?}", fields[2]),
    })?;
    let raw_label: i8 = fields[4].parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("bad sentiment label {:?}", fields[4]),
    })?;
    let sentiment = Sentiment::from_value(raw_label).ok_or_else(|| Error::Parse {
        line: line_no,
        message: format!("sentiment label {raw_label} not in {{-1, 0, 1}}"),
    })?;
    if index == 0 {
        return Err(Error::Parse {
            line: line_no,
            message: "token index must be 1-based".into(),
        });
    }
    Ok(Token {
        index,
        form: fields[1].to_string(),
        head,
        relation: fields[3].to_string(),
        sentiment,
        lemma: fields.get(5).map(|l| l.to_string()),
    })
}

/// Writes the canonical text form; `parse_treebank` reads it back
/// unchanged.
pub fn serialize_treebank(tb: &Treebank, mut w: impl Write) -> Result<()> {
    for (i, s) in tb.sentences().iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for t in s.tokens() {
            match &t.lemma {
                None => writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}",
                    t.index,
                    t.form,
                    t.head,
                    t.relation,
                    t.sentiment.value()
                )?,
                Some(lemma) => writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    t.index,
                    t.form,
                    t.head,
                    t.relation,
                    t.sentiment.value(),
                    lemma
                )?,
            }
        }
    }
    Ok(())
}

/// Class index planted on every occurrence of synthetic vocabulary entry
/// `k`. The label is a deterministic function of the form alone, so the
/// task is learnable and a per-form majority vote recovers it exactly.
pub fn planted_class(vocab_index: usize) -> usize {
    vocab_index % NUM_CLASSES
}

/// Deterministic synthetic treebank: random valid trees with labels from
/// [`planted_class`]. The same seed always yields byte-identical data.
pub fn make_synthetic_treebank(
    seed: u64,
    n_sentences: usize,
    vocab_size: usize,
    max_len: usize,
) -> Treebank {
    assert!(n_sentences > 0 && vocab_size > 0 && max_len > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = rng.gen_range(1..=max_len);
        sentences.push(random_tree(&mut rng, len, vocab_size));
    }
    Treebank::from_sentences(sentences)
}

/// One random valid tree of exactly `len` tokens with planted labels.
pub fn random_tree(rng: &mut impl Rng, len: usize, vocab_size: usize) -> SentenceTree {
    // Random attachment over a shuffled order gives a uniform-ish tree
    // with the root anywhere in the sentence.
    let mut order: Vec<usize> = (1..=len).collect();
    order.shuffle(rng);
    let mut heads = vec![0usize; len + 1];
    for j in 1..len {
        heads[order[j]] = order[rng.gen_range(0..j)];
    }
    let mut tokens = Vec::with_capacity(len);
    for index in 1..=len {
        let k = rng.gen_range(0..vocab_size);
        let sentiment = Sentiment::from_class(planted_class(k)).expect("class in range");
        tokens.push(Token {
            index,
            form: format!("w{k}"),
            head: heads[index],
            relation: "dep".into(),
            sentiment,
            lemma: None,
        });
    }
    let tree = SentenceTree::from_tokens(tokens);
    debug_assert!(tree.validate().is_ok());
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;
    use std::io::Cursor;

    fn tok(index: usize, form: &str, head: usize, sentiment: i8) -> Token {
        Token {
            index,
            form: form.into(),
            head,
            relation: "dep".into(),
            sentiment: Sentiment::from_value(sentiment).unwrap(),
            lemma: None,
        }
    }

    #[test]
    fn parses_two_token_sentence() {
        let text = "1\tkot\t2\tsubj\t0\n2\tśpi\t0\tpred\t1\n";
        let tb = parse_treebank(Cursor::new(text)).unwrap();
        assert_eq!(tb.sentences().len(), 1);
        let s = &tb.sentences()[0];
        assert_eq!(s.root(), Some(2));
        assert_eq!(s.children(2), &[1]);
        assert_eq!(s.tokens()[0].sentiment, Sentiment::Neutral);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# header comment\n1\ta\t0\tdep\t1\n\n\n1\tb\t0\tdep\t-1\n";
        let tb = parse_treebank(Cursor::new(text)).unwrap();
        assert_eq!(tb.sentences().len(), 2);
    }

    #[test]
    fn two_roots_rejected_with_sentence_ordinal() {
        let text = "1\ta\t0\tdep\t0\n2\tb\t0\tdep\t0\n";
        match parse_treebank(Cursor::new(text)) {
            Err(Error::InvalidTree { sentence: 1, report }) => {
                assert!(report.contains("multiple roots"), "{report}");
            }
            other => panic!("expected invalid tree, got {other:?}"),
        }
    }

    #[test]
    fn cycle_without_root_rejected() {
        let text = "1\ta\t2\tdep\t0\n2\tb\t1\tdep\t0\n";
        match parse_treebank(Cursor::new(text)) {
            Err(Error::InvalidTree { report, .. }) => {
                assert!(report.contains("no root"), "{report}");
                assert!(report.contains("cycle"), "{report}");
            }
            other => panic!("expected invalid tree, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "1\ta\t0\tdep\t1\n\n1\tb\t0\tdep\n";
        match parse_treebank(Cursor::new(text)) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn label_outside_range_rejected() {
        let text = "1\ta\t0\tdep\t2\n";
        assert!(matches!(
            parse_treebank(Cursor::new(text)),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn validate_accepts_chain_and_star() {
        let chain = SentenceTree::from_tokens(vec![
            tok(1, "a", 2, 0),
            tok(2, "b", 3, 0),
            tok(3, "c", 0, 0),
        ]);
        assert!(chain.validate().is_ok());

        let star = SentenceTree::from_tokens(vec![
            tok(1, "hub", 0, 0),
            tok(2, "x", 1, 0),
            tok(3, "y", 1, 0),
            tok(4, "z", 1, 0),
        ]);
        assert!(star.validate().is_ok());
    }

    #[test]
    fn validate_rejects_self_loop() {
        let t = SentenceTree::from_tokens(vec![tok(1, "a", 1, 0), tok(2, "b", 0, 0)]);
        let report = t.validate().unwrap_err();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SelfLoop { token: 1 })));
    }

    #[test]
    fn validate_rejects_dangling_head() {
        let t = SentenceTree::from_tokens(vec![tok(1, "a", 9, 0), tok(2, "b", 0, 0)]);
        let report = t.validate().unwrap_err();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DanglingHead { token: 1, head: 9 })));
    }

    #[test]
    fn bottom_up_order_on_chain_and_star() {
        let chain = SentenceTree::from_tokens(vec![
            tok(1, "a", 2, 0),
            tok(2, "b", 3, 0),
            tok(3, "c", 0, 0),
        ]);
        assert_eq!(chain.bottom_up_order(), vec![1, 2, 3]);

        let star = SentenceTree::from_tokens(vec![
            tok(1, "hub", 0, 0),
            tok(2, "x", 1, 0),
            tok(3, "y", 1, 0),
            tok(4, "z", 1, 0),
        ]);
        let order = star.bottom_up_order();
        assert_eq!(order.last(), Some(&1));
        let mut rest = order[..3].to_vec();
        rest.sort_unstable();
        assert_eq!(rest, vec![2, 3, 4]);
    }

    #[test]
    fn synthetic_treebank_is_deterministic() {
        let a = make_synthetic_treebank(9, 8, 20, 12);
        let b = make_synthetic_treebank(9, 8, 20, 12);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        serialize_treebank(&a, &mut buf_a).unwrap();
        serialize_treebank(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn synthetic_treebank_has_requested_size_and_valid_trees() {
        let tb = make_synthetic_treebank(3, 32, 50, 15);
        assert_eq!(tb.sentences().len(), 32);
        for s in tb.sentences() {
            assert!(s.validate().is_ok());
        }
    }

    #[test]
    fn planted_rule_recovered_by_majority_vote() {
        let tb = make_synthetic_treebank(5, 40, 30, 10);
        // Majority label per form, then score it against the data.
        let mut votes: HashMap<&str, HashMap<usize, usize>> = HashMap::new();
        for s in tb.sentences() {
            for t in s.tokens() {
                *votes
                    .entry(t.form.as_str())
                    .or_default()
                    .entry(t.sentiment.class())
                    .or_insert(0) += 1;
            }
        }
        let decide: HashMap<&str, usize> = votes
            .iter()
            .map(|(form, counts)| {
                let best = counts.iter().max_by_key(|(_, &c)| c).unwrap();
                (*form, *best.0)
            })
            .collect();
        let mut correct = 0;
        let mut total = 0;
        for s in tb.sentences() {
            for t in s.tokens() {
                total += 1;
                if decide[t.form.as_str()] == t.sentiment.class() {
                    correct += 1;
                }
            }
        }
        assert_eq!(correct, total);
    }

    #[test]
    fn round_trip_parse_serialize() {
        let tb = make_synthetic_treebank(17, 12, 25, 9);
        let mut buf = Vec::new();
        serialize_treebank(&tb, &mut buf).unwrap();
        let back = parse_treebank(Cursor::new(buf)).unwrap();
        assert_eq!(tb, back);
    }

    #[test]
    fn classes_are_exactly_0_1_2() {
        let tb = make_synthetic_treebank(1, 20, 12, 8);
        for s in tb.sentences() {
            for t in s.tokens() {
                assert!(t.sentiment.class() < NUM_CLASSES);
            }
        }
    }

    #[test]
    fn lemma_column_is_parsed_and_round_trips() {
        let text = "1\tkoty\t0\tdep\t1\tkot\n";
        let tb = parse_treebank(Cursor::new(text)).unwrap();
        let token = &tb.sentences()[0].tokens()[0];
        assert_eq!(token.lemma.as_deref(), Some("kot"));
        assert_eq!(token.embedding_key(), "kot");
        assert_eq!(tb.embedding_keys(), vec!["kot".to_string()]);
        assert_eq!(tb.forms(), vec!["koty".to_string()]);
        let mut buf = Vec::new();
        serialize_treebank(&tb, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Child-before-parent property on random valid trees, checked
        // exhaustively against the head relation.
        #[test]
        fn bottom_up_order_puts_children_first(seed in 0u64..500, len in 1usize..50) {
            let tb = make_synthetic_treebank(seed, 1, 10, len);
            let s = &tb.sentences()[0];
            let order = s.bottom_up_order();
            prop_assert_eq!(order.len(), s.len());
            let position: HashMap<usize, usize> =
                order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
            for t in s.tokens() {
                if t.head != 0 {
                    prop_assert!(position[&t.index] < position[&t.head],
                        "child {} ordered after head {}", t.index, t.head);
                }
            }
        }

        #[test]
        fn serialization_round_trips(seed in 0u64..500) {
            let tb = make_synthetic_treebank(seed, 5, 15, 8);
            let mut buf = Vec::new();
            serialize_treebank(&tb, &mut buf).unwrap();
            let back = parse_treebank(Cursor::new(buf)).unwrap();
            prop_assert_eq!(tb, back);
        }
    }
}

//! Word-level base vocabulary extended with one dedicated token per user and
//! per item, plus the tokenizer and the two task prompt templates.
//!
//! Token ids are laid out as three contiguous, disjoint ranges:
//! `[0, |V|)` base words (reserved specials first), then `|N|` user tokens
//! `<uid1>..<uidN>`, then `|M|` item tokens `<iid1>..<iidM>`.

mod prompt;

pub use prompt::{
    render_prompt, AnswerType, EncodedPair, PromptBuilder, PromptMode, PromptTemplate,
    RenderedPrompt, Target, Task,
};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, sha256_hex, write_json};
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const YES: &str = "Yes";
pub const NO: &str = "No";

/// Specials that lead every base vocabulary, in id order.
pub const RESERVED: [&str; 5] = [PAD, EOS, UNK, YES, NO];

const PUNCT: &[char] = &[
    '(', ')', ',', '.', ':', ';', '?', '!', '"', '<', '>', '[', ']', '{', '}',
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Entity(&'a str),
    Word(&'a str),
}

/// Length of an entity spelling (`<uidK>` / `<iidK>`) at the start of `s`.
fn entity_len(s: &str) -> Option<usize> {
    let rest = s.strip_prefix("<uid").or_else(|| s.strip_prefix("<iid"))?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    (digits > 0 && rest.as_bytes().get(digits) == Some(&b'>')).then_some(4 + digits + 1)
}

fn split_pieces<'a>(text: &'a str) -> Vec<Piece<'a>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((pos, ch)) = iter.next() {
        let flush = |out: &mut Vec<Piece<'a>>, start: &mut Option<usize>| {
            if let Some(s) = start.take() {
                out.push(Piece::Word(&text[s..pos]));
            }
        };
        if ch.is_whitespace() {
            flush(&mut out, &mut word_start);
        } else if ch == '<' && entity_len(&text[pos..]).is_some() {
            flush(&mut out, &mut word_start);
            let len = entity_len(&text[pos..]).expect("checked");
            out.push(Piece::Entity(&text[pos..pos + len]));
            while iter.peek().is_some_and(|&(p, _)| p < pos + len) {
                iter.next();
            }
        } else if PUNCT.contains(&ch) {
            flush(&mut out, &mut word_start);
            out.push(Piece::Word(&text[pos..pos + ch.len_utf8()]));
        } else if word_start.is_none() {
            word_start = Some(pos);
        }
    }
    if let Some(s) = word_start {
        out.push(Piece::Word(&text[s..]));
    }
    out
}

/// Word-level base vocabulary: reserved specials, then every word with
/// frequency >= `min_freq` ordered by frequency (desc) then lexicographically.
/// Entity spellings in the corpus are never added as base words.
pub fn build_base_vocab<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Vec<String> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for t in texts {
        for p in split_pieces(t.as_ref()) {
            if let Piece::Word(w) = p {
                *freq.entry(w).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(w, f)| f >= min_freq.max(1) && !RESERVED.contains(&w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(words.into_iter().map(|(w, _)| w.to_owned()))
        .collect()
}

pub fn user_token(user: usize) -> String {
    format!("<uid{}>", user + 1)
}

pub fn item_token(item: usize) -> String {
    format!("<iid{}>", item + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Base,
    User(usize),
    Item(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPrompt {
    pub ids: Vec<usize>,
}

impl EncodedPrompt {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Immutable mixed vocabulary `W = V ∪ U_tok ∪ I_tok`.
#[derive(Debug, Clone)]
pub struct MixedVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_base: usize,
    n_users: usize,
    n_items: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    ranges: BTreeMap<String, [usize; 2]>,
}

impl PartialEq for MixedVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.n_base == other.n_base
            && self.n_users == other.n_users
            && self.n_items == other.n_items
    }
}

/// Appends `<uid1>..<uidN>` and `<iid1>..<iidM>` to the base list.
pub fn extend_vocab(base: Vec<String>, n_users: usize, n_items: usize) -> MixedVocabulary {
    let n_base = base.len();
    let mut tokens = base;
    tokens.reserve(n_users + n_items);
    tokens.extend((0..n_users).map(user_token));
    tokens.extend((0..n_items).map(item_token));
    MixedVocabulary::from_parts(tokens, n_base, n_users, n_items)
}

impl MixedVocabulary {
    fn from_parts(tokens: Vec<String>, n_base: usize, n_users: usize, n_items: usize) -> Self {
        let mut index = HashMap::with_capacity(tokens.len());
        for (k, t) in tokens.iter().enumerate() {
            index.entry(t.clone()).or_insert(k);
        }
        Self {
            tokens,
            index,
            n_base,
            n_users,
            n_items,
        }
    }

    /// A vocabulary with no entity tokens.
    pub fn base_only(base: Vec<String>) -> Self {
        extend_vocab(base, 0, 0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn has_entities(&self) -> bool {
        self.n_users + self.n_items > 0
    }

    pub fn base_range(&self) -> std::ops::Range<usize> {
        0..self.n_base
    }

    pub fn user_range(&self) -> std::ops::Range<usize> {
        self.n_base..self.n_base + self.n_users
    }

    pub fn item_range(&self) -> std::ops::Range<usize> {
        let start = self.n_base + self.n_users;
        start..start + self.n_items
    }

    pub fn user_id(&self, user: usize) -> Option<usize> {
        (user < self.n_users).then_some(self.n_base + user)
    }

    pub fn item_id(&self, item: usize) -> Option<usize> {
        (item < self.n_items).then_some(self.n_base + self.n_users + item)
    }

    pub fn kind(&self, id: usize) -> Option<TokenKind> {
        if id < self.n_base {
            Some(TokenKind::Base)
        } else if self.user_range().contains(&id) {
            Some(TokenKind::User(id - self.n_base))
        } else if self.item_range().contains(&id) {
            Some(TokenKind::Item(id - self.n_base - self.n_users))
        } else {
            None
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn require(&self, token: &str) -> Result<usize> {
        self.id(token)
            .ok_or_else(|| Error::MissingToken(token.to_owned()))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::InvalidToken(id))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> usize {
        self.id(UNK).expect("reserved specials are always present")
    }

    pub fn yes(&self) -> usize {
        self.id(YES).expect("reserved specials are always present")
    }

    pub fn no(&self) -> usize {
        self.id(NO).expect("reserved specials are always present")
    }

    /// Tokenizes `text`. Entity spellings present in the vocabulary become
    /// single ids; everything else is split on whitespace and punctuation,
    /// with unknown words mapped to `<unk>`.
    pub fn encode(&self, text: &str) -> EncodedPrompt {
        let unk = self.id(UNK);
        let mut ids = Vec::new();
        for piece in split_pieces(text) {
            match piece {
                Piece::Entity(e) => match self.id(e) {
                    Some(id) => ids.push(id),
                    None => {
                        for sub in split_unknown_entity(e) {
                            ids.extend(self.id(sub).or(unk));
                        }
                    }
                },
                Piece::Word(w) => ids.extend(self.id(w).or(unk)),
            }
        }
        EncodedPrompt { ids }
    }

    /// [`encode`](Self::encode) with a hard context limit.
    pub fn encode_limited(&self, text: &str, limit: usize) -> Result<EncodedPrompt> {
        let enc = self.encode(text);
        if enc.len() > limit {
            return Err(Error::ContextOverflow {
                len: enc.len(),
                limit,
            });
        }
        Ok(enc)
    }

    /// Space-joined token spellings.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let parts = ids
            .iter()
            .map(|&id| self.token(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.join(" "))
    }

    /// SHA-256 of the ordered token list and ranges; stored in checkpoints.
    pub fn hash(&self) -> String {
        let mut s = format!("{}|{}|{}|", self.n_base, self.n_users, self.n_items);
        for t in &self.tokens {
            s.push_str(t);
            s.push('\u{1f}');
        }
        sha256_hex(s.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ranges = BTreeMap::new();
        ranges.insert("base".to_owned(), [0, self.n_base]);
        let u = self.user_range();
        ranges.insert("users".to_owned(), [u.start, u.end]);
        let i = self.item_range();
        ranges.insert("items".to_owned(), [i.start, i.end]);
        write_json(
            path,
            &VocabFile {
                tokens: self.tokens.clone(),
                ranges,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: VocabFile = read_json(path)?;
        let get = |k: &str| {
            f.ranges
                .get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("vocabulary file lacks range {k:?}")))
        };
        let (b, u, i) = (get("base")?, get("users")?, get("items")?);
        if b[0] != 0 || u[0] != b[1] || i[0] != u[1] || i[1] != f.tokens.len() {
            return Err(Error::Checkpoint(
                "vocabulary ranges are not a partition".into(),
            ));
        }
        Ok(Self::from_parts(f.tokens, b[1], u[1] - u[0], i[1] - i[0]))
    }
}

fn split_unknown_entity(e: &str) -> [&str; 3] {
    [&e[..1], &e[1..e.len() - 1], &e[e.len() - 1..]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_of(n: usize) -> Vec<String> {
        RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain((0..n - RESERVED.len()).map(|k| format!("w{k}")))
            .collect()
    }

    #[test]
    fn min_freq_filters_rare_words() {
        let b = build_base_vocab(&["a a b"], 2);
        assert!(b.contains(&"a".to_owned()));
        assert!(!b.contains(&"b".to_owned()));
        assert_eq!(&b[..5], &RESERVED.map(String::from));
    }

    #[test]
    fn empty_corpus_gives_only_specials() {
        let b = build_base_vocab::<&str>(&[], 1);
        assert_eq!(b, RESERVED.map(String::from).to_vec());
        let again = build_base_vocab(&["b a c a", "c"], 1);
        assert_eq!(again, build_base_vocab(&["b a c a", "c"], 1));
        assert_eq!(&again[5..], &["a", "c", "b"]);
    }

    #[test]
    fn entity_spellings_never_become_base_words() {
        let b = build_base_vocab(&["user <uid3> saw <iid9>"], 1);
        assert!(b
            .iter()
            .all(|w| !w.starts_with("<uid") && !w.starts_with("<iid")));
    }

    #[test]
    fn extension_sizes_match_published_vocabularies() {
        let base = base_of(32_002);
        for (n, m, total) in [
            (6040, 3952, 41_994),
            (3472, 7171, 42_645),
            (4872, 7934, 44_808),
        ] {
            assert_eq!(extend_vocab(base.clone(), n, m).len(), total);
        }
        assert_eq!(extend_vocab(base.clone(), 0, 0).len(), 32_002);
    }

    #[test]
    fn ranges_partition_the_id_space() {
        let v = extend_vocab(base_of(8), 3, 4);
        assert_eq!(v.base_range(), 0..8);
        assert_eq!(v.user_range(), 8..11);
        assert_eq!(v.item_range(), 11..15);
        assert_eq!(v.token(8).unwrap(), "<uid1>");
        assert_eq!(v.token(14).unwrap(), "<iid4>");
        for id in 0..v.len() {
            assert!(v.kind(id).is_some());
        }
        assert_eq!(v.kind(15), None);
        assert_eq!(v.kind(12), Some(TokenKind::Item(1)));
    }

    #[test]
    fn entity_tokens_encode_to_single_ids() {
        let mut base = base_of(5);
        base.extend(["user", "watched"].map(String::from));
        let v = extend_vocab(base, 2, 800);
        assert_eq!(v.encode("<uid1>").ids, vec![v.user_id(0).unwrap()]);
        let enc = v.encode("user watched <iid745>");
        assert_eq!(enc.ids, vec![5, 6, v.item_id(744).unwrap()]);
        for u in 0..2 {
            assert_eq!(v.encode(&user_token(u)).len(), 1);
        }
        for i in 0..800 {
            assert_eq!(v.encode(&item_token(i)).len(), 1);
        }
    }

    #[test]
    fn unknown_entities_and_words_fall_back_to_unk() {
        let v = MixedVocabulary::base_only(base_of(5));
        let enc = v.encode("<iid3> zzz");
        assert_eq!(enc.len(), 4);
        assert!(enc.ids.iter().all(|&id| id == v.unk()));
    }

    #[test]
    fn punctuation_is_split() {
        let mut base = base_of(5);
        base.extend(["(", ")", ",", "A", "Close", "Shave"].map(String::from));
        let v = extend_vocab(base, 1, 1);
        let toks = v.decode(&v.encode("<iid1> (A Close Shave),").ids).unwrap();
        assert_eq!(toks, "<iid1> ( A Close Shave ) ,");
    }

    #[test]
    fn decode_edge_cases() {
        let v = MixedVocabulary::base_only(base_of(5));
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&[v.yes()]).unwrap(), "Yes");
        assert!(matches!(v.decode(&[99]), Err(Error::InvalidToken(99))));
    }

    #[test]
    fn context_limit_is_enforced() {
        let v = MixedVocabulary::base_only(base_of(5));
        assert!(v.encode_limited("Yes No Yes", 3).is_ok());
        assert!(matches!(
            v.encode_limited("Yes No Yes No", 3),
            Err(Error::ContextOverflow { len: 4, limit: 3 })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let v = extend_vocab(base_of(7), 2, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        v.save(&p).unwrap();
        let w = MixedVocabulary::load(&p).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.hash(), w.hash());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode_on_vocabulary_words(picks in proptest::collection::vec(0usize..40, 0..30)) {
            let mut base = base_of(5);
            base.extend((0..30).map(|k| format!("word{k}")));
            let v = extend_vocab(base, 3, 2);
            let pool: Vec<String> = (0..30).map(|k| format!("word{k}"))
                .chain((0..3).map(user_token))
                .chain((0..2).map(item_token))
                .chain(["Yes", "No"].map(String::from))
                .collect();
            let words: Vec<&str> = picks.iter().map(|&k| pool[k % pool.len()].as_str()).collect();
            let text = words.join("  ");
            let decoded = v.decode(&v.encode(&text).ids).unwrap();
            let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(norm(&decoded), norm(&text));
        }
    }
}

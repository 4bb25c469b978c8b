use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// One token per full API name; ids 0..3 are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocab {
    fn from_tokens<S: Into<String>>(extra: impl IntoIterator<Item = S>) -> Self {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(extra.into_iter().map(Into::into))
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad id", n + 1)))?;
            pairs.push((id, tok.to_string()));
        }
        pairs.sort();
        for (expect, (id, tok)) in pairs.iter().enumerate() {
            if *id != expect {
                return Err(Error::Format(format!("vocab ids not dense at {expect}")));
            }
            if expect < RESERVED.len() && tok != RESERVED[expect] {
                return Err(Error::Format(format!("reserved id {expect} must be {}", RESERVED[expect])));
            }
        }
        if pairs.len() < RESERVED.len() {
            return Err(Error::Format("vocab lacks reserved tokens".into()));
        }
        Ok(Self::from_tokens(pairs.into_iter().skip(RESERVED.len()).map(|(_, t)| t)))
    }
}

/// Tokens ordered by descending frequency, then lexicographically.
pub fn fit_vocab<S: AsRef<str>>(sequences: &[Vec<S>]) -> Vocab {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in sequences {
        for t in seq {
            if !RESERVED.contains(&t.as_ref()) {
                *freq.entry(t.as_ref()).or_default() += 1;
            }
        }
    }
    let mut toks: Vec<(&str, usize)> = freq.into_iter().collect();
    toks.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocab::from_tokens(toks.into_iter().map(|(t, _)| t.to_string()))
}

/// Token ids and attention mask of one padded sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSeq {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

/// `[CLS] + ids`, truncated to `max_len` and padded with `PAD`.
pub fn encode_sequence<S: AsRef<str>>(seq: &[S], vocab: &Vocab, max_len: usize) -> EncodedSeq {
    let mut ids = Vec::with_capacity(max_len);
    if max_len > 0 {
        ids.push(CLS);
    }
    ids.extend(seq.iter().take(max_len.saturating_sub(1)).map(|t| vocab.id(t.as_ref())));
    let mut mask = vec![true; ids.len()];
    ids.resize(max_len, PAD);
    mask.resize(max_len, false);
    EncodedSeq { ids, mask }
}

/// Space-separated tokens, one sequence per line.
pub fn read_sequences<R: BufRead>(r: R) -> Result<Vec<Vec<String>>> {
    r.lines()
        .map(|l| Ok(l?.split_whitespace().map(str::to_string).collect()))
        .collect()
}

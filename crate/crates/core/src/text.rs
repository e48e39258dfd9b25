//! Tokenization, vocabulary, padding and TRAC-2 style CSV ingestion.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::io::{atomic_write, sha256_hex};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NAG")]
    Nag,
    #[serde(rename = "OAG")]
    Oag,
    #[serde(rename = "CAG")]
    Cag,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Nag, Label::Oag, Label::Cag];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Nag => "NAG",
            Label::Oag => "OAG",
            Label::Cag => "CAG",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = TlaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "NAG" => Ok(Label::Nag),
            "OAG" => Ok(Label::Oag),
            "CAG" => Ok(Label::Cag),
            other => Err(TlaError::Validation(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Bangla,
    Hindi,
}

impl Language {
    /// Table order.
    pub const ALL: [Language; 3] = [Language::English, Language::Bangla, Language::Hindi];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::English => "english",
            Language::Bangla => "bangla",
            Language::Hindi => "hindi",
        }
    }

    /// ISO 639-1 code used on the translation wire.
    pub fn code(self) -> &'static str {
        match self {
            Language::English => "en",
            Language::Bangla => "bn",
            Language::Hindi => "hi",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Language::English => "English",
            Language::Bangla => "Bangla",
            Language::Hindi => "Hindi",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = TlaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "english" | "en" | "eng" => Ok(Language::English),
            "bangla" | "bengali" | "bn" | "ben" => Ok(Language::Bangla),
            "hindi" | "hi" | "hin" => Ok(Language::Hindi),
            other => Err(TlaError::Validation(format!("unknown language '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Noise,
    Translated,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Raw, Provenance::Noise, Provenance::Translated];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Raw => "raw",
            Provenance::Noise => "noise",
            Provenance::Translated => "translated",
        }
    }
}

impl FromStr for Provenance {
    type Err = TlaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "raw" => Ok(Provenance::Raw),
            "noise" => Ok(Provenance::Noise),
            "translated" => Ok(Provenance::Translated),
            other => Err(TlaError::Validation(format!("unknown provenance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub language: Language,
    pub provenance: Provenance,
}

/// Per-class tallies in [`Label::ALL`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "NAG")]
    pub nag: usize,
    #[serde(rename = "OAG")]
    pub oag: usize,
    #[serde(rename = "CAG")]
    pub cag: usize,
}

impl ClassCounts {
    pub const fn new(nag: usize, oag: usize, cag: usize) -> Self {
        ClassCounts { nag, oag, cag }
    }

    pub fn tally<'a>(examples: impl IntoIterator<Item = &'a LabeledExample>) -> Self {
        let mut c = ClassCounts::default();
        for e in examples {
            *c.get_mut(e.label) += 1;
        }
        c
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Nag => self.nag,
            Label::Oag => self.oag,
            Label::Cag => self.cag,
        }
    }

    pub fn get_mut(&mut self, label: Label) -> &mut usize {
        match label {
            Label::Nag => &mut self.nag,
            Label::Oag => &mut self.oag,
            Label::Cag => &mut self.cag,
        }
    }

    pub fn total(&self) -> usize {
        self.nag + self.oag + self.cag
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NAG {} OAG {} CAG {} total {}", self.nag, self.oag, self.cag, self.total())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub examples: Vec<LabeledExample>,
    pub counts: ClassCounts,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>) -> Self {
        let counts = ClassCounts::tally(&examples);
        DatasetSplit {
            name: name.into(),
            examples,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Checks the stored tallies against a recount.
    pub fn verify_counts(&self) -> Result<()> {
        let recount = ClassCounts::tally(&self.examples);
        if recount != self.counts {
            return Err(TlaError::Validation(format!(
                "split '{}' records {} but contains {}",
                self.name, self.counts, recount
            )));
        }
        Ok(())
    }

    pub fn counts_by_provenance(&self) -> Vec<(Provenance, ClassCounts)> {
        Provenance::ALL
            .iter()
            .map(|&p| (p, ClassCounts::tally(self.examples.iter().filter(|e| e.provenance == p))))
            .collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.text.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label.index()).collect()
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}'
            | '\u{0964}' | '\u{0965}'            // danda, double danda
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}' | '\u{3002}')
}

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
///
/// Non-Latin letters and combining marks pass through unchanged.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if is_punctuation(c) { ' ' } else { c })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub max_size: usize,
    pub min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    max_size: usize,
    min_freq: usize,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_tokens(r.tokens, r.max_size, r.min_freq)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            max_size: v.max_size,
            min_freq: v.min_freq,
        }
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, max_size: usize, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            max_size,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the id→token list; identifies the encoding.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.tokens.join("\n").as_bytes())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, dropping padding.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD)
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_owned())
            .collect()
    }
}

/// Ranks tokens by frequency (ties lexicographic), drops those under
/// `min_freq` and keeps the top `max_size − 2` after PAD and UNK.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if max_size < 2 {
        return Err(TlaError::Config(format!("vocabulary max_size {max_size} < 2")));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for t in tokenize(text.as_ref()) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(t, n)| *n >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
    tokens.extend(ranked.into_iter().take(max_size - 2).map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(tokens, max_size, min_freq))
}

/// Encodes, keeps the first `max_len` ids and right-pads with PAD.
pub fn encode_and_pad(vocab: &Vocabulary, tokens: &[String], max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(TlaError::domain("max_len must be at least 1"));
    }
    let mut ids: Vec<usize> = tokens.iter().take(max_len).map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD);
    Ok(ids)
}

pub fn encode_text(vocab: &Vocabulary, text: &str, max_len: usize) -> Result<Vec<usize>> {
    encode_and_pad(vocab, &tokenize(text), max_len)
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.trim().trim_start_matches('\u{feff}').to_lowercase();
        names.iter().any(|n| h == *n)
    })
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> TlaError {
    TlaError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a CSV with header columns `id,text,label` (optionally `language`
/// and `provenance`). Rows without a provenance column are tagged raw.
pub fn load_trac2(path: &Path, language: Language) -> Result<DatasetSplit> {
    let bytes = std::fs::read(path).map_err(|e| TlaError::io(path, e))?;
    parse_trac2(&bytes, path, language)
}

pub(crate) fn parse_trac2(bytes: &[u8], path: &Path, language: Language) -> Result<DatasetSplit> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let id_col = find_column(&headers, &["id"]).ok_or_else(|| parse_err(path, 1, "missing 'id' column"))?;
    let text_col = find_column(&headers, &["text"]).ok_or_else(|| parse_err(path, 1, "missing 'text' column"))?;
    let label_col = find_column(&headers, &["label", "sub-task a", "subtask_a"])
        .ok_or_else(|| parse_err(path, 1, "missing 'label' column"))?;
    let lang_col = find_column(&headers, &["language"]);
    let prov_col = find_column(&headers, &["provenance"]);

    let mut examples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(path, line, "missing field"));
        let raw_label = field(label_col)?;
        let label = raw_label.parse::<Label>().map_err(|_| {
            TlaError::Validation(format!(
                "{} line {line}: label '{}' is not one of NAG, OAG, CAG",
                path.display(),
                raw_label.trim()
            ))
        })?;
        let language = match lang_col {
            Some(c) => field(c)?.parse().map_err(|e: TlaError| parse_err(path, line, e.to_string()))?,
            None => language,
        };
        let provenance = match prov_col {
            Some(c) => field(c)?.parse().map_err(|e: TlaError| parse_err(path, line, e.to_string()))?,
            None => Provenance::Raw,
        };
        examples.push(LabeledExample {
            id: field(id_col)?.to_owned(),
            text: field(text_col)?.to_owned(),
            label,
            language,
            provenance,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let split = DatasetSplit::new(name, examples);
    split.verify_counts()?;
    Ok(split)
}

/// Serializes with the provenance columns, RFC-4180 quoting.
pub fn split_to_csv(split: &DatasetSplit) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| TlaError::Format(e.to_string());
    w.write_record(["id", "text", "label", "language", "provenance"]).map_err(io)?;
    for e in &split.examples {
        w.write_record([
            e.id.as_str(),
            e.text.as_str(),
            e.label.as_str(),
            e.language.as_str(),
            e.provenance.as_str(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| TlaError::Format(e.to_string()))
}

pub fn write_trac2(path: &Path, split: &DatasetSplit) -> Result<()> {
    atomic_write(path, &split_to_csv(split)?)
}

/// Per-class seeded shuffle, first `round(n·fraction)` to train.
pub fn stratified_split(split: &DatasetSplit, train_fraction: f64, seed: u64) -> Result<(DatasetSplit, DatasetSplit)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(TlaError::domain(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in Label::ALL {
        let mut members: Vec<&LabeledExample> = split.examples.iter().filter(|e| e.label == label).collect();
        if members.len() < 2 {
            return Err(TlaError::Validation(format!(
                "class {label} has {} example(s); stratified split needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * train_fraction).round() as usize;
        train.extend(members[..k].iter().map(|e| (*e).clone()));
        val.extend(members[k..].iter().map(|e| (*e).clone()));
    }
    Ok((
        DatasetSplit::new(format!("{}-train", split.name), train),
        DatasetSplit::new(format!("{}-validation", split.name), val),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, text: &str, label: Label) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            text: text.into(),
            label,
            language: Language::English,
            provenance: Provenance::Raw,
        }
    }

    #[test]
    fn tokenize_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("She is NOT ok."), vec!["she", "is", "not", "ok"]);
        assert_eq!(tokenize("well-said,brother!!"), vec!["well", "said", "brother"]);
    }

    #[test]
    fn tokenize_keeps_indic_scripts() {
        assert_eq!(tokenize("ও একটা খারাপ মিহলা ।"), vec!["ও", "একটা", "খারাপ", "মিহলা"]);
        assert_eq!(tokenize("यह बहुत बुरा है!"), vec!["यह", "बहुत", "बुरा", "है"]);
    }

    #[test]
    fn vocab_basic() {
        let v = build_vocab(&["a a b"], 10, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("zzz"), UNK);
        assert!(build_vocab(&["a"], 1, 1).is_err());
    }

    #[test]
    fn vocab_is_order_independent() {
        let a = build_vocab(&["x y z z", "y q", "z"], 5, 1).unwrap();
        let b = build_vocab(&["z", "y q", "z z y x"], 5, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn vocab_min_freq() {
        let v = build_vocab(&["a a b c c c"], 100, 2).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "c", "a"]);
    }

    #[test]
    fn encode_pad_truncate() {
        let v = build_vocab(&["a b c d e f"], 100, 1).unwrap();
        assert_eq!(encode_and_pad(&v, &[], 4).unwrap(), vec![0, 0, 0, 0]);
        let toks = tokenize("a b c d e f");
        let ids = encode_and_pad(&v, &toks, 4).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(v.decode(&ids), toks[..4].to_vec());
        assert!(encode_and_pad(&v, &toks, 0).is_err());
    }

    #[test]
    fn csv_label_validation_names_row() {
        let csv = "id,text,label\n1,hello,NAG\n2,bad,XAG\n";
        let err = parse_trac2(csv.as_bytes(), Path::new("x.csv"), Language::English)
            .unwrap_err()
            .to_string();
        assert!(err.contains("XAG") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn csv_malformed_row_has_line() {
        let csv = "id,text,label\n1,hello,NAG\n2,\"unterminated,OAG,extra,cols\n3,x,CAG\n";
        match parse_trac2(csv.as_bytes(), Path::new("x.csv"), Language::English) {
            Err(TlaError::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let csv = "id,text,label\n1,hello,NAG,oops\n";
        assert!(matches!(
            parse_trac2(csv.as_bytes(), Path::new("x.csv"), Language::English),
            Err(TlaError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_quoted_fields_and_aliases() {
        let csv = "ID,Text,Sub-task A\nb-1,\"hi, \"\"there\"\"\",CAG\n";
        let s = parse_trac2(csv.as_bytes(), Path::new("bangla_dev.csv"), Language::Bangla).unwrap();
        assert_eq!(s.examples[0].text, "hi, \"there\"");
        assert_eq!(s.examples[0].language, Language::Bangla);
        assert_eq!(s.counts, ClassCounts::new(0, 0, 1));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_trac2(Path::new("/nonexistent/file.csv"), Language::Hindi),
            Err(TlaError::Io { .. })
        ));
    }

    #[test]
    fn csv_write_read_roundtrip() {
        let split = DatasetSplit::new(
            "s",
            vec![ex("1", "a, \"quoted\"\nline", Label::Oag), ex("2", "b", Label::Nag)],
        );
        let bytes = split_to_csv(&split).unwrap();
        let back = parse_trac2(&bytes, Path::new("s.csv"), Language::Hindi).unwrap();
        assert_eq!(back.examples, split.examples);
    }

    #[test]
    fn stratified_split_exact_and_partition() {
        let mut all = Vec::new();
        for (k, label) in Label::ALL.iter().enumerate() {
            for i in 0..100 {
                all.push(ex(&format!("{k}-{i}"), "t", *label));
            }
        }
        let split = DatasetSplit::new("d", all);
        let (tr, va) = stratified_split(&split, 0.7, 9).unwrap();
        assert_eq!(tr.counts, ClassCounts::new(70, 70, 70));
        assert_eq!(va.counts, ClassCounts::new(30, 30, 30));
        let (tr2, _) = stratified_split(&split, 0.7, 9).unwrap();
        assert_eq!(tr, tr2);
        let mut ids: Vec<&str> = tr.examples.iter().chain(&va.examples).map(|e| e.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 300);
    }

    #[test]
    fn stratified_split_needs_two_per_class() {
        let split = DatasetSplit::new(
            "d",
            vec![ex("1", "a", Label::Nag), ex("2", "a", Label::Nag), ex("3", "a", Label::Oag), ex("4", "b", Label::Oag), ex("5", "c", Label::Cag)],
        );
        assert!(stratified_split(&split, 0.7, 1).is_err());
    }
}

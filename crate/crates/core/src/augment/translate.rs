//! Translation clients: a deterministic offline dictionary and a generic
//! REST client with retries and a bound on in-flight requests.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::text::{LabeledExample, Language, Provenance};

/// Text translation between two languages.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, src: Language, dst: Language) -> Result<String>;
}

const BUNDLED: [(Language, Language, &str); 6] = [
    (Language::English, Language::Hindi, include_str!("../../data/mock/en-hi.json")),
    (Language::English, Language::Bangla, include_str!("../../data/mock/en-bn.json")),
    (Language::Hindi, Language::English, include_str!("../../data/mock/hi-en.json")),
    (Language::Hindi, Language::Bangla, include_str!("../../data/mock/hi-bn.json")),
    (Language::Bangla, Language::English, include_str!("../../data/mock/bn-en.json")),
    (Language::Bangla, Language::Hindi, include_str!("../../data/mock/bn-hi.json")),
];

/// Token-map translator. Whitespace-delimited tokens found in the pair's
/// dictionary (exact match first, then lowercase) are replaced; everything
/// else, including the whitespace itself, passes through.
#[derive(Debug, Clone, Default)]
pub struct OfflineMock {
    maps: HashMap<(Language, Language), HashMap<String, String>>,
}

impl OfflineMock {
    /// No dictionaries: every text passes through unchanged.
    pub fn identity() -> Self {
        OfflineMock::default()
    }

    /// The dictionaries shipped with the crate.
    pub fn bundled() -> Self {
        let mut m = OfflineMock::default();
        for (src, dst, json) in BUNDLED {
            m.add_json(src, dst, json).expect("bundled dictionaries are valid");
        }
        m
    }

    /// Adds a JSON object `{"token": "translation", ...}` for one pair.
    pub fn add_json(&mut self, src: Language, dst: Language, json: &str) -> Result<()> {
        let map: HashMap<String, String> = serde_json::from_str(json)?;
        self.add_map(src, dst, map)
    }

    pub fn add_map(&mut self, src: Language, dst: Language, map: HashMap<String, String>) -> Result<()> {
        if let Some((k, _)) = map.iter().find(|(k, v)| k.trim().is_empty() || v.trim().is_empty()) {
            return Err(TlaError::Validation(format!(
                "dictionary {}-{} maps '{k}' to or from an empty token",
                src.code(),
                dst.code()
            )));
        }
        self.maps.entry((src, dst)).or_default().extend(map);
        Ok(())
    }
}

impl Translator for OfflineMock {
    fn translate(&self, text: &str, src: Language, dst: Language) -> Result<String> {
        let Some(map) = self.maps.get(&(src, dst)).filter(|_| src != dst) else {
            return Ok(text.to_owned());
        };
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while !rest.is_empty() {
            let ws = rest.len() - rest.trim_start().len();
            out.push_str(&rest[..ws]);
            rest = &rest[ws..];
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let tok = &rest[..end];
            match map.get(tok).or_else(|| map.get(&tok.to_lowercase())) {
                Some(t) => out.push_str(t),
                None => out.push_str(tok),
            }
            rest = &rest[end..];
        }
        Ok(out)
    }
}

/// Endpoint settings for [`HttpTranslator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub url: String,
    pub key: Option<String>,
    /// Attempts after the first one.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further one.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            url: String::new(),
            key: None,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 4,
            timeout_secs: 30,
        }
    }
}

pub const URL_ENV: &str = "TLA_TRANSLATE_URL";
pub const KEY_ENV: &str = "TLA_TRANSLATE_KEY";

impl HttpConfig {
    /// Fills `url` and `key` from the environment where they are unset.
    pub fn with_env(mut self) -> Self {
        if self.url.is_empty() {
            if let Ok(u) = std::env::var(URL_ENV) {
                self.url = u;
            }
        }
        if self.key.is_none() {
            self.key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(TlaError::Config(format!(
                "augmentation.http.url must be an http(s) URL (or set {URL_ENV}), got '{}'",
                self.url
            )));
        }
        if self.max_in_flight == 0 {
            return Err(TlaError::Config("augmentation.http.max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    q: &'a str,
    source: &'a str,
    target: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    api_key: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(rename = "translatedText")]
    translated_text: String,
}

/// POSTs `{"q", "source", "target"}` and reads `{"translatedText"}`.
///
/// Transport errors, 429 and 5xx responses are retried with exponential
/// backoff; other statuses fail at once.
#[derive(Debug)]
pub struct HttpTranslator {
    config: HttpConfig,
    agent: ureq::Agent,
    permits: Permits,
}

impl HttpTranslator {
    pub fn new(config: HttpConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpTranslator {
            permits: Permits {
                free: Mutex::new(config.max_in_flight),
                cv: Condvar::new(),
            },
            config,
            agent,
        })
    }

    fn attempt(&self, body: &WireRequest<'_>) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(k) = &self.config.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json::<WireResponse>()
                .map(|r| r.translated_text)
                .map_err(|e| (false, format!("malformed response: {e}"))),
            Err(ureq::Error::StatusCode(code)) => Err((code == 429 || code >= 500, format!("HTTP status {code}"))),
            Err(e) => Err((true, e.to_string())),
        }
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, text: &str, src: Language, dst: Language) -> Result<String> {
        if src == dst {
            return Ok(text.to_owned());
        }
        let body = WireRequest {
            q: text,
            source: src.code(),
            target: dst.code(),
            api_key: self.config.key.as_deref(),
        };
        let _permit = self.permits.acquire();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(t) => return Ok(t),
                Err((retryable, msg)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(TlaError::Transport(format!(
                            "{} after {} attempt(s): {msg}",
                            self.config.url,
                            attempt + 1
                        )));
                    }
                }
            }
            std::thread::sleep(delay);
            delay = delay.saturating_mul(2);
            attempt += 1;
        }
    }
}

/// Marks an id as derived by translation into `dst`.
pub fn translated_id(id: &str, dst: Language) -> String {
    format!("{id}~tr-{}", dst.code())
}

/// Translates every example from `src` to `dst`, in parallel, preserving
/// order and labels.
///
/// Fails with [`TlaError::Validation`] if any non-empty input comes back
/// empty and otherwise with [`TlaError::Augmentation`] naming every example
/// whose translation could not be delivered.
pub fn translate_augment(
    examples: &[LabeledExample],
    client: &dyn Translator,
    src: Language,
    dst: Language,
) -> Result<Vec<LabeledExample>> {
    if let Some(e) = examples.iter().find(|e| e.language != src) {
        return Err(TlaError::Validation(format!(
            "example {} is {} but the source language is {src}",
            e.id, e.language
        )));
    }
    let results: Vec<Result<String>> = examples
        .par_iter()
        .map(|e| client.translate(&e.text, src, dst))
        .collect();
    let mut out = Vec::with_capacity(examples.len());
    let mut failed = Vec::new();
    let mut empty = Vec::new();
    for (e, r) in examples.iter().zip(results) {
        match r {
            Ok(t) if t.trim().is_empty() && !e.text.trim().is_empty() => empty.push(e.id.clone()),
            Ok(text) => out.push(LabeledExample {
                id: translated_id(&e.id, dst),
                text,
                label: e.label,
                language: dst,
                provenance: Provenance::Translated,
            }),
            Err(_) => failed.push(e.id.clone()),
        }
    }
    if !empty.is_empty() {
        return Err(TlaError::Validation(format!(
            "empty translation for {} example(s): {}",
            empty.len(),
            empty.join(", ")
        )));
    }
    if !failed.is_empty() {
        return Err(TlaError::Augmentation { failed_ids: failed });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::text::Label;

    fn ex(id: &str, text: &str, language: Language) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            text: text.into(),
            label: Label::Oag,
            language,
            provenance: Provenance::Raw,
        }
    }

    #[test]
    fn identity_mock_only_retags() {
        let input = vec![ex("a", "  two  spaces ", Language::Hindi), ex("b", "x", Language::Hindi)];
        let out = translate_augment(&input, &OfflineMock::identity(), Language::Hindi, Language::English).unwrap();
        assert_eq!(out.len(), input.len());
        for (o, i) in out.iter().zip(&input) {
            assert_eq!(o.text, i.text);
            assert_eq!(o.label, i.label);
            assert_eq!(o.language, Language::English);
            assert_eq!(o.provenance, Provenance::Translated);
        }
        assert_eq!(out[0].id, "a~tr-en");
    }

    #[test]
    fn bundled_mock_maps_known_tokens() {
        let m = OfflineMock::bundled();
        assert_eq!(m.translate("तुम बुरा xyz", Language::Hindi, Language::English).unwrap(), "you bad xyz");
        assert_eq!(m.translate("You fool", Language::English, Language::Bangla).unwrap(), "তুমি বোকা");
        let a = m.translate("ভালো মানুষ", Language::Bangla, Language::Hindi).unwrap();
        assert_eq!(a, m.translate("ভালো মানুষ", Language::Bangla, Language::Hindi).unwrap());
    }

    #[test]
    fn empty_dictionary_entries_are_rejected() {
        let mut m = OfflineMock::identity();
        assert!(m.add_json(Language::Hindi, Language::English, r#"{"a": " "}"#).is_err());
    }

    struct Failing(Vec<&'static str>);
    impl Translator for Failing {
        fn translate(&self, text: &str, _: Language, _: Language) -> Result<String> {
            if self.0.contains(&text) {
                Err(TlaError::Transport("down".into()))
            } else {
                Ok(text.into())
            }
        }
    }

    #[test]
    fn failures_name_every_undelivered_id() {
        let input = vec![
            ex("1", "ok", Language::Bangla),
            ex("2", "bad", Language::Bangla),
            ex("3", "bad", Language::Bangla),
        ];
        let err = translate_augment(&input, &Failing(vec!["bad"]), Language::Bangla, Language::English).unwrap_err();
        match err {
            TlaError::Augmentation { failed_ids } => assert_eq!(failed_ids, vec!["2", "3"]),
            other => panic!("{other}"),
        }
    }

    struct Blank;
    impl Translator for Blank {
        fn translate(&self, _: &str, _: Language, _: Language) -> Result<String> {
            Ok(String::new())
        }
    }

    #[test]
    fn empty_translation_is_a_validation_error() {
        let input = vec![ex("1", "text", Language::Bangla)];
        assert!(matches!(
            translate_augment(&input, &Blank, Language::Bangla, Language::English),
            Err(TlaError::Validation(_))
        ));
    }

    /// Serves `responses` in order, one per connection, and counts requests.
    fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/translate", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        std::thread::spawn(move || {
            for (stream, (status, body)) in listener.incoming().zip(responses) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut req = vec![0; len];
                reader.read_exact(&mut req).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&req).unwrap();
                assert_eq!(req["source"], "hi");
                assert_eq!(req["target"], "en");
                h.fetch_add(1, Ordering::SeqCst);
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, hits)
    }

    fn client(url: String, retries: u32) -> HttpTranslator {
        HttpTranslator::new(HttpConfig {
            url,
            max_retries: retries,
            backoff_ms: 1,
            ..HttpConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn http_client_retries_server_errors() {
        let (url, hits) = serve(vec![(503, "{}"), (200, r#"{"translatedText":"hello"}"#)]);
        let t = client(url, 2);
        assert_eq!(t.translate("नमस्ते", Language::Hindi, Language::English).unwrap(), "hello");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn http_client_gives_up_after_retries() {
        let (url, hits) = serve(vec![(500, "{}"), (500, "{}")]);
        let t = client(url, 1);
        assert!(matches!(
            t.translate("x", Language::Hindi, Language::English),
            Err(TlaError::Transport(_))
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn http_client_does_not_retry_client_errors() {
        let (url, hits) = serve(vec![(400, "{}"), (200, r#"{"translatedText":"late"}"#)]);
        let t = client(url, 3);
        assert!(t.translate("x", Language::Hindi, Language::English).is_err());
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn http_config_requires_a_url() {
        assert!(matches!(HttpTranslator::new(HttpConfig::default()), Err(TlaError::Config(_))));
    }
}

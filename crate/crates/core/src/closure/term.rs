//! Symbolic messages.
//!
//! Text form, used in transcripts:
//!
//! ```text
//! atom                 nonce_s:s1
//! tuple                <a, b, c>          (right-nested pairs)
//! symmetric encryption senc(key, body)
//! public-key envelope  aenc(pk:EMS:ems, body)
//! signature            sig(sk:EMS:ems, body)
//! increment            inc(body, 3)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Atom(String),
    Pair(Box<Term>, Box<Term>),
    SymEnc {
        key: Box<Term>,
        body: Box<Term>,
    },
    /// Encryption under the public key atom `public` (`pk:...`).
    PkEnc {
        public: String,
        body: Box<Term>,
    },
    /// Signature by the private key atom `signer` (`sk:...`); reveals `body`.
    Sig {
        signer: String,
        body: Box<Term>,
    },
    /// `body` incremented `k` times.
    Inc {
        body: Box<Term>,
        k: u64,
    },
}

/// The private-key atom matching a public-key atom.
pub fn private_for(public: &str) -> Option<String> {
    public.strip_prefix("pk:").map(|rest| format!("sk:{rest}"))
}

impl Term {
    pub fn atom(label: impl Into<String>) -> Term {
        Term::Atom(label.into())
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::Pair(Box::new(a), Box::new(b))
    }

    /// Right-nested pairs. Panics on an empty list.
    pub fn tuple(items: impl IntoIterator<Item = Term>) -> Term {
        let mut items: Vec<Term> = items.into_iter().collect();
        let mut acc = items.pop().expect("tuple needs at least one element");
        while let Some(prev) = items.pop() {
            acc = Term::pair(prev, acc);
        }
        acc
    }

    pub fn sym_enc(key: Term, body: Term) -> Term {
        Term::SymEnc { key: Box::new(key), body: Box::new(body) }
    }

    pub fn pk_enc(public: impl Into<String>, body: Term) -> Term {
        Term::PkEnc { public: public.into(), body: Box::new(body) }
    }

    pub fn sig(signer: impl Into<String>, body: Term) -> Term {
        Term::Sig { signer: signer.into(), body: Box::new(body) }
    }

    /// Increment with normalization: `inc(inc(x, a), b) = inc(x, a + b)`, `inc(x, 0) = x`.
    pub fn inc(body: Term, k: u64) -> Term {
        match (body, k) {
            (body, 0) => body,
            (Term::Inc { body, k: inner }, k) => Term::inc(*body, inner + k),
            (body, k) => Term::Inc { body: Box::new(body), k },
        }
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Term::Atom(_))
    }

    pub fn depth(&self) -> usize {
        match self {
            Term::Atom(_) => 1,
            Term::Pair(a, b) => 1 + a.depth().max(b.depth()),
            Term::SymEnc { key, body } => 1 + key.depth().max(body.depth()),
            Term::PkEnc { body, .. } | Term::Sig { body, .. } | Term::Inc { body, .. } => 1 + body.depth(),
        }
    }

    /// Elements of a right-nested pair chain.
    pub fn flatten(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Term::Pair(a, b) = cur {
            out.push(a.as_ref());
            cur = b;
        }
        out.push(cur);
        out
    }

    /// Every atom label occurring anywhere in the term, including key labels.
    pub fn atoms(&self, out: &mut Vec<String>) {
        match self {
            Term::Atom(a) => out.push(a.clone()),
            Term::Pair(a, b) => {
                a.atoms(out);
                b.atoms(out);
            }
            Term::SymEnc { key, body } => {
                key.atoms(out);
                body.atoms(out);
            }
            Term::PkEnc { public: label, body } | Term::Sig { signer: label, body } => {
                out.push(label.clone());
                body.atoms(out);
            }
            Term::Inc { body, .. } => body.atoms(out),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(a) => f.write_str(a),
            Term::Pair(..) => {
                f.write_str("<")?;
                for (i, t) in self.flatten().into_iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(">")
            }
            Term::SymEnc { key, body } => write!(f, "senc({key}, {body})"),
            Term::PkEnc { public, body } => write!(f, "aenc({public}, {body})"),
            Term::Sig { signer, body } => write!(f, "sig({signer}, {body})"),
            Term::Inc { body, k } => write!(f, "inc({body}, {k})"),
        }
    }
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | ':' | '-' | '.' | '#' | '/')
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, s: &str) -> Result<(), String> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            Err(format!("expected {s:?} at offset {}", self.pos))
        }
    }

    fn label(&mut self) -> Result<&'a str, String> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.find(|c: char| !is_label_char(c)).unwrap_or(rest.len());
        if len == 0 {
            return Err(format!("expected a label at offset {}", self.pos));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn term(&mut self) -> Result<Term, String> {
        self.skip_ws();
        if self.src[self.pos..].starts_with('<') {
            self.pos += 1;
            let mut items = vec![self.term()?];
            loop {
                self.skip_ws();
                if self.src[self.pos..].starts_with('>') {
                    self.pos += 1;
                    break;
                }
                self.eat(",")?;
                items.push(self.term()?);
            }
            return Ok(Term::tuple(items));
        }
        let label = self.label()?;
        if !self.src[self.pos..].starts_with('(') {
            return Ok(Term::atom(label));
        }
        self.pos += 1;
        let t = match label {
            "senc" => {
                let key = self.term()?;
                self.eat(",")?;
                Term::sym_enc(key, self.term()?)
            }
            "aenc" | "sig" => {
                let key = self.label()?.to_string();
                self.eat(",")?;
                let body = self.term()?;
                if label == "aenc" {
                    Term::pk_enc(key, body)
                } else {
                    Term::sig(key, body)
                }
            }
            "inc" => {
                let body = self.term()?;
                self.eat(",")?;
                let k = self.label()?.parse::<u64>().map_err(|e| e.to_string())?;
                Term::inc(body, k)
            }
            other => return Err(format!("unknown constructor {other:?}")),
        };
        self.eat(")")?;
        Ok(t)
    }
}

impl FromStr for Term {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser { src: s, pos: 0 };
        let t = p.term()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(format!("trailing input at offset {}", p.pos));
        }
        Ok(t)
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inc_normalizes() {
        let n = Term::atom("n");
        assert_eq!(Term::inc(Term::inc(n.clone(), 2), 3), Term::inc(n.clone(), 5));
        assert_eq!(Term::inc(n.clone(), 0), n);
    }

    #[test]
    fn text_form() {
        let t = Term::pk_enc(
            "pk:EMS:ems",
            Term::tuple([Term::atom("cd:s1"), Term::sym_enc(Term::atom("k"), Term::inc(Term::atom("n"), 3))]),
        );
        assert_eq!(t.to_string(), "aenc(pk:EMS:ems, <cd:s1, senc(k, inc(n, 3))>)");
        assert_eq!(t.to_string().parse::<Term>().unwrap(), t);
        assert!("senc(a)".parse::<Term>().is_err());
        assert!("a b".parse::<Term>().is_err());
    }

    fn term() -> impl Strategy<Value = Term> {
        let leaf = "[a-z]{1,3}(:[a-z0-9]{1,3})?".prop_map(Term::atom);
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::pair(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(k, b)| Term::sym_enc(k, b)),
                ("pk:[a-z]{1,3}", inner.clone()).prop_map(|(k, b)| Term::pk_enc(k, b)),
                ("sk:[a-z]{1,3}", inner.clone()).prop_map(|(k, b)| Term::sig(k, b)),
                (inner, 1u64..6).prop_map(|(b, k)| Term::inc(b, k)),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(t in term()) {
            let text = t.to_string();
            prop_assert_eq!(text.parse::<Term>().unwrap(), t);
        }
    }
}

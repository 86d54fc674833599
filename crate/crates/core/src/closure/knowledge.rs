//! Dolev-Yao knowledge: what an observer can take apart (analysis) and what
//! it can build from the parts (synthesis).
//!
//! The stored set is closed under analysis only. Synthesis is answered on
//! demand by [`KnowledgeSet::derivable`], bounded by a depth cap so membership
//! always terminates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::term::{private_for, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    /// `<a, b> ⊢ a` and `<a, b> ⊢ b`.
    Split,
    /// `senc(k, m), k ⊢ m`.
    DecSym,
    /// `aenc(pk:X, m), sk:X ⊢ m`.
    DecPk,
    /// `sig(sk:X, m) ⊢ m`.
    Unsign,
    /// `inc(m, k) ⊢ m`.
    Uninc,
    /// `a, b ⊢ <a, b>`.
    Pair,
    /// `k, m ⊢ senc(k, m)`.
    EncSym,
    /// `pk:X, m ⊢ aenc(pk:X, m)`.
    EncPk,
    /// `sk:X, m ⊢ sig(sk:X, m)`.
    Sign,
    /// `m ⊢ inc(m, k)`.
    Inc,
}

/// One rule application. Every premise is initially known or the conclusion
/// of an earlier step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub rule: Rule,
    pub premises: Vec<Term>,
    pub conclusion: Term,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: ", self.rule)?;
        for (i, p) in self.premises.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, " ⊢ {}", self.conclusion)
    }
}

/// Checks that `step` is a valid application of its rule.
pub fn step_is_valid(step: &Step) -> bool {
    let c = &step.conclusion;
    match (step.rule, step.premises.as_slice()) {
        (Rule::Split, [Term::Pair(a, b)]) => c == a.as_ref() || c == b.as_ref(),
        (Rule::DecSym, [Term::SymEnc { key, body }, k]) => key.as_ref() == k && body.as_ref() == c,
        (Rule::DecPk, [Term::PkEnc { public, body }, Term::Atom(sk)]) => {
            private_for(public).as_deref() == Some(sk.as_str()) && body.as_ref() == c
        }
        (Rule::Unsign, [Term::Sig { body, .. }]) => body.as_ref() == c,
        (Rule::Uninc, [Term::Inc { body, .. }]) => body.as_ref() == c,
        (Rule::Pair, [a, b]) => *c == Term::pair(a.clone(), b.clone()),
        (Rule::EncSym, [k, m]) => *c == Term::sym_enc(k.clone(), m.clone()),
        (Rule::EncPk, [Term::Atom(pk), m]) => *c == Term::pk_enc(pk.clone(), m.clone()),
        (Rule::Sign, [Term::Atom(sk), m]) => *c == Term::sig(sk.clone(), m.clone()),
        (Rule::Inc, [m]) => matches!(c, Term::Inc { body, .. } if body.as_ref() == m),
        _ => false,
    }
}

/// Replays `steps` from `initial` and reports whether `target` ends up known.
/// Fails on the first step whose premises are not yet known or whose rule does
/// not fit.
pub fn replay(initial: &[Term], steps: &[Step], target: &Term) -> bool {
    let mut known: BTreeSet<&Term> = initial.iter().collect();
    for step in steps {
        if !step.premises.iter().all(|p| known.contains(p)) || !step_is_valid(step) {
            return false;
        }
        known.insert(&step.conclusion);
    }
    known.contains(target)
}

#[derive(Debug, Clone)]
pub struct KnowledgeSet {
    initial: BTreeSet<Term>,
    /// Analysis closure; each non-initial term maps to the step that produced it.
    known: BTreeMap<Term, Option<Step>>,
    depth_cap: usize,
}

/// Closes `terms` under analysis.
pub fn close(terms: impl IntoIterator<Item = Term>) -> KnowledgeSet {
    let initial: BTreeSet<Term> = terms.into_iter().collect();
    let depth_cap = initial.iter().map(Term::depth).max().unwrap_or(1) + 1;
    let mut ks = KnowledgeSet { known: initial.iter().map(|t| (t.clone(), None)).collect(), initial, depth_cap };
    ks.saturate();
    ks
}

impl KnowledgeSet {
    /// Rounds of analysis until nothing new appears. Within a round only terms
    /// from earlier rounds are used, so each recorded step is a shallowest one.
    fn saturate(&mut self) {
        loop {
            let mut fresh: BTreeMap<Term, Step> = BTreeMap::new();
            for t in self.known.keys() {
                for step in self.analyze(t) {
                    if !self.known.contains_key(&step.conclusion) {
                        fresh.entry(step.conclusion.clone()).or_insert(step);
                    }
                }
            }
            if fresh.is_empty() {
                return;
            }
            for (t, step) in fresh {
                self.known.insert(t, Some(step));
            }
        }
    }

    fn analyze(&self, t: &Term) -> Vec<Step> {
        let one =
            |rule, premises: Vec<Term>, conclusion: &Term| Step { rule, premises, conclusion: conclusion.clone() };
        match t {
            Term::Atom(_) => vec![],
            Term::Pair(a, b) => vec![one(Rule::Split, vec![t.clone()], a), one(Rule::Split, vec![t.clone()], b)],
            Term::SymEnc { key, body } if self.derivable(key) => {
                vec![one(Rule::DecSym, vec![t.clone(), (**key).clone()], body)]
            }
            Term::PkEnc { public, body } => match private_for(public).map(Term::Atom) {
                Some(sk) if self.known.contains_key(&sk) => vec![one(Rule::DecPk, vec![t.clone(), sk], body)],
                _ => vec![],
            },
            Term::Sig { body, .. } => vec![one(Rule::Unsign, vec![t.clone()], body)],
            Term::Inc { body, .. } => vec![one(Rule::Uninc, vec![t.clone()], body)],
            Term::SymEnc { .. } => vec![],
        }
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    /// Terms in the analysis closure.
    pub fn analyzed(&self) -> impl Iterator<Item = &Term> {
        self.known.keys()
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.known.contains_key(t)
    }

    /// Whether `t` can be produced by analysis followed by synthesis.
    pub fn derivable(&self, t: &Term) -> bool {
        self.synth(t, self.depth_cap)
    }

    fn synth(&self, t: &Term, budget: usize) -> bool {
        if self.known.contains_key(t) {
            return true;
        }
        if budget == 0 {
            return false;
        }
        let b = budget - 1;
        match t {
            Term::Atom(_) => false,
            Term::Pair(x, y) => self.synth(x, b) && self.synth(y, b),
            Term::SymEnc { key, body } => self.synth(key, b) && self.synth(body, b),
            Term::PkEnc { public: k, body } | Term::Sig { signer: k, body } => {
                self.known.contains_key(&Term::Atom(k.clone())) && self.synth(body, b)
            }
            Term::Inc { body, .. } => self.synth(body, b),
        }
    }

    /// A replayable derivation of `target`, or `None` if it is not derivable.
    pub fn path(&self, target: &Term) -> Option<Vec<Step>> {
        if !self.derivable(target) {
            return None;
        }
        let mut steps = Vec::new();
        let mut done = BTreeSet::new();
        self.explain(target, &mut steps, &mut done);
        Some(steps)
    }

    fn explain(&self, t: &Term, steps: &mut Vec<Step>, done: &mut BTreeSet<Term>) {
        if self.initial.contains(t) || done.contains(t) {
            return;
        }
        let step = match self.known.get(t) {
            Some(Some(step)) => step.clone(),
            Some(None) => return,
            None => self.synthesis_step(t),
        };
        for p in &step.premises {
            self.explain(p, steps, done);
        }
        done.insert(t.clone());
        steps.push(step);
    }

    fn synthesis_step(&self, t: &Term) -> Step {
        let (rule, premises) = match t {
            Term::Pair(a, b) => (Rule::Pair, vec![(**a).clone(), (**b).clone()]),
            Term::SymEnc { key, body } => (Rule::EncSym, vec![(**key).clone(), (**body).clone()]),
            Term::PkEnc { public, body } => (Rule::EncPk, vec![Term::atom(public.clone()), (**body).clone()]),
            Term::Sig { signer, body } => (Rule::Sign, vec![Term::atom(signer.clone()), (**body).clone()]),
            Term::Inc { body, .. } => (Rule::Inc, vec![(**body).clone()]),
            Term::Atom(_) => unreachable!("underivable atoms are filtered out by path()"),
        };
        Step { rule, premises, conclusion: t.clone() }
    }
}

/// Verdict for one secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecrecyResult {
    pub secret: Term,
    pub derivable: bool,
    pub path: Option<Vec<Step>>,
}

/// Closes the observed `transcript` together with the adversary's `initial`
/// knowledge and asks, for each secret, whether it can be derived.
pub fn check_secrecy(transcript: &[Term], initial: &[Term], secrets: &[Term]) -> Vec<SecrecyResult> {
    let ks = close(transcript.iter().chain(initial).cloned());
    secrets
        .iter()
        .map(|s| {
            let path = ks.path(s);
            SecrecyResult { secret: s.clone(), derivable: path.is_some(), path }
        })
        .collect()
}

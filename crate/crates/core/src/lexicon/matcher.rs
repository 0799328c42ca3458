use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};

use super::MatchPolicy;

/// A term occurrence in the original (unfolded) text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    /// Index into the matcher's term list.
    pub term: usize,
}

/// Case-folds one character the way both terms and texts are folded.
pub fn fold_char(ch: char, out: &mut String) {
    out.extend(ch.to_lowercase());
}

/// Case-folds a term or text per character.
pub fn fold(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        fold_char(ch, &mut out);
    }
    out
}

/// Folded text plus, for each folded byte, the byte range of the original
/// character it came from.
struct Folded {
    text: String,
    origin: Vec<(u32, u32)>,
}

impl Folded {
    fn new(text: &str) -> Folded {
        let mut folded = String::with_capacity(text.len());
        let mut origin = Vec::with_capacity(text.len());
        for (i, ch) in text.char_indices() {
            let before = folded.len();
            fold_char(ch, &mut folded);
            let range = (i as u32, (i + ch.len_utf8()) as u32);
            origin.extend(std::iter::repeat_n(range, folded.len() - before));
        }
        Folded { text: folded, origin }
    }
}

/// Simultaneous multi-pattern matcher with word-boundary and case policy.
///
/// All terms are found in one automaton pass; overlapping hits ("oxy" inside
/// "oxy codone" style terms) are all reported.
#[derive(Debug, Clone)]
pub struct TermMatcher {
    automaton: Option<AhoCorasick>,
    policy: MatchPolicy,
    len: usize,
}

impl TermMatcher {
    pub fn new<'a>(terms: impl IntoIterator<Item = &'a str>, policy: MatchPolicy) -> TermMatcher {
        let patterns: Vec<String> = terms
            .into_iter()
            .map(|t| if policy.case_insensitive { fold(t) } else { t.to_string() })
            .collect();
        let len = patterns.len();
        let automaton = (!patterns.is_empty()).then(|| {
            AhoCorasickBuilder::new()
                .match_kind(MatchKind::Standard)
                .build(&patterns)
                .expect("term automaton within size limits")
        });
        TermMatcher {
            automaton,
            policy,
            len,
        }
    }

    pub fn policy(&self) -> MatchPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn for_each_hit(&self, haystack: &str, mut f: impl FnMut(usize, usize, usize) -> bool) {
        let Some(ac) = &self.automaton else { return };
        for m in ac.find_overlapping_iter(haystack) {
            if self.policy.word_boundary && !is_delimited(haystack, m.start(), m.end()) {
                continue;
            }
            if !f(m.start(), m.end(), m.pattern().as_usize()) {
                return;
            }
        }
    }

    fn with_haystack<T>(&self, text: &str, f: impl FnOnce(&str) -> T) -> T {
        if self.policy.case_insensitive && text.chars().any(|c| c.is_uppercase() || !c.is_ascii()) {
            f(&fold(text))
        } else {
            f(text)
        }
    }

    /// True if any term occurs.
    pub fn is_match(&self, text: &str) -> bool {
        self.with_haystack(text, |hay| {
            let mut found = false;
            self.for_each_hit(hay, |_, _, _| {
                found = true;
                false
            });
            found
        })
    }

    /// Indices of all terms that occur, ascending and deduplicated.
    pub fn matched_terms(&self, text: &str) -> Vec<usize> {
        let mut hits = self.with_haystack(text, |hay| {
            let mut hits = Vec::new();
            self.for_each_hit(hay, |_, _, t| {
                hits.push(t);
                true
            });
            hits
        });
        hits.sort_unstable();
        hits.dedup();
        hits
    }

    /// Every boundary-respecting occurrence, in original-text byte offsets,
    /// ordered by start then by descending length.
    pub fn spans(&self, text: &str) -> Vec<Span> {
        let mut spans = Vec::new();
        if self.policy.case_insensitive {
            let folded = Folded::new(text);
            self.for_each_hit(&folded.text, |s, e, term| {
                spans.push(Span {
                    start: folded.origin[s].0 as usize,
                    end: folded.origin[e - 1].1 as usize,
                    term,
                });
                true
            });
        } else {
            self.for_each_hit(text, |start, end, term| {
                spans.push(Span { start, end, term });
                true
            });
        }
        spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        spans.dedup_by_key(|s| (s.start, s.end));
        spans
    }

    /// Leftmost-longest non-overlapping subset of [`TermMatcher::spans`].
    pub fn replaceable_spans(&self, text: &str) -> Vec<Span> {
        let mut out: Vec<Span> = Vec::new();
        for span in self.spans(text) {
            if out.last().is_none_or(|last| span.start >= last.end) {
                out.push(span);
            }
        }
        out
    }
}

/// Neither neighbour of `haystack[start..end]` is alphanumeric.
pub fn is_delimited(haystack: &str, start: usize, end: usize) -> bool {
    let before = haystack[..start].chars().next_back();
    let after = haystack[end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(ci: bool, wb: bool) -> MatchPolicy {
        MatchPolicy {
            case_insensitive: ci,
            word_boundary: wb,
            allow_multiword: true,
        }
    }

    #[test]
    fn boundary_semantics() {
        let m = TermMatcher::new(["lean"], policy(true, true));
        assert!(!m.is_match("cleaning supplies"));
        assert!(m.is_match("sipping lean tonight"));
        assert!(m.is_match("#lean"));
        assert!(m.is_match("LEAN."));
        let loose = TermMatcher::new(["lean"], policy(true, false));
        assert!(loose.is_match("cleaning supplies"));
    }

    #[test]
    fn case_sensitivity() {
        let m = TermMatcher::new(["Fenty"], policy(false, true));
        assert!(m.is_match("Fenty Beauty"));
        assert!(!m.is_match("fenty beauty"));
    }

    #[test]
    fn overlapping_terms_both_reported() {
        let m = TermMatcher::new(["oxy", "oxy 30s", "30s"], policy(true, true));
        assert_eq!(m.matched_terms("got oxy 30s"), vec![0, 1, 2]);
    }

    #[test]
    fn single_letter_term() {
        let m = TermMatcher::new(["h"], policy(true, true));
        assert!(m.is_match("copped some H today"));
        assert!(!m.is_match("hello there"));
        assert!(m.is_match("h"));
    }

    #[test]
    fn spans_map_back_through_folding() {
        // U+0130 lowercases to two chars ("i" + combining dot)
        let m = TermMatcher::new(["smack"], policy(true, true));
        let text = "\u{130} SMACK and Smack";
        let spans = m.spans(text);
        assert_eq!(spans.len(), 2);
        assert_eq!(&text[spans[0].start..spans[0].end], "SMACK");
        assert_eq!(&text[spans[1].start..spans[1].end], "Smack");
    }

    #[test]
    fn replaceable_spans_prefer_longest() {
        let m = TermMatcher::new(["oxy", "oxy 30"], policy(true, true));
        let spans = m.replaceable_spans("oxy 30 and oxy");
        assert_eq!(spans.len(), 2);
        assert_eq!((spans[0].start, spans[0].end, spans[0].term), (0, 6, 1));
        assert_eq!((spans[1].start, spans[1].term), (11, 0));
    }

    #[test]
    fn empty_matcher() {
        let m = TermMatcher::new(std::iter::empty(), MatchPolicy::default());
        assert!(!m.is_match("anything"));
        assert!(m.spans("anything").is_empty());
    }
}

//! Seeded synthetic fixtures for tests, benches and demos.
//!
//! Background text is built from a fixed syllable set that cannot spell any
//! of the fixture keywords, so keyword hits only come from the templates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Post};
use crate::evaluator::GoldLabels;
use crate::label::{Label, PredictionSet};

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "ri", "mu", "sa", "te", "lo", "vi", "na", "po", "du", "ge", "zu", "me", "ra", "ki",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

/// Filler of roughly `len` bytes.
fn filler(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut s = String::with_capacity(len + 8);
    while s.len() < len {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(&word(rng));
    }
    s
}

/// `n` posts of filler text, 60 to 180 bytes each (mean 120).
pub fn random_posts(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Corpus::from_posts((0..n).map(|i| {
        let len = rng.random_range(60..=180);
        Post::new(format!("r{i}"), filler(&mut rng, len))
    }))
}

/// `n` distinct terms drawn from the filler vocabulary, about one in ten
/// multiword.
pub fn random_terms(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = if rng.random_bool(0.1) {
            format!("{} {}", word(&mut rng), word(&mut rng))
        } else {
            // long single words keep the hit rate low
            format!("{}{}{}", word(&mut rng), word(&mut rng), word(&mut rng))
        };
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

/// Keywords the end-to-end mock treats as opioid cues.
pub const SPRITZER_KEYWORDS: [&str; 5] = ["pill", "pills", "nodding", "high", "plug"];
/// Phrase the end-to-end mock refuses to process.
pub const SPRITZER_REFUSAL: &str = "overdose tonight";
pub const SPRITZER_TERM: &str = "fenty";
pub const SPRITZER_TERM_POSTS: usize = 492;

/// Term posts: (gold, has keyword, template).
const FENTY_TEMPLATES: [(Label, bool, &str); 10] = [
    (Label::OpioidRelated, true, "popped a {T} pill and now im nodding"),
    (Label::OpioidRelated, true, "my plug got {T} again"),
    (Label::OpioidRelated, false, "{T} got me feeling some type of way"),
    (Label::NotOpioidRelated, false, "the new {T} beauty gloss is everything"),
    (Label::NotOpioidRelated, false, "{T} foundation shade 330 sold out"),
    (Label::NotOpioidRelated, false, "saw the {T} show at fashion week"),
    (Label::NotOpioidRelated, true, "{T} highlighter got me high on life"),
    (Label::Unsure, false, "{T} again?? smh"),
    (Label::Unsure, true, "{T} or pills idk anymore"),
    (Label::Unsure, false, "who else is on {T} tonight"),
];

/// (template index, count); counts sum to 492.
const FENTY_MIX: [(usize, usize); 10] =
    [(0, 20), (1, 10), (2, 7), (3, 200), (4, 120), (5, 90), (6, 5), (7, 30), (8, 3), (9, 7)];

fn term_spelling(rng: &mut ChaCha8Rng) -> &'static str {
    ["fenty", "Fenty", "FENTY", "#fenty", "fenty's"][rng.random_range(0..5)]
}

/// A Spritzer-shaped corpus: `background` filler posts (some with
/// near-miss spellings of the term) plus 492 term posts with gold labels.
pub struct SpritzerFixture {
    pub corpus: Corpus,
    /// Gold labels for the term posts only.
    pub gold: GoldLabels,
    /// Id of the single term post containing the refusal phrase.
    pub refused_post: String,
}

pub fn spritzer(background: usize, seed: u64) -> SpritzerFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = Vec::with_capacity(background + SPRITZER_TERM_POSTS);
    let near_miss = ["fentyx", "sufenty", "fen ty", "fent y", "fentanyl"];
    for i in 0..background {
        let len = rng.random_range(60..=180);
        let mut text = filler(&mut rng, len);
        if i % 50 == 0 {
            text.push(' ');
            text.push_str(near_miss[rng.random_range(0..near_miss.len())]);
        }
        posts.push((Post::new(format!("bg{i}"), text), None));
    }
    let mut k = 0;
    for &(t, count) in &FENTY_MIX {
        let (gold, _, template) = FENTY_TEMPLATES[t];
        for _ in 0..count {
            let mut text = template.replace("{T}", term_spelling(&mut rng));
            text.push(' ');
            let len = rng.random_range(10..=60);
            text.push_str(&filler(&mut rng, len));
            posts.push((Post::new(format!("f{k}"), text), Some(gold)));
            k += 1;
        }
    }
    posts.shuffle(&mut rng);
    // the refusal phrase goes on the first clean negative term post
    let refused = posts
        .iter_mut()
        .find(|(p, g)| *g == Some(Label::NotOpioidRelated) && !p.text.contains("high"))
        .expect("fixture has negatives");
    refused.0.text.push(' ');
    refused.0.text.push_str(SPRITZER_REFUSAL);
    let refused_post = refused.0.id.clone();

    let gold = posts
        .iter()
        .filter_map(|(p, g)| g.map(|g| (p.id.clone(), g)))
        .collect();
    SpritzerFixture {
        corpus: Corpus::from_posts(posts.into_iter().map(|(p, _)| p)),
        gold,
        refused_post,
    }
}

/// The ambiguous terms with one benign and one drug-context template each.
/// Drug templates carry a context cue from [`SLANG_CUES`].
const SLANG_TEMPLATES: [(&str, &str, &str); 8] = [
    ("fenty", "copped some {T} and been nodding all day", "the {T} beauty launch was packed"),
    ("smack", "shooting {T} again, the withdrawal is brutal", "the {T} talk before the game was wild"),
    ("lean", "sipping {T} till i nod off, codeine hits", "{T} on me when you are not strong"),
    ("oxy", "crushed an {T} and snorted it, dope sick tomorrow", "{T} pads cleared my skin"),
    ("blues", "plug has {T} 30s, pressed pills everywhere", "the {T} festival lineup is stacked"),
    ("H", "cooking {T} in a spoon, nodding hard", "row {T} seats at the concert"),
    ("fetty", "laced with {T}, almost overdosed", "{T} wap on repeat all summer"),
    ("tar", "black {T} from the plug, need a fix", "the {T} pits smelled like roads"),
];

/// Context cues present in every drug-context slang post.
pub const SLANG_CUES: [&str; 10] = [
    "nodding", "withdrawal", "nod", "codeine", "dope sick", "pressed pills", "spoon", "overdosed", "plug", "fix",
];

pub struct SlangFixture {
    /// 80 drug-context posts, 10 per ambiguous term.
    pub opioid: Corpus,
    /// 80 benign posts, 10 per ambiguous term.
    pub non_opioid: Corpus,
}

pub fn emergent_slang(seed: u64) -> SlangFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opioid = Vec::new();
    let mut non = Vec::new();
    for (term, drug, benign) in SLANG_TEMPLATES {
        for i in 0..10 {
            let tail = |rng: &mut ChaCha8Rng| {
                let len = rng.random_range(5..=40);
                filler(rng, len)
            };
            opioid.push(Post::new(
                format!("o-{term}-{i}"),
                format!("{} {}", drug.replace("{T}", term), tail(&mut rng)),
            ));
            non.push(Post::new(
                format!("n-{term}-{i}"),
                format!("{} {}", benign.replace("{T}", term), tail(&mut rng)),
            ));
        }
    }
    SlangFixture {
        opioid: Corpus::from_posts(opioid),
        non_opioid: Corpus::from_posts(non),
    }
}

/// One prediction per entry of `counts` (label, n), with posts of filler
/// text, in a seeded order.
pub fn stratified_predictions(counts: &[(Label, usize)], seed: u64) -> (PredictionSet, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &(label, n) in counts {
        for _ in 0..n {
            rows.push(label);
        }
    }
    rows.shuffle(&mut rng);
    let mut preds = PredictionSet::new("synthetic");
    let mut posts = Vec::with_capacity(rows.len());
    for (i, label) in rows.into_iter().enumerate() {
        let id = format!("t{i}");
        let len = rng.random_range(20..=80);
        posts.push(Post::new(&id, filler(&mut rng, len)));
        preds.insert(id, label);
    }
    (preds.resolve_errors(), Corpus::from_posts(posts))
}

/// Lean-task take-all strata: opioid-related, unsure, content
/// restriction, api error.
pub const LEAN_STRATA: [(Label, usize); 4] = [
    (Label::OpioidRelated, 395),
    (Label::Unsure, 865),
    (Label::ContentRestrictionError, 987),
    (Label::ApiError, 52),
];

/// Lean-shaped predictions with `negatives` not-opioid-related posts.
pub fn lean_predictions(negatives: usize, seed: u64) -> (PredictionSet, Corpus) {
    let mut counts = LEAN_STRATA.to_vec();
    counts.push((Label::NotOpioidRelated, negatives));
    stratified_predictions(&counts, seed)
}

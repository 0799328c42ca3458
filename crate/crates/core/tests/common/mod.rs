//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use slangtriage::MatchPolicy;

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn lower(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// Naive scan: every term is tried at every char position of the text.
pub fn naive_matches(terms: &[String], text: &str, policy: MatchPolicy) -> BTreeSet<String> {
    let text = collapse_ws(text);
    let hay = if policy.case_insensitive { lower(&text) } else { text };
    let mut out = BTreeSet::new();
    for term in terms {
        let needle = collapse_ws(term);
        let needle = if policy.case_insensitive { lower(&needle) } else { needle };
        if needle.is_empty() {
            continue;
        }
        let hit = hay.char_indices().any(|(i, _)| {
            if !hay[i..].starts_with(&needle) {
                return false;
            }
            if !policy.word_boundary {
                return true;
            }
            let end = i + needle.len();
            let before = hay[..i].chars().last();
            let after = hay[end..].chars().next();
            before.is_none_or(|c| !c.is_alphanumeric()) && after.is_none_or(|c| !c.is_alphanumeric())
        });
        if hit {
            out.insert(term.clone());
        }
    }
    out
}

/// Rank of each value by counting: 1 + (#smaller) + (#equal - 1) / 2.
pub fn brute_force_ranks(values: &[u8]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let smaller = values.iter().filter(|&&w| w < v).count() as f64;
            let equal = values.iter().filter(|&&w| w == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Spearman from brute-force ranks; `None` when either side is constant.
pub fn brute_force_spearman(a: &[u8], b: &[u8]) -> Option<f64> {
    let ra = brute_force_ranks(a);
    let rb = brute_force_ranks(b);
    correlation(&ra, &rb)
}

pub fn correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

/// Cohen's kappa from a 3x3 contingency count.
pub fn kappa_from_pairs(pairs: &[(usize, usize)], k: usize) -> Option<f64> {
    let n = pairs.len() as f64;
    let mut table = vec![vec![0f64; k]; k];
    for &(a, b) in pairs {
        table[a][b] += 1.0;
    }
    let po = (0..k).map(|i| table[i][i]).sum::<f64>() / n;
    let pe = (0..k)
        .map(|i| {
            let row: f64 = table[i].iter().sum();
            let col: f64 = table.iter().map(|r| r[i]).sum();
            row * col
        })
        .sum::<f64>()
        / (n * n);
    if (1.0 - pe).abs() < 1e-12 {
        None
    } else {
        Some((po - pe) / (1.0 - pe))
    }
}

/// Every sequence over `0..k` of length `n`, as a counter.
pub fn all_sequences(n: usize, k: u8) -> Vec<Vec<u8>> {
    let total = (k as usize).pow(n as u32);
    (0..total)
        .map(|mut x| {
            (0..n)
                .map(|_| {
                    let d = (x % k as usize) as u8;
                    x /= k as usize;
                    d
                })
                .collect()
        })
        .collect()
}

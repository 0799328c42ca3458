//! Cohen's kappa and Spearman's rho between two annotators.

use serde::{Deserialize, Serialize};

use super::{binarize, EvalError};
use crate::label::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaMode {
    ThreeClass,
    Binarized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    /// `None` when chance agreement is 1.
    pub kappa: Option<f64>,
    /// Observed agreement.
    pub p_o: f64,
    /// Chance agreement from the marginals.
    pub p_e: f64,
}

fn check_pair(a: &[Label], b: &[Label], min: usize) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < min {
        return Err(EvalError::TooFew(min));
    }
    if let Some(bad) = a.iter().chain(b).find(|l| l.is_error()) {
        return Err(EvalError::NotSemantic(*bad));
    }
    Ok(())
}

fn category(label: Label, mode: KappaMode) -> usize {
    match mode {
        KappaMode::ThreeClass => label.index(),
        KappaMode::Binarized => binarize(label).map(usize::from).unwrap_or(0),
    }
}

/// kappa = (p_o - p_e) / (1 - p_e) over aligned label sequences.
pub fn cohens_kappa(a: &[Label], b: &[Label], mode: KappaMode) -> Result<Kappa, EvalError> {
    check_pair(a, b, 1)?;
    let n = a.len() as f64;
    let mut agree = 0usize;
    let mut marg_a = [0usize; 3];
    let mut marg_b = [0usize; 3];
    for (&x, &y) in a.iter().zip(b) {
        let (cx, cy) = (category(x, mode), category(y, mode));
        agree += usize::from(cx == cy);
        marg_a[cx] += 1;
        marg_b[cy] += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg_a
        .iter()
        .zip(marg_b)
        .map(|(&ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    let kappa = ((1.0 - p_e).abs() > 1e-12).then(|| (p_o - p_e) / (1.0 - p_e));
    Ok(Kappa { kappa, p_o, p_e })
}

/// Rank value of a label: not opioid-related 0, unsure 1, opioid-related 2.
pub fn rank_value(label: Label) -> Result<f64, EvalError> {
    match label {
        Label::NotOpioidRelated => Ok(0.0),
        Label::Unsure => Ok(1.0),
        Label::OpioidRelated => Ok(2.0),
        other => Err(EvalError::NotSemantic(other)),
    }
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho on the 0/1/2 label mapping with average-rank ties.
/// `None` when either sequence is constant.
pub fn spearman(a: &[Label], b: &[Label]) -> Result<Option<f64>, EvalError> {
    check_pair(a, b, 2)?;
    let xa: Vec<f64> = a.iter().map(|l| rank_value(*l)).collect::<Result<_, _>>()?;
    let xb: Vec<f64> = b.iter().map(|l| rank_value(*l)).collect::<Result<_, _>>()?;
    Ok(pearson(&average_ranks(&xa), &average_ranks(&xb)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_items: usize,
    pub kappa_3class: Option<f64>,
    pub kappa_binarized: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub p_o_3class: f64,
    pub p_e_3class: f64,
    pub p_o_binarized: f64,
    pub p_e_binarized: f64,
}

pub fn agreement_report(a: &[Label], b: &[Label]) -> Result<AgreementReport, EvalError> {
    let k3 = cohens_kappa(a, b, KappaMode::ThreeClass)?;
    let k2 = cohens_kappa(a, b, KappaMode::Binarized)?;
    let rho = if a.len() >= 2 { spearman(a, b)? } else { None };
    Ok(AgreementReport {
        n_items: a.len(),
        kappa_3class: k3.kappa,
        kappa_binarized: k2.kappa,
        spearman_rho: rho,
        p_o_3class: k3.p_o,
        p_e_3class: k3.p_e,
        p_o_binarized: k2.p_o,
        p_e_binarized: k2.p_e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Label::*;

    #[test]
    fn perfect_agreement() {
        let a = [OpioidRelated, NotOpioidRelated, Unsure, NotOpioidRelated];
        assert_eq!(cohens_kappa(&a, &a, KappaMode::ThreeClass).unwrap().kappa, Some(1.0));
        assert_eq!(spearman(&a, &a).unwrap(), Some(1.0));
    }

    #[test]
    fn hand_computed_kappa() {
        let a = [OpioidRelated, OpioidRelated, NotOpioidRelated, NotOpioidRelated];
        let b = [OpioidRelated, NotOpioidRelated, NotOpioidRelated, NotOpioidRelated];
        let k = cohens_kappa(&a, &b, KappaMode::ThreeClass).unwrap();
        // p_o = 3/4; p_e = (2/4)(1/4) + (2/4)(3/4) = 1/2
        assert!((k.p_o - 0.75).abs() < 1e-12);
        assert!((k.p_e - 0.5).abs() < 1e-12);
        assert!((k.kappa.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn binarized_mode_merges_unsure() {
        let a = [Unsure, NotOpioidRelated, OpioidRelated];
        let b = [NotOpioidRelated, Unsure, OpioidRelated];
        assert!(cohens_kappa(&a, &b, KappaMode::ThreeClass).unwrap().kappa.unwrap() < 1.0);
        assert_eq!(cohens_kappa(&a, &b, KappaMode::Binarized).unwrap().kappa, Some(1.0));
    }

    #[test]
    fn constant_raters_undefined() {
        let a = [Unsure; 4];
        let k = cohens_kappa(&a, &a, KappaMode::ThreeClass).unwrap();
        assert_eq!(k.kappa, None);
        assert_eq!(k.p_e, 1.0);
        assert_eq!(spearman(&a, &[OpioidRelated, Unsure, Unsure, Unsure]).unwrap(), None);
    }

    #[test]
    fn anti_ranking() {
        let a = [NotOpioidRelated, Unsure, OpioidRelated];
        let b = [OpioidRelated, Unsure, NotOpioidRelated];
        assert!((spearman(&a, &b).unwrap().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        assert_eq!(
            cohens_kappa(&[Unsure], &[], KappaMode::ThreeClass),
            Err(EvalError::LengthMismatch(1, 0))
        );
        assert_eq!(cohens_kappa(&[], &[], KappaMode::ThreeClass), Err(EvalError::TooFew(1)));
        assert_eq!(spearman(&[Unsure], &[Unsure]), Err(EvalError::TooFew(2)));
        assert_eq!(
            cohens_kappa(&[ApiError], &[Unsure], KappaMode::ThreeClass),
            Err(EvalError::NotSemantic(ApiError))
        );
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[2.0, 0.0, 2.0, 1.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn report_fields() {
        let a = [OpioidRelated, OpioidRelated, NotOpioidRelated, NotOpioidRelated];
        let b = [OpioidRelated, NotOpioidRelated, NotOpioidRelated, NotOpioidRelated];
        let r = agreement_report(&a, &b).unwrap();
        assert_eq!(r.n_items, 4);
        assert!((r.kappa_3class.unwrap() - 0.5).abs() < 1e-12);
        let one = agreement_report(&[Unsure], &[Unsure]).unwrap();
        assert_eq!(one.spearman_rho, None);
    }
}

//! Rank-based tests: Mann–Whitney U and Kruskal–Wallis H.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alternative {
    TwoSided,
    /// First sample tends to be smaller.
    Less,
    /// First sample tends to be larger.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correction {
    None,
    Bonferroni(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `"U"` or `"H"`.
    pub test: String,
    /// `U` of the first sample, or `H`.
    pub statistic: f64,
    pub p_value: f64,
    pub p_raw: f64,
    pub group_sizes: Vec<usize>,
    pub exact: bool,
    pub correction: Correction,
}

impl TestResult {
    /// Multiplies the raw p-value by `k`, capped at one.
    pub fn bonferroni(mut self, k: usize) -> Self {
        self.p_value = (self.p_raw * k.max(1) as f64).min(1.0);
        self.correction = Correction::Bonferroni(k);
        self
    }
}

pub fn bonferroni(results: Vec<TestResult>) -> Vec<TestResult> {
    let k = results.len();
    results.into_iter().map(|r| r.bonferroni(k)).collect()
}

/// Average ranks (1-based) of the pooled samples plus the tie term `Σ(t³ − t)`.
fn pooled_ranks(groups: &[&[f64]]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (g, values) in groups.iter().enumerate() {
        if values.is_empty() {
            return Err(Error::InsufficientData("every sample needs n >= 1".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid("samples must be finite"));
            }
            pooled.push((v, g, i));
        }
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut ties = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &(_, g, k) in &pooled[i..=j] {
            ranks[g][k] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    Ok((ranks, ties))
}

/// `(U_a, U_b)` with `U_a + U_b = n_a · n_b`.
pub fn u_statistics(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let (ranks, _) = pooled_ranks(&[a, b])?;
    let na = a.len() as f64;
    let ua = ranks[0].iter().sum::<f64>() - na * (na + 1.0) / 2.0;
    Ok((ua, na * b.len() as f64 - ua))
}

/// Number of arrangements giving each `U` value for sample sizes `(m, n)`.
fn exact_u_counts(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u]: arrangements of i first-sample and j second-sample items.
    let max_u = m * n;
    let mut f = vec![vec![vec![0.0; max_u + 1]; n + 1]; m + 1];
    for row in f[0].iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=m {
        f[i][0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                // The largest item is from the first sample (beating all j) or from the second.
                let from_first = if u >= j { f[i - 1][j][u - j] } else { 0.0 };
                f[i][j][u] = from_first + f[i][j - 1][u];
            }
        }
    }
    f[m][n].clone()
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_u_with(a, b, Alternative::TwoSided)
}

/// Exact null distribution when both samples have at most eight values and
/// there are no ties; otherwise the tie-corrected normal approximation with a
/// continuity correction.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    let (ranks, ties) = pooled_ranks(&[a, b])?;
    let (na, nb) = (a.len(), b.len());
    let ua = ranks[0].iter().sum::<f64>() - (na * (na + 1)) as f64 / 2.0;
    let exact = na <= EXACT_MAX_N && nb <= EXACT_MAX_N && ties == 0.0;
    let p = if exact {
        let counts = exact_u_counts(na, nb);
        let total: f64 = counts.iter().sum();
        let u = ua.round() as usize;
        let lower = counts[..=u].iter().sum::<f64>() / total;
        let upper = counts[u..].iter().sum::<f64>() / total;
        match alternative {
            Alternative::Less => lower,
            Alternative::Greater => upper,
            Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
        }
    } else {
        let n = (na + nb) as f64;
        let mu = (na * nb) as f64 / 2.0;
        let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let sd = var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            match alternative {
                Alternative::Less => normal.cdf((ua - mu + 0.5) / sd),
                Alternative::Greater => normal.sf((ua - mu - 0.5) / sd),
                Alternative::TwoSided => {
                    let z = ((ua - mu).abs() - 0.5).max(0.0) / sd;
                    (2.0 * normal.sf(z)).min(1.0)
                }
            }
        }
    };
    Ok(TestResult {
        test: "U".into(),
        statistic: ua,
        p_value: p.clamp(0.0, 1.0),
        p_raw: p.clamp(0.0, 1.0),
        group_sizes: vec![na, nb],
        exact,
        correction: Correction::None,
    })
}

/// Tie-corrected H with a chi-square(k − 1) p-value.
pub fn kruskal_wallis_h(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData(
            "the H test needs at least two groups".into(),
        ));
    }
    let (ranks, ties) = pooled_ranks(groups)?;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let denom = 1.0 - ties / (n * n * n - n);
    let (h, p) = if denom <= 1e-12 {
        (0.0, 1.0)
    } else {
        let s: f64 = ranks
            .iter()
            .map(|r| r.iter().sum::<f64>().powi(2) / r.len() as f64)
            .sum();
        let h = ((12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / denom).max(0.0);
        let chi = ChiSquared::new((groups.len() - 1) as f64).expect("positive degrees of freedom");
        (h, chi.sf(h))
    };
    Ok(TestResult {
        test: "H".into(),
        statistic: h,
        p_value: p,
        p_raw: p,
        group_sizes: groups.iter().map(|g| g.len()).collect(),
        exact: false,
        correction: Correction::None,
    })
}

impl std::str::FromStr for Alternative {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" | "two_sided" => Ok(Alternative::TwoSided),
            "less" => Ok(Alternative::Less),
            "greater" => Ok(Alternative::Greater),
            other => Err(Error::invalid(format!("unknown alternative {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub n: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub result: TestResult,
}

/// U test for two groups; H test plus Bonferroni-corrected pairwise U tests
/// for three or more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub groups: Vec<GroupSummary>,
    pub omnibus: TestResult,
    pub pairwise: Vec<PairwiseTest>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn compare_groups(
    groups: &[(String, Vec<f64>)],
    alternative: Alternative,
) -> Result<GroupComparison> {
    if groups.len() < 2 {
        return Err(Error::invalid(format!(
            "a comparison needs at least two groups, got {}",
            groups.len()
        )));
    }
    if let Some((name, _)) = groups.iter().find(|g| g.1.is_empty()) {
        return Err(Error::InsufficientData(format!("group {name:?} is empty")));
    }
    let summaries = groups
        .iter()
        .map(|(name, v)| GroupSummary {
            name: name.clone(),
            n: v.len(),
            median: median(v),
        })
        .collect();
    if groups.len() == 2 {
        return Ok(GroupComparison {
            groups: summaries,
            omnibus: mann_whitney_u_with(&groups[0].1, &groups[1].1, alternative)?,
            pairwise: Vec::new(),
        });
    }
    let slices: Vec<&[f64]> = groups.iter().map(|g| g.1.as_slice()).collect();
    let omnibus = kruskal_wallis_h(&slices)?;
    let k = groups.len() * (groups.len() - 1) / 2;
    let mut pairwise = Vec::with_capacity(k);
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            pairwise.push(PairwiseTest {
                a: groups[i].0.clone(),
                b: groups[j].0.clone(),
                result: mann_whitney_u(&groups[i].1, &groups[j].1)?.bonferroni(k),
            });
        }
    }
    Ok(GroupComparison {
        groups: summaries,
        omnibus,
        pairwise,
    })
}

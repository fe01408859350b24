use std::io::{Read, Write};

use serde::Deserialize;

use super::EvalError;

/// Pairwise judgments over named options.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JudgmentSet {
    pub items: Vec<String>,
    /// (winner, loser) as indices into `items`
    pub comparisons: Vec<(usize, usize)>,
}

impl JudgmentSet {
    pub fn new(items: Vec<String>, comparisons: Vec<(usize, usize)>) -> Result<Self, EvalError> {
        for &(w, l) in &comparisons {
            if w == l {
                return Err(EvalError::SelfComparison(items.get(w).cloned().unwrap_or_default()));
            }
            if w >= items.len() || l >= items.len() {
                return Err(EvalError::UnknownItem(w.max(l).to_string()));
            }
        }
        Ok(Self { items, comparisons })
    }

    pub fn index_of(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|i| i == item)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    option_a: String,
    option_b: String,
    winner: String,
}

/// Reads `option_a,option_b,winner` rows. Items are sorted by name.
pub fn read_judgments<R: Read>(input: R) -> Result<JudgmentSet, EvalError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        let r: Row = row?;
        if r.winner != r.option_a && r.winner != r.option_b {
            return Err(EvalError::InvalidWinner {
                winner: r.winner,
                a: r.option_a,
                b: r.option_b,
            });
        }
        rows.push(r);
    }
    let mut items: Vec<String> = rows.iter().flat_map(|r| [r.option_a.clone(), r.option_b.clone()]).collect();
    items.sort();
    items.dedup();
    let at = |s: &str| items.binary_search_by(|i| i.as_str().cmp(s)).expect("collected");
    let comparisons = rows
        .iter()
        .map(|r| {
            let loser = if r.winner == r.option_a { &r.option_b } else { &r.option_a };
            (at(&r.winner), at(loser))
        })
        .collect();
    JudgmentSet::new(items, comparisons)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub items: Vec<String>,
    /// positive, summing to 1
    pub strengths: Vec<f64>,
    /// of the observed judgments under the fitted strengths
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// a half win was added both ways on every compared pair
    pub regularized: bool,
    /// connected components of the comparison graph, by item index; each
    /// component's strengths sum to its share of the items
    pub components: Vec<Vec<usize>>,
    /// objective after each accepted update, including pseudo-counts if any
    pub trace: Vec<f64>,
}

impl Ranking {
    /// Item indices from strongest to weakest, ties by index.
    pub fn order(&self) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.strengths.len()).collect();
        o.sort_by(|&a, &b| self.strengths[b].total_cmp(&self.strengths[a]).then(a.cmp(&b)));
        o
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "item", "strength"])?;
        for (r, i) in self.order().into_iter().enumerate() {
            w.write_record([(r + 1).to_string(), self.items[i].clone(), format!("{:.9}", self.strengths[i])])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn components(n: usize, adj: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            for v in 0..n {
                if !seen[v] && adj[u][v] + adj[v][u] > 0.0 {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Every item of `comp` reaches every other along "beat" edges.
fn strongly_connected(comp: &[usize], wins: &[Vec<f64>]) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; comp.len()];
        seen[0] = true;
        let mut stack = vec![0];
        while let Some(a) = stack.pop() {
            for b in 0..comp.len() {
                let (u, v) = (comp[a], comp[b]);
                let edge = if forward { wins[u][v] } else { wins[v][u] };
                if !seen[b] && edge > 0.0 {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(true) && reach(false)
}

fn log_likelihood(wins: &[Vec<f64>], pi: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, row) in wins.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                ll += w * (pi[i] / (pi[i] + pi[j])).ln();
            }
        }
    }
    ll
}

/// Maximum-likelihood Bradley-Terry strengths by minorization-maximization.
/// Stops when no strength changes by more than `tol` relative.
pub fn fit_bradley_terry(judgments: &JudgmentSet, tol: f64, max_iter: usize) -> Result<Ranking, EvalError> {
    fit_bradley_terry_from(judgments, None, tol, max_iter)
}

/// As [`fit_bradley_terry`], starting from `init` (positive, any scale)
/// instead of equal strengths.
pub fn fit_bradley_terry_from(
    judgments: &JudgmentSet,
    init: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<Ranking, EvalError> {
    let n = judgments.items.len();
    if let Some(init) = init {
        assert_eq!(init.len(), n, "one initial strength per item");
        assert!(init.iter().all(|v| *v > 0.0 && v.is_finite()), "initial strengths must be positive");
    }
    let mut wins = vec![vec![0.0; n]; n];
    for &(w, l) in &judgments.comparisons {
        wins[w][l] += 1.0;
    }
    for i in 0..n {
        if (0..n).all(|j| wins[i][j] + wins[j][i] == 0.0) {
            return Err(EvalError::NoComparisons(judgments.items[i].clone()));
        }
    }
    let comps = components(n, &wins);
    if comps.len() > 1 {
        log::warn!("comparison graph has {} components; fitting each on its own", comps.len());
    }
    let regularized = !comps.iter().all(|c| strongly_connected(c, &wins));
    let observed = wins.clone();
    if regularized {
        log::warn!("some item never loses or never wins against its component; adding half a win each way per compared pair");
        for i in 0..n {
            for j in 0..n {
                if observed[i][j] + observed[j][i] > 0.0 {
                    wins[i][j] += 0.5;
                }
            }
        }
    }
    let total_wins: Vec<f64> = wins.iter().map(|r| r.iter().sum()).collect();
    let mut pi = init.map_or_else(|| vec![1.0 / n as f64; n], <[f64]>::to_vec);
    let mut trace = vec![log_likelihood(&wins, &pi)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (wins[i][j] + wins[j][i]) / (pi[i] + pi[j]))
                .sum();
            next[i] = total_wins[i] / denom;
        }
        for comp in &comps {
            let share = comp.len() as f64 / n as f64;
            let sum: f64 = comp.iter().map(|&i| next[i]).sum();
            for &i in comp {
                next[i] *= share / sum;
            }
        }
        let change = pi.iter().zip(&next).map(|(a, b)| ((b - a) / a).abs()).fold(0.0, f64::max);
        pi = next;
        trace.push(log_likelihood(&wins, &pi));
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Bradley-Terry fit stopped after {max_iter} iterations");
    }
    Ok(Ranking {
        items: judgments.items.clone(),
        log_likelihood: log_likelihood(&observed, &pi),
        strengths: pi,
        iterations,
        converged,
        regularized,
        components: comps,
        trace,
    })
}

/// Kendall tau-a between two score vectors over the same items.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]) * (b[i] - b[j]);
            s += (x > 0.0) as i64 - (x < 0.0) as i64;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("o{i}")).collect()
    }

    #[test]
    fn two_items_closed_form() {
        let j = JudgmentSet::new(items(2), vec![(0, 1), (0, 1), (0, 1), (1, 0)]).unwrap();
        let r = fit_bradley_terry(&j, 1e-13, 10_000).unwrap();
        assert!(r.converged && !r.regularized);
        assert!((r.strengths[0] / r.strengths[1] - 3.0).abs() < 1e-9);
        assert!((r.strengths.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_results_are_equal() {
        let mut c = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    c.push((a, b));
                }
            }
        }
        let r = fit_bradley_terry(&JudgmentSet::new(items(4), c).unwrap(), 1e-12, 1000).unwrap();
        for s in r.strengths {
            assert!((s - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_never_drops() {
        let c = vec![(0, 1), (1, 2), (2, 0), (0, 2), (0, 1), (1, 2), (3, 0), (1, 3)];
        let r = fit_bradley_terry(&JudgmentSet::new(items(4), c).unwrap(), 1e-12, 1000).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn unbeaten_item_is_regularized() {
        let j = JudgmentSet::new(items(2), vec![(0, 1), (0, 1)]).unwrap();
        let r = fit_bradley_terry(&j, 1e-12, 10_000).unwrap();
        assert!(r.regularized && r.converged);
        // 2.5 wins against 0.5
        assert!((r.strengths[0] / r.strengths[1] - 5.0).abs() < 1e-8);
    }

    #[test]
    fn disconnected_and_missing() {
        let j = JudgmentSet::new(items(4), vec![(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        let r = fit_bradley_terry(&j, 1e-12, 100).unwrap();
        assert_eq!(r.components.len(), 2);
        assert!(!r.regularized);
        let j = JudgmentSet::new(items(3), vec![(0, 1)]).unwrap();
        assert!(matches!(fit_bradley_terry(&j, 1e-9, 10), Err(EvalError::NoComparisons(s)) if s == "o2"));
        assert!(JudgmentSet::new(items(2), vec![(1, 1)]).is_err());
    }

    #[test]
    fn csv_winner_must_be_an_option() {
        let ok = "option_a,option_b,winner\nchair,desk,desk\ndesk,chair,chair\n";
        let j = read_judgments(ok.as_bytes()).unwrap();
        assert_eq!(j.items, vec!["chair", "desk"]);
        assert_eq!(j.comparisons, vec![(1, 0), (0, 1)]);
        let bad = "option_a,option_b,winner\nchair,desk,bed\n";
        assert!(matches!(read_judgments(bad.as_bytes()), Err(EvalError::InvalidWinner { .. })));
    }

    #[test]
    fn tau() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    }
}

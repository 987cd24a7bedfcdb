use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest player count for which every coalition is evaluated.
pub const EXACT_LIMIT: usize = 12;

/// A cooperative game over `n_players` segments. `coalition[i]` is true when
/// segment `i` keeps its real features.
pub trait CoalitionGame: Sync {
    fn n_players(&self) -> usize;
    fn value(&self, coalition: &[bool]) -> Result<f64>;
}

/// Adapts a closure into a game.
pub struct FnGame<F> {
    pub n: usize,
    pub f: F,
}

impl<F> CoalitionGame for FnGame<F>
where
    F: Fn(&[bool]) -> Result<f64> + Sync,
{
    fn n_players(&self) -> usize {
        self.n
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        (self.f)(coalition)
    }
}

fn bits(mask: usize, k: usize) -> Vec<bool> {
    (0..k).map(|i| mask >> i & 1 == 1).collect()
}

/// Every marginal `f(S ∪ {i}) - f(S)` weighted by `|S|! (k-|S|-1)! / k!`.
pub fn shapley_exact(game: &dyn CoalitionGame) -> Result<Vec<f64>> {
    let k = game.n_players();
    if k == 0 {
        return Err(Error::InvalidArgument("game has no players".into()));
    }
    if k > EXACT_LIMIT {
        return Err(Error::TooManyPlayers { k, limit: EXACT_LIMIT });
    }
    let values: Vec<f64> = (0..1usize << k).into_par_iter().map(|m| game.value(&bits(m, k))).collect::<Result<_>>()?;
    // weight[s] for a coalition of size s not containing i
    let mut fact = vec![1.0f64; k + 1];
    for i in 1..=k {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..k).map(|s| fact[s] * fact[k - s - 1] / fact[k]).collect();
    let mut phi = vec![0.0; k];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1 << i;
        *p = (0..values.len())
            .filter(|m| m & bit == 0)
            .map(|m| weight[m.count_ones() as usize] * (values[m | bit] - values[m]))
            .sum();
    }
    Ok(phi)
}

/// Mean of the solo marginal `f({i}) - f(∅)` and the leave-one-out marginal
/// `f(F) - f(F \ {i})`. Costs `2k + 2` evaluations.
pub fn shapley_approx(game: &dyn CoalitionGame) -> Result<Vec<f64>> {
    let k = game.n_players();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 players, got {k}")));
    }
    let empty = game.value(&vec![false; k])?;
    let full = game.value(&vec![true; k])?;
    (0..k)
        .into_par_iter()
        .map(|i| {
            let mut solo = vec![false; k];
            solo[i] = true;
            let mut without = vec![true; k];
            without[i] = false;
            Ok(0.5 * (game.value(&solo)? - empty) + 0.5 * (full - game.value(&without)?))
        })
        .collect()
}

/// Exact values up to [`EXACT_LIMIT`] players, the approximation beyond.
/// The flag reports which one ran.
pub fn shapley_auto(game: &dyn CoalitionGame) -> Result<(Vec<f64>, bool)> {
    if game.n_players() <= EXACT_LIMIT {
        Ok((shapley_exact(game)?, true))
    } else {
        Ok((shapley_approx(game)?, false))
    }
}

/// `|Σ values - (f(F) - f(∅))|`
pub fn verify_additivity(values: &[f64], game: &dyn CoalitionGame) -> Result<f64> {
    let k = game.n_players();
    if values.len() != k {
        return Err(Error::Shape(format!("{} values for {k} players", values.len())));
    }
    let gain = game.value(&vec![true; k])? - game.value(&vec![false; k])?;
    Ok((values.iter().sum::<f64>() - gain).abs())
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks). Undefined, and
/// reported as an error, when either side is constant.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!(
            "spearman needs two equal series of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(num / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Shapley by averaging marginals over every ordering of the players.
    fn permutation_oracle(k: usize, f: &dyn Fn(&[bool]) -> f64) -> Vec<f64> {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        let all = perms(k);
        let mut phi = vec![0.0; k];
        for order in &all {
            let mut s = vec![false; k];
            for &p in order {
                let before = f(&s);
                s[p] = true;
                phi[p] += f(&s) - before;
            }
        }
        phi.iter().map(|v| v / all.len() as f64).collect()
    }

    fn table_game(table: Vec<f64>) -> FnGame<impl Fn(&[bool]) -> Result<f64> + Sync> {
        let n = table.len().trailing_zeros() as usize;
        FnGame {
            n,
            f: move |s: &[bool]| Ok(table[s.iter().enumerate().map(|(i, &b)| usize::from(b) << i).sum::<usize>()]),
        }
    }

    #[test]
    fn two_player_fixture() {
        // f(∅)=0, f({1})=1, f({2})=2, f({1,2})=4
        let g = table_game(vec![0.0, 1.0, 2.0, 4.0]);
        let phi = shapley_exact(&g).unwrap();
        assert!((phi[0] - 1.5).abs() < 1e-12 && (phi[1] - 2.5).abs() < 1e-12);
        assert_eq!(shapley_approx(&g).unwrap(), phi);
    }

    #[test]
    fn constant_game_is_all_zero() {
        let g = FnGame { n: 5, f: |_: &[bool]| Ok(3.0) };
        assert!(shapley_exact(&g).unwrap().iter().all(|&v| v == 0.0));
        assert!(shapley_approx(&g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_many_players_is_refused() {
        let g = FnGame { n: EXACT_LIMIT + 1, f: |_: &[bool]| Ok(0.0) };
        assert!(matches!(shapley_exact(&g), Err(Error::TooManyPlayers { .. })));
        assert!(!shapley_auto(&g).unwrap().1);
    }

    #[test]
    fn spearman_fixtures() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // ranks (1.5, 1.5, 3) vs (1, 2, 3)
        let r = spearman_rho(&[5.0, 5.0, 9.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.75f64.sqrt()).abs() < 1e-12, "{r}");
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn exact_matches_permutation_oracle(k in 1usize..6, seed in prop::collection::vec(-3.0f64..3.0, 64)) {
            let table: Vec<f64> = seed[..1 << k].to_vec();
            let t = table.clone();
            let oracle = permutation_oracle(k, &move |s: &[bool]| t[s.iter().enumerate().map(|(i, &b)| usize::from(b) << i).sum::<usize>()]);
            let got = shapley_exact(&table_game(table)).unwrap();
            for (a, b) in got.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn efficiency_symmetry_dummy(k in 2usize..9, table in prop::collection::vec(-5.0f64..5.0, 256), dummy in 0usize..8) {
            // the dummy player never changes the value; players 0 and 1 are
            // made symmetric by indexing on a canonical coalition
            let dummy = dummy % k;
            prop_assume!(dummy > 1 || k == 2);
            let t = table.clone();
            let g = FnGame {
                n: k,
                f: move |s: &[bool]| {
                    let mut s = s.to_vec();
                    s[dummy] = false;
                    if dummy > 1 && s[0] != s[1] {
                        s[0] = true;
                        s[1] = false;
                    }
                    Ok(t[s.iter().enumerate().map(|(i, &b)| usize::from(b) << i).sum::<usize>()])
                },
            };
            let phi = shapley_exact(&g).unwrap();
            prop_assert!(verify_additivity(&phi, &g).unwrap() < 1e-9);
            prop_assert!(phi[dummy].abs() < 1e-9);
            if dummy > 1 {
                prop_assert!((phi[0] - phi[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn approx_is_exact_on_additive_games(c in prop::collection::vec(-4.0f64..4.0, 2..9), base in -2.0f64..2.0) {
            let cc = c.clone();
            let g = FnGame { n: c.len(), f: move |s: &[bool]| Ok(base + s.iter().zip(&cc).filter(|p| *p.0).map(|p| p.1).sum::<f64>()) };
            let (e, a) = (shapley_exact(&g).unwrap(), shapley_approx(&g).unwrap());
            for i in 0..c.len() {
                prop_assert!((e[i] - c[i]).abs() < 1e-9 && (a[i] - c[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn two_players_approx_equals_exact(t in prop::collection::vec(-9.0f64..9.0, 4)) {
            let g = table_game(t);
            let (e, a) = (shapley_exact(&g).unwrap(), shapley_approx(&g).unwrap());
            prop_assert!((e[0] - a[0]).abs() < 1e-9 && (e[1] - a[1]).abs() < 1e-9);
            prop_assert!(verify_additivity(&a, &g).unwrap() < 1e-9);
        }
    }
}

//! Dataset-level statistics: focus-fire cooperation and observation coverage.

use super::env::EnvConfig;
use crate::episode::Episode;
use crate::error::{invalid, Result};

/// Index of the alive flag inside an agent observation.
const ALIVE_DIM: usize = 3;

/// Fraction of all-attack steps in which every attacker picked the same enemy.
///
/// A step counts only when at least two agents are alive and every alive agent
/// chose an attack. Agents whose observation alive flag is below 0.5 are
/// ignored. Returns `None` when no step qualifies.
pub fn cooperation_metric(dataset: &[Episode], config: &EnvConfig) -> Option<f64> {
    let (mut focused, mut total) = (0usize, 0usize);
    for ep in dataset {
        for (obs_t, act_t) in ep.obs.iter().zip(&ep.actions) {
            let targets: Option<Vec<usize>> = obs_t
                .iter()
                .zip(act_t)
                .filter(|(o, _)| o.get(ALIVE_DIM).is_some_and(|&v| v > 0.5))
                .map(|(_, &a)| config.attack_target(a))
                .collect();
            let Some(targets) = targets else { continue };
            if targets.len() < 2 {
                continue;
            }
            total += 1;
            if targets.iter().all(|&j| j == targets[0]) {
                focused += 1;
            }
        }
    }
    (total > 0).then(|| focused as f64 / total as f64)
}

fn flatten_obs(episodes: &[Episode]) -> Vec<&[f64]> {
    episodes
        .iter()
        .flat_map(|ep| ep.obs.iter().flatten().map(Vec::as_slice))
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean Euclidean distance from each candidate observation vector to its
/// nearest reference observation vector.
pub fn coverage_statistic(reference: &[Episode], candidate: &[Episode]) -> Result<f64> {
    let mut refs = flatten_obs(reference);
    if refs.is_empty() {
        return Err(invalid("coverage needs a non-empty reference set"));
    }
    let cands = flatten_obs(candidate);
    if cands.is_empty() {
        return Ok(0.0);
    }
    let d = refs[0].len();
    if refs.iter().chain(&cands).any(|v| v.len() != d) {
        return Err(invalid("observation widths differ between datasets"));
    }
    if d == 0 {
        return Ok(0.0);
    }

    // Sort by the first coordinate and scan outwards from the insertion point;
    // a side can stop once its first-coordinate gap alone exceeds the best hit.
    refs.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut sum = 0.0;
    for c in &cands {
        let start = refs.partition_point(|r| r[0] < c[0]);
        let mut best = f64::INFINITY;
        for r in &refs[start..] {
            let gap = r[0] - c[0];
            if gap * gap >= best {
                break;
            }
            best = best.min(dist2(r, c));
        }
        for r in refs[..start].iter().rev() {
            let gap = c[0] - r[0];
            if gap * gap >= best {
                break;
            }
            best = best.min(dist2(r, c));
        }
        sum += best.sqrt();
    }
    Ok(sum / cands.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::fixtures::random_episode;
    use crate::marl::env::ATTACK_OFFSET;
    use crate::seed;

    fn alive_obs(n: usize, alive: &[bool]) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut o = vec![0.0; 16];
                o[ALIVE_DIM] = if alive[i] { 1.0 } else { 0.0 };
                o
            })
            .collect()
    }

    fn episode(actions: Vec<Vec<usize>>, alive: Vec<Vec<bool>>) -> Episode {
        let len = actions.len();
        Episode {
            num_agents: 3,
            obs: alive.iter().map(|a| alive_obs(3, a)).collect(),
            actions,
            rewards: vec![0.0; len],
            rtg: None,
            source: None,
        }
    }

    #[test]
    fn cooperation_counts() {
        let cfg = EnvConfig::default();
        let a = |j: usize| ATTACK_OFFSET + j;
        let all = vec![true; 3];
        let ep = episode(
            vec![vec![a(0), a(0), a(0)], vec![a(0), a(1), a(0)], vec![a(2), a(2), a(2)], vec![a(1), a(2), a(0)]],
            vec![all.clone(); 4],
        );
        assert_eq!(cooperation_metric(&[ep], &cfg), Some(0.5));

        let ep = episode(vec![vec![a(0), a(0), a(0)]; 3], vec![all.clone(); 3]);
        assert_eq!(cooperation_metric(&[ep], &cfg), Some(1.0));

        let ep = episode(vec![vec![0, a(0), a(0)], vec![a(1), 3, a(1)]], vec![all.clone(); 2]);
        assert_eq!(cooperation_metric(&[ep], &cfg), None);
    }

    #[test]
    fn cooperation_ignores_dead_agents() {
        let cfg = EnvConfig::default();
        let ep = episode(
            vec![vec![0, ATTACK_OFFSET, ATTACK_OFFSET], vec![0, ATTACK_OFFSET, 0]],
            vec![vec![false, true, true], vec![false, true, false]],
        );
        assert_eq!(cooperation_metric(&[ep], &cfg), Some(1.0));
    }

    #[test]
    fn coverage_identity_and_shift() {
        let mut rng = seed::rng(2);
        let eps: Vec<_> = (0..5).map(|_| random_episode(&mut rng, 2, 4, 3, 6)).collect();
        assert_eq!(coverage_statistic(&eps, &eps).unwrap(), 0.0);
        // Spread the reference out so every shifted point still maps to its source.
        let mut spread = eps.clone();
        let mut k = 0.0;
        for ep in &mut spread {
            for o in ep.obs.iter_mut().flatten() {
                o.iter_mut().for_each(|v| *v += k);
                k += 100.0;
            }
        }
        let mut shifted = spread.clone();
        for o in shifted.iter_mut().flat_map(|e| e.obs.iter_mut().flatten()) {
            o.iter_mut().for_each(|v| *v += 0.01);
        }
        let got = coverage_statistic(&spread, &shifted).unwrap();
        assert!((got - 0.01 * 2.0).abs() < 1e-9, "{got}");
        assert!(coverage_statistic(&[], &eps).is_err());
    }
}

//! Multipass k-means over smoothed story unigrams with symmetrized KL distance.
//!
//! Stories become distributions `mu * relfreq + (1 - mu) * global` over the
//! training vocabulary plus UNK, so every coordinate is positive and the
//! divergence is finite. Centroid updates are accepted per cluster only when
//! they do not raise that cluster's share of the objective, which keeps the
//! objective non-increasing even though the mean does not minimize a
//! symmetrized divergence.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub clusters: usize,
    pub seed: u64,
    pub max_passes: usize,
    /// Stop once a pass improves the objective by less than this.
    pub tolerance: f64,
    /// Weight on a story's own relative frequencies.
    pub smoothing: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            clusters: super::DEFAULT_CLUSTERS,
            seed: 0,
            max_passes: 50,
            tolerance: 1e-6,
            smoothing: super::DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    /// Objective after initial assignment, then after each pass.
    pub objective_trace: Vec<f64>,
}

impl Clustering {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Symmetrized KL divergence (nats) between two positive distributions.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a - b) * (a.ln() - b.ln()))
        .sum()
}

struct Space {
    /// Background share of every story distribution: (1 - mu) * global.
    base: Vec<f64>,
    global: Vec<f64>,
    /// Sparse foreground of each story: (word id, mu * relfreq + base).
    stories: Vec<Vec<(usize, f64)>>,
}

impl Space {
    fn build(bags: &[BTreeMap<String, u32>], mu: f64) -> Self {
        let vocab: BTreeSet<&String> = bags.iter().flat_map(|b| b.keys()).collect();
        let index: HashMap<&String, usize> = vocab.iter().enumerate().map(|(i, w)| (*w, i)).collect();
        let v = vocab.len();
        let mut counts = vec![0.0; v];
        for bag in bags {
            for (w, &c) in bag {
                counts[index[w]] += c as f64;
            }
        }
        let denom = counts.iter().sum::<f64>() + v as f64 + 1.0;
        let mut global: Vec<f64> = counts.iter().map(|c| (c + 1.0) / denom).collect();
        global.push(1.0 / denom);
        let base: Vec<f64> = global.iter().map(|g| (1.0 - mu) * g).collect();
        let stories = bags
            .iter()
            .map(|bag| {
                let n: f64 = bag.values().map(|&c| c as f64).sum();
                bag.iter()
                    .map(|(w, &c)| {
                        let i = index[w];
                        (i, mu * c as f64 / n + base[i])
                    })
                    .collect()
            })
            .collect();
        Space {
            base,
            global,
            stories,
        }
    }

    fn dense(&self, s: usize) -> Vec<f64> {
        if self.stories[s].is_empty() {
            return self.global.clone();
        }
        let mut d = self.base.clone();
        for &(i, p) in &self.stories[s] {
            d[i] = p;
        }
        d
    }
}

struct Centroid {
    prob: Vec<f64>,
    log: Vec<f64>,
    /// Divergence of the background distribution `base` from this centroid.
    base_div: f64,
}

impl Centroid {
    fn new(prob: Vec<f64>, space: &Space) -> Self {
        let log: Vec<f64> = prob.iter().map(|p| p.ln()).collect();
        let base_div = space
            .base
            .iter()
            .zip(prob.iter().zip(&log))
            .map(|(&b, (&c, &lc))| (b - c) * (b.ln() - lc))
            .sum();
        Centroid {
            prob,
            log,
            base_div,
        }
    }

    fn distance(&self, space: &Space, s: usize) -> f64 {
        let story = &space.stories[s];
        if story.is_empty() {
            return symmetric_kl(&space.global, &self.prob);
        }
        let mut d = self.base_div;
        for &(i, p) in story {
            let (c, lc) = (self.prob[i], self.log[i]);
            let b = space.base[i];
            d += (p - c) * (p.ln() - lc) - (b - c) * (b.ln() - lc);
        }
        d.max(0.0)
    }
}

fn nearest(centroids: &[Centroid], space: &Space, s: usize, current: Option<usize>) -> (usize, f64) {
    let mut best = current.map_or((usize::MAX, f64::INFINITY), |c| (c, centroids[c].distance(space, s)));
    for (j, c) in centroids.iter().enumerate() {
        let d = c.distance(space, s);
        // keep the current cluster on ties; otherwise the lowest index wins
        if d < best.1 || best.0 == usize::MAX {
            best = (j, d);
        }
    }
    best
}

fn mean_of(space: &Space, members: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; space.base.len()];
    for &s in members {
        if space.stories[s].is_empty() {
            for ((a, g), b) in acc.iter_mut().zip(&space.global).zip(&space.base) {
                *a += g - b;
            }
        } else {
            for &(i, p) in &space.stories[s] {
                acc[i] += p - space.base[i];
            }
        }
    }
    let n = members.len() as f64;
    acc.iter()
        .zip(&space.base)
        .map(|(a, b)| a / n + b)
        .collect()
}

/// Clusters content-word bags into `config.clusters` groups.
pub fn cluster_stories(bags: &[BTreeMap<String, u32>], config: &ClusterConfig) -> Result<Clustering> {
    let k = config.clusters;
    if k == 0 {
        return Err(Error::config("cluster count must be positive"));
    }
    if bags.len() < k {
        return Err(Error::config(format!(
            "need at least {k} stories to form {k} clusters, got {}",
            bags.len()
        )));
    }
    if !(config.smoothing > 0.0 && config.smoothing < 1.0) {
        return Err(Error::config("clustering smoothing must lie in (0, 1)"));
    }
    let space = Space::build(bags, config.smoothing);
    let n = bags.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // k-means++ seeding on distinct stories
    let mut chosen = vec![rng.random_range(0..n)];
    let mut min_dist: Vec<f64> = {
        let c = Centroid::new(space.dense(chosen[0]), &space);
        (0..n).into_par_iter().map(|s| c.distance(&space, s)).collect()
    };
    min_dist[chosen[0]] = 0.0;
    while chosen.len() < k {
        let total: f64 = (0..n)
            .filter(|s| !chosen.contains(s))
            .map(|s| min_dist[s])
            .sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for s in (0..n).filter(|s| !chosen.contains(s)) {
                r -= min_dist[s];
                if r <= 0.0 && min_dist[s] > 0.0 {
                    pick = Some(s);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|s| !chosen.contains(s) && min_dist[*s] > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|s| !chosen.contains(s)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        let c = Centroid::new(space.dense(pick), &space);
        let d: Vec<f64> = (0..n).into_par_iter().map(|s| c.distance(&space, s)).collect();
        for (m, d) in min_dist.iter_mut().zip(d) {
            *m = m.min(d);
        }
        min_dist[pick] = 0.0;
    }
    let mut centroids: Vec<Centroid> = chosen
        .iter()
        .map(|&s| Centroid::new(space.dense(s), &space))
        .collect();

    let assign = |centroids: &[Centroid], current: Option<&[usize]>| -> Vec<(usize, f64)> {
        (0..n)
            .into_par_iter()
            .map(|s| nearest(centroids, &space, s, current.map(|c| c[s])))
            .collect()
    };
    let initial = assign(&centroids, None);
    let mut assignment: Vec<usize> = initial.iter().map(|a| a.0).collect();
    let mut dist: Vec<f64> = initial.iter().map(|a| a.1).collect();
    let mut trace = vec![dist.iter().sum::<f64>()];

    for _ in 0..config.max_passes {
        // centroid step, accepted per cluster only if it does not hurt
        let mut members = vec![Vec::new(); k];
        for (s, &a) in assignment.iter().enumerate() {
            members[a].push(s);
        }
        let updates: Vec<Option<(Centroid, Vec<f64>)>> = members
            .par_iter()
            .map(|m| {
                if m.is_empty() {
                    return None;
                }
                let cand = Centroid::new(mean_of(&space, m), &space);
                let new_d: Vec<f64> = m.iter().map(|&s| cand.distance(&space, s)).collect();
                let old: f64 = m.iter().map(|&s| dist[s]).sum();
                (new_d.iter().sum::<f64>() <= old).then_some((cand, new_d))
            })
            .collect();
        for (j, u) in updates.into_iter().enumerate() {
            if let Some((c, new_d)) = u {
                for (&s, d) in members[j].iter().zip(new_d) {
                    dist[s] = d;
                }
                centroids[j] = c;
            }
        }

        // assignment step
        for (s, (a, d)) in assign(&centroids, Some(&assignment)).into_iter().enumerate() {
            assignment[s] = a;
            dist[s] = d;
        }

        // re-seed empty clusters from the farthest story of a multi-member cluster
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&s| sizes[assignment[s]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(s) = far {
                sizes[assignment[s]] -= 1;
                sizes[j] = 1;
                assignment[s] = j;
                centroids[j] = Centroid::new(space.dense(s), &space);
                dist[s] = 0.0;
            }
        }

        let objective: f64 = dist.iter().sum();
        let prev = *trace.last().unwrap();
        debug_assert!(
            objective <= prev + 1e-9 * prev.abs().max(1.0),
            "k-means objective rose from {prev} to {objective}"
        );
        trace.push(objective);
        if prev - objective < config.tolerance {
            break;
        }
    }
    Ok(Clustering {
        assignment,
        objective_trace: trace,
    })
}

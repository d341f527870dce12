//! Brute-force oracles and random instance generators shared by the
//! integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicseg::corpus::{Show, Token};
use topicseg::hmm::{Emissions, HmmConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small decoding problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub clusters: usize,
    pub units: usize,
    pub topic: Vec<Vec<f64>>,
    pub begin_end: Option<(Vec<f64>, Vec<f64>)>,
    pub boundary: Option<Vec<(f64, f64)>>,
    pub log_tsp: f64,
    pub mcw: f64,
}

impl Instance {
    pub fn random(r: &mut ChaCha8Rng, with_boundary: bool, with_begin_end: bool) -> Instance {
        let clusters = r.random_range(1..=3);
        let units: usize = r.random_range(1..=4);
        let topic = (0..units)
            .map(|_| (0..clusters).map(|_| r.random_range(-6.0..0.0)).collect())
            .collect();
        let begin_end = with_begin_end.then(|| {
            (
                (0..units).map(|_| r.random_range(-6.0..0.0)).collect(),
                (0..units).map(|_| r.random_range(-6.0..0.0)).collect(),
            )
        });
        let boundary = with_boundary.then(|| {
            (0..units.saturating_sub(1))
                .map(|_| {
                    let p: f64 = r.random_range(0.01..0.99);
                    (p.ln(), (1.0 - p).ln())
                })
                .collect()
        });
        Instance {
            clusters,
            units,
            topic,
            begin_end,
            boundary,
            log_tsp: r.random_range(-4.0..1.0),
            mcw: r.random_range(0.0..2.0),
        }
    }

    pub fn config(&self) -> HmmConfig {
        let mut c = HmmConfig::new(self.clusters, 1.0).unwrap();
        c.log_tsp = self.log_tsp;
        c.with_begin_end(self.begin_end.is_some()).with_mcw(self.mcw)
    }

    pub fn emissions(&self) -> Emissions {
        let e = Emissions::new(self.units, self.clusters, self.topic.iter().flatten().copied().collect()).unwrap();
        match &self.begin_end {
            Some((b, en)) => e.with_begin_end(b.clone(), en.clone()).unwrap(),
            None => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Topic,
    Begin,
    End,
}

/// One complete path: a unit state per unit and a boundary state per gap.
#[derive(Debug, Clone)]
pub struct Path {
    /// (role, cluster) per unit.
    states: Vec<(Role, usize)>,
    /// `Some(j)` for B_j, `None` for an internal transition.
    pub topic_boundary: Vec<Option<usize>>,
    /// Cluster of the internal-transition state at each gap.
    pub internal: Vec<Option<usize>>,
    pub log_weight: f64,
}

/// Every path through the segmentation HMM, with its log weight.
///
/// A story is an optional BEGIN unit, one or more topic units, then an
/// optional END unit, all tagged with the story's cluster. Consecutive units
/// of one story are joined by N_j; a new story starts after B_j with the
/// switch penalty, where j is the cluster of the story being closed.
pub fn enumerate_paths(inst: &Instance) -> Vec<Path> {
    let mut roles = vec![Role::Topic];
    if inst.begin_end.is_some() {
        roles.extend([Role::Begin, Role::End]);
    }
    let states: Vec<(Role, usize)> = roles
        .iter()
        .flat_map(|&r| (0..inst.clusters).map(move |j| (r, j)))
        .collect();
    let emit = |i: usize, (r, j): (Role, usize)| -> f64 {
        match r {
            Role::Topic => inst.topic[i][j],
            Role::Begin => inst.begin_end.as_ref().unwrap().0[i],
            Role::End => inst.begin_end.as_ref().unwrap().1[i],
        }
    };
    let boundary = |i: usize, yes: bool| -> f64 {
        match &inst.boundary {
            Some(b) if inst.mcw != 0.0 => inst.mcw * if yes { b[i].0 } else { b[i].1 },
            _ => 0.0,
        }
    };
    let n = inst.units;
    let s = states.len();
    let mut out = Vec::new();
    let total_seq = s.pow(n as u32);
    for code in 0..total_seq {
        let mut seq = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            seq.push(states[c % s]);
            c /= s;
        }
        if !matches!(seq[0].0, Role::Topic | Role::Begin) || !matches!(seq[n - 1].0, Role::Topic | Role::End) {
            continue;
        }
        for mask in 0..(1u32 << (n - 1)) {
            let mut w: f64 = (0..n).map(|i| emit(i, seq[i])).sum();
            let mut tb = Vec::new();
            let mut nb = Vec::new();
            let mut ok = true;
            for i in 0..n - 1 {
                let (a, b) = (seq[i], seq[i + 1]);
                if mask >> i & 1 == 1 {
                    let closes = matches!(a.0, Role::Topic | Role::End);
                    let opens = matches!(b.0, Role::Topic | Role::Begin);
                    if !(closes && opens) {
                        ok = false;
                        break;
                    }
                    w += inst.log_tsp + boundary(i, true);
                    tb.push(Some(a.1));
                    nb.push(None);
                } else {
                    let same = a.1 == b.1;
                    let step = matches!(
                        (a.0, b.0),
                        (Role::Topic, Role::Topic) | (Role::Begin, Role::Topic) | (Role::Topic, Role::End)
                    );
                    if !(same && step) {
                        ok = false;
                        break;
                    }
                    w += boundary(i, false);
                    tb.push(None);
                    nb.push(Some(a.1));
                }
            }
            if ok {
                out.push(Path {
                    states: seq.clone(),
                    topic_boundary: tb,
                    internal: nb,
                    log_weight: w,
                });
            }
        }
    }
    out
}

pub fn log_sum_exp(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Oracle summaries: best weight, total weight, and per-gap B_j / N_j posteriors.
pub struct PathSummary {
    pub best: f64,
    pub log_total: f64,
    pub topic: Vec<Vec<f64>>,
    pub internal: Vec<Vec<f64>>,
}

pub fn summarize(inst: &Instance) -> PathSummary {
    let paths = enumerate_paths(inst);
    let best = paths.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let log_total = log_sum_exp(paths.iter().map(|p| p.log_weight));
    let gaps = inst.units.saturating_sub(1);
    let mut topic = vec![vec![0.0; inst.clusters]; gaps];
    let mut internal = vec![vec![0.0; inst.clusters]; gaps];
    for p in &paths {
        let pr = (p.log_weight - log_total).exp();
        for i in 0..gaps {
            if let Some(j) = p.topic_boundary[i] {
                topic[i][j] += pr;
            }
            if let Some(j) = p.internal[i] {
                internal[i][j] += pr;
            }
        }
    }
    PathSummary {
        best,
        log_total,
        topic,
        internal,
    }
}

/// Word probe counts by direct pair enumeration: (miss, miss_den, fa, fa_den).
pub fn word_probe_oracle(n: usize, reference: &[usize], hypothesis: &[usize], k: usize) -> (u64, u64, u64, u64) {
    let story = |bounds: &[usize], i: usize| bounds.iter().filter(|&&b| b <= i).count();
    let (mut miss, mut miss_den, mut fa, mut fa_den) = (0, 0, 0, 0);
    if n > k {
        for i in 0..n - k {
            let ref_same = story(reference, i) == story(reference, i + k);
            let hyp_same = story(hypothesis, i) == story(hypothesis, i + k);
            match (ref_same, hyp_same) {
                (false, true) => {
                    miss += 1;
                    miss_den += 1
                }
                (false, false) => miss_den += 1,
                (true, false) => {
                    fa += 1;
                    fa_den += 1
                }
                (true, true) => fa_den += 1,
            }
        }
    }
    (miss, miss_den, fa, fa_den)
}

/// Time probe mass by summing over a 0.01 s grid. All times are given in
/// integer hundredths of a second: (miss, miss_den, fa, fa_den) in seconds.
pub fn time_probe_oracle(duration_cs: i64, reference_cs: &[i64], hypothesis_cs: &[i64], delta_cs: i64) -> (f64, f64, f64, f64) {
    let story = |bounds: &[i64], t: i64| bounds.iter().filter(|&&b| b <= t).count();
    let (mut miss, mut miss_den, mut fa, mut fa_den) = (0i64, 0i64, 0i64, 0i64);
    for t in 0..(duration_cs - delta_cs).max(0) {
        let ref_same = story(reference_cs, t) == story(reference_cs, t + delta_cs);
        let hyp_same = story(hypothesis_cs, t) == story(hypothesis_cs, t + delta_cs);
        match (ref_same, hyp_same) {
            (false, true) => {
                miss += 1;
                miss_den += 1
            }
            (false, false) => miss_den += 1,
            (true, false) => {
                fa += 1;
                fa_den += 1
            }
            (true, true) => fa_den += 1,
        }
    }
    let s = |x: i64| x as f64 * 0.01;
    (s(miss), s(miss_den), s(fa), s(fa_den))
}

/// A random show whose token times are multiples of 0.02 s, so every
/// boundary time (a pause midpoint) falls on the 0.01 s grid.
pub struct TimedShow {
    pub show: Show,
    pub hypothesis: Vec<usize>,
}

fn random_boundaries(r: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<usize> {
    (1..n).filter(|_| r.random_bool(rate)).collect()
}

pub fn random_timed_show(r: &mut ChaCha8Rng, id: usize, max_tokens: usize) -> TimedShow {
    let n = r.random_range(2..=max_tokens);
    let mut t = 0i64; // units of 0.02 s
    let mut tokens = Vec::with_capacity(n);
    for i in 0..n {
        let dur = r.random_range(5..25);
        tokens.push(Token::new(format!("w{i}"), t as f64 * 0.02, (t + dur) as f64 * 0.02));
        t += dur + if r.random_bool(0.2) { r.random_range(10..80) } else { r.random_range(0..4) };
    }
    let rate = r.random_range(0.0..0.1);
    let show = Show {
        show_id: format!("show{id}"),
        source_type: "src".into(),
        tokens,
        ref_boundaries: random_boundaries(r, n, rate),
        sentence_boundaries: None,
        duration: (t + r.random_range(0..50)) as f64 * 0.02,
    };
    show.validate().unwrap();
    let hyp_rate = r.random_range(0.0..0.1);
    let hypothesis = random_boundaries(r, n, hyp_rate);
    TimedShow { show, hypothesis }
}

/// Hundredths of a second, exact for times on the 0.01 s grid.
pub fn centis(t: f64) -> i64 {
    (t * 100.0).round() as i64
}

pub mod experiment;

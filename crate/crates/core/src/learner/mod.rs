//! Gibbs sampling of the joint posterior over place indices, concept indices
//! and global parameters.

pub mod chain;
pub mod conjugate;
pub mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptModel, Hyperparameters, LatentAssignment, TeachingDataset};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::scalar::{sample_log_categorical, Scalar};

use conjugate::{dirichlet_log_pdf, dirichlet_mean, sample_dirichlet, Niw};

pub use metrics::{ari, nmi, transition_l1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Random,
    KmeansPositions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub reverse_replay: bool,
    pub init_mode: InitMode,
    /// When false, `psi` stays uniform: the place-adjacency-free variant.
    pub learn_transitions: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: 500,
            seed: 0,
            reverse_replay: false,
            init_mode: InitMode::KmeansPositions,
            learn_transitions: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput("burn_in must be smaller than iterations".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LearnResult<T> {
    /// Conditional posterior point estimate given the final assignment.
    pub model: ConceptModel<T>,
    pub assignment: LatentAssignment,
    /// Log joint after every sweep.
    pub log_joint_trace: Vec<T>,
    /// Post-burn-in sweep with the highest log joint, with its point estimate.
    pub best_model: ConceptModel<T>,
    pub best_assignment: LatentAssignment,
    pub best_sweep: usize,
}

/// Transition counts `n[j][k]` along the place sequence, plus the reversed
/// sequence when `reverse_replay` is set.
pub fn transition_counts(seq: &[usize], k_max: usize, reverse_replay: bool) -> Vec<Vec<usize>> {
    let mut n = vec![vec![0usize; k_max]; k_max];
    for w in seq.windows(2) {
        n[w[0]][w[1]] += 1;
        if reverse_replay {
            n[w[1]][w[0]] += 1;
        }
    }
    n
}

fn psi_alphas<T: Scalar>(counts: &[Vec<usize>], omega: T) -> Vec<Vec<T>> {
    let k = counts.len();
    let base = omega / T::lit(k as f64);
    counts.iter().map(|row| row.iter().map(|&c| base + T::lit(c as f64)).collect()).collect()
}

/// Draws every row of `psi` from `Dir(omega / K + counts)`.
pub fn sample_psi<T: Scalar, R: Rng + ?Sized>(
    seq: &[usize],
    k_max: usize,
    omega: T,
    reverse_replay: bool,
    rng: &mut R,
) -> Vec<Vec<T>> {
    let counts = transition_counts(seq, k_max, reverse_replay);
    psi_alphas(&counts, omega).iter().map(|a| sample_dirichlet(a, rng)).collect()
}

struct Stats<T> {
    concept: Vec<T>,
    place_by_concept: Vec<Vec<T>>,
    feature_by_concept: Vec<Vec<T>>,
    word_by_concept: Vec<Vec<T>>,
    /// `None` keeps `psi` uniform.
    psi: Option<Vec<Vec<T>>>,
    niw: Vec<Niw<T>>,
}

/// Dirichlet / NIW posterior parameters given a complete assignment.
fn posterior_stats<T: Scalar>(
    ds: &TeachingDataset,
    a: &LatentAssignment,
    hyper: &Hyperparameters<T>,
    n_words: usize,
    learn_transitions: bool,
    reverse_replay: bool,
    points: &[Vec2<T>],
) -> Stats<T> {
    let (l, k) = (hyper.l_max, hyper.k_max);
    let f = ds.n_features.max(1);
    let alpha = hyper.alpha / T::lit(l as f64);
    let gamma = hyper.gamma / T::lit(k as f64);
    let mut concept = vec![alpha; l];
    let mut place_by_concept = vec![vec![gamma; k]; l];
    let mut feature_by_concept = vec![vec![hyper.chi; f]; l];
    let mut word_by_concept = vec![vec![hyper.beta; n_words.max(1)]; l];
    let mut members: Vec<Vec<Vec2<T>>> = vec![Vec::new(); k];
    for (e, ev) in ds.events.iter().enumerate() {
        let (c, i) = (a.c[e], a.i[e]);
        concept[c] = concept[c] + T::one();
        place_by_concept[c][i] = place_by_concept[c][i] + T::one();
        for (slot, &n) in feature_by_concept[c].iter_mut().zip(&ev.feature) {
            *slot = *slot + T::lit(n as f64);
        }
        for &s in &ev.words {
            word_by_concept[c][s] = word_by_concept[c][s] + T::one();
        }
        members[i].push(points[e]);
    }
    let psi = learn_transitions.then(|| psi_alphas(&transition_counts(&a.i, k, reverse_replay), hyper.omega));
    let prior = Niw::prior(hyper.m0, hyper.kappa0, hyper.v0, hyper.nu0);
    let niw = members.iter().map(|pts| prior.posterior(pts)).collect();
    Stats { concept, place_by_concept, feature_by_concept, word_by_concept, psi, niw }
}

fn clamp_to_map<T: Scalar>(mu: Vec2<T>, shape: [usize; 2]) -> Vec2<T> {
    let lo = T::zero();
    [
        mu[0].max(lo).min(T::lit(shape[0] as f64 - 1.0)),
        mu[1].max(lo).min(T::lit(shape[1] as f64 - 1.0)),
    ]
}

fn draw_model<T: Scalar, R: Rng + ?Sized>(st: &Stats<T>, template: &ConceptModel<T>, rng: &mut R) -> ConceptModel<T> {
    let mut m = template.clone();
    m.pi = sample_dirichlet(&st.concept, rng);
    m.phi = st.place_by_concept.iter().map(|a| sample_dirichlet(a, rng)).collect();
    m.theta = st.feature_by_concept.iter().map(|a| sample_dirichlet(a, rng)).collect();
    m.w = st.word_by_concept.iter().map(|a| sample_dirichlet(a, rng)).collect();
    if let Some(psi) = &st.psi {
        m.psi = psi.iter().map(|a| sample_dirichlet(a, rng)).collect();
    }
    for (k, niw) in st.niw.iter().enumerate() {
        let (mu, sigma) = niw.sample(rng);
        m.mu[k] = clamp_to_map(mu, m.map_shape);
        m.sigma[k] = sigma;
    }
    m
}

fn point_model<T: Scalar>(st: &Stats<T>, template: &ConceptModel<T>) -> ConceptModel<T> {
    let mut m = template.clone();
    m.pi = dirichlet_mean(&st.concept);
    m.phi = st.place_by_concept.iter().map(|a| dirichlet_mean(a)).collect();
    m.theta = st.feature_by_concept.iter().map(|a| dirichlet_mean(a)).collect();
    m.w = st.word_by_concept.iter().map(|a| dirichlet_mean(a)).collect();
    if let Some(psi) = &st.psi {
        m.psi = psi.iter().map(|a| dirichlet_mean(a)).collect();
    }
    for (k, niw) in st.niw.iter().enumerate() {
        let (mu, sigma) = niw.point_estimate();
        m.mu[k] = clamp_to_map(mu, m.map_shape);
        m.sigma[k] = sigma;
    }
    m
}

/// Conditional posterior point estimate of the global parameters given an
/// assignment.
pub fn point_estimate<T: Scalar>(
    ds: &TeachingDataset,
    a: &LatentAssignment,
    map_shape: [usize; 2],
    hyper: &Hyperparameters<T>,
    config: &GibbsConfig,
) -> Result<ConceptModel<T>> {
    a.validate(hyper.l_max, hyper.k_max)?;
    if a.c.len() != ds.n_events() {
        return Err(Error::InvalidInput("assignment length differs from event count".into()));
    }
    let points: Vec<Vec2<T>> = event_points(ds);
    let template = ConceptModel::uniform(hyper.l_max, hyper.k_max, ds.vocab.clone(), ds.n_features, map_shape);
    let st = posterior_stats(ds, a, hyper, ds.vocab.len(), config.learn_transitions, config.reverse_replay, &points);
    Ok(point_model(&st, &template))
}

/// Lloyd's k-means with k-means++ seeding; returns the cluster of each point.
pub fn kmeans<T: Scalar, R: Rng + ?Sized>(points: &[Vec2<T>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let d2 = |a: &Vec2<T>, b: &Vec2<T>| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centers: Vec<Vec2<T>> = vec![points[rng.random_range(0..n)]];
    while centers.len() < k.min(n) {
        let w: Vec<T> = points
            .iter()
            .map(|p| centers.iter().map(|c| d2(p, c)).fold(T::infinity(), T::min))
            .collect();
        let total: T = w.iter().copied().sum();
        if total <= T::zero() {
            break;
        }
        let logs: Vec<T> = w.iter().map(|&x| x.ln()).collect();
        centers.push(points[sample_log_categorical(&logs, rng)]);
    }
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (p, slot) in points.iter().zip(assign.iter_mut()) {
            let mut best = (0, T::infinity());
            for (ci, c) in centers.iter().enumerate() {
                let d = d2(p, c);
                if d < best.1 {
                    best = (ci, d);
                }
            }
            if *slot != best.0 {
                *slot = best.0;
                changed = true;
            }
        }
        let mut sums = vec![[T::zero(); 2]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] = sums[a][0] + p[0];
            sums[a][1] = sums[a][1] + p[1];
            counts[a] += 1;
        }
        for (c, (s, &n)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                let nn = T::lit(n as f64);
                *c = [s[0] / nn, s[1] / nn];
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

fn sample_concepts<T: Scalar, R: Rng + ?Sized>(
    ds: &TeachingDataset,
    model: &ConceptModel<T>,
    a: &mut LatentAssignment,
    rng: &mut R,
) -> Result<()> {
    let l = model.n_concepts();
    let mut logw = vec![T::zero(); l];
    for (e, ev) in ds.events.iter().enumerate() {
        let i = a.i[e];
        for (c, slot) in logw.iter_mut().enumerate() {
            *slot = model.pi[c].ln()
                + model.word_likelihood(&ev.words, c)?
                + model.feature_log_mult(&ev.feature, c)
                + model.phi[c][i].ln();
        }
        a.c[e] = sample_log_categorical(&logw, rng);
    }
    Ok(())
}

fn place_node_potentials<T: Scalar>(
    model: &ConceptModel<T>,
    concepts: &[usize],
    points: &[Vec2<T>],
) -> Result<Vec<Vec<T>>> {
    let k = model.n_places();
    let gauss: Vec<_> = (0..k).map(|j| model.gaussian(j)).collect::<Result<_>>()?;
    let col_log_sum: Vec<T> = (0..k).map(|j| model.phi_column_log_sum(j)).collect();
    Ok(concepts
        .iter()
        .zip(points)
        .map(|(&c, x)| (0..k).map(|j| model.phi[c][j].ln() - col_log_sum[j] + gauss[j].log_pdf(*x)).collect())
        .collect())
}

/// Samples `i_{1:E}` jointly given concepts and parameters. The first place
/// has a uniform prior.
pub fn sample_places<T: Scalar, R: Rng + ?Sized>(
    model: &ConceptModel<T>,
    concepts: &[usize],
    points: &[Vec2<T>],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = model.n_places();
    let init = vec![-(T::lit(k as f64).ln()); k];
    let trans: Vec<Vec<T>> = model.psi.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
    let node = place_node_potentials(model, concepts, points)?;
    Ok(chain::ffbs(&init, &trans, &node, rng))
}

fn event_points<T: Scalar>(ds: &TeachingDataset) -> Vec<Vec2<T>> {
    (0..ds.n_events()).map(|e| ds.event_pose(e).coord()).collect()
}

/// Log of the joint density of all in-scope factors.
pub fn log_joint<T: Scalar>(
    ds: &TeachingDataset,
    model: &ConceptModel<T>,
    a: &LatentAssignment,
    hyper: &Hyperparameters<T>,
) -> Result<T> {
    model.validate()?;
    let (l, k) = (model.n_concepts(), model.n_places());
    a.validate(l, k)?;
    if a.c.len() != ds.n_events() {
        return Err(Error::InvalidInput("assignment length differs from event count".into()));
    }
    let lt = T::lit(l as f64);
    let kt = T::lit(k as f64);
    let mut acc = dirichlet_log_pdf(&model.pi, &vec![hyper.alpha / lt; l]);
    for row in &model.phi {
        acc = acc + dirichlet_log_pdf(row, &vec![hyper.gamma / kt; k]);
    }
    for row in &model.theta {
        acc = acc + dirichlet_log_pdf(row, &vec![hyper.chi; row.len()]);
    }
    for row in &model.w {
        acc = acc + dirichlet_log_pdf(row, &vec![hyper.beta; row.len()]);
    }
    for row in &model.psi {
        acc = acc + dirichlet_log_pdf(row, &vec![hyper.omega / kt; k]);
    }
    let prior = Niw::prior(hyper.m0, hyper.kappa0, hyper.v0, hyper.nu0);
    for j in 0..k {
        acc = acc + prior.log_pdf(model.mu[j], &model.sigma[j]);
    }
    for (e, ev) in ds.events.iter().enumerate() {
        let (c, i) = (a.c[e], a.i[e]);
        acc = acc + model.pi[c].ln() + model.feature_log_mult(&ev.feature, c) + model.word_likelihood(&ev.words, c)?;
        acc = acc
            + if e == 0 {
                -kt.ln() + model.phi[c][i].ln() - model.phi_column_log_sum(i)
            } else {
                model.place_transition_score(a.i[e - 1], i, c)
            };
        acc = acc + model.position_emission(ds.event_pose(e), i)?;
    }
    Ok(acc)
}

/// Runs the sampler.
pub fn gibbs_fit<T: Scalar>(
    ds: &TeachingDataset,
    map_shape: [usize; 2],
    hyper: &Hyperparameters<T>,
    config: &GibbsConfig,
) -> Result<LearnResult<T>> {
    gibbs_fit_observed(ds, map_shape, hyper, config, |_, _, _| {})
}

/// [`gibbs_fit`] calling `on_sweep(sweep, model, assignment)` after every
/// sweep with the freshly drawn parameters.
pub fn gibbs_fit_observed<T: Scalar>(
    ds: &TeachingDataset,
    map_shape: [usize; 2],
    hyper: &Hyperparameters<T>,
    config: &GibbsConfig,
    mut on_sweep: impl FnMut(usize, &ConceptModel<T>, &LatentAssignment),
) -> Result<LearnResult<T>> {
    hyper.validate()?;
    config.validate()?;
    ds.validate(None)?;
    let (l, k) = (hyper.l_max, hyper.k_max);
    let n_events = ds.n_events();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points: Vec<Vec2<T>> = event_points(ds);
    let template = ConceptModel::uniform(l, k, ds.vocab.clone(), ds.n_features, map_shape);
    let n_words = ds.vocab.len();

    let mut a = LatentAssignment {
        c: (0..n_events).map(|_| rng.random_range(0..l)).collect(),
        i: match config.init_mode {
            InitMode::Random => (0..n_events).map(|_| rng.random_range(0..k)).collect(),
            InitMode::KmeansPositions => kmeans(&points, k, &mut rng),
        },
    };
    let stats = |a: &LatentAssignment| {
        posterior_stats(ds, a, hyper, n_words, config.learn_transitions, config.reverse_replay, &points)
    };
    let mut model = draw_model(&stats(&a), &template, &mut rng);

    let mut trace = Vec::with_capacity(config.iterations);
    let mut best: Option<(T, usize, LatentAssignment)> = None;
    for sweep in 0..config.iterations {
        sample_concepts(ds, &model, &mut a, &mut rng)?;
        a.i = sample_places(&model, &a.c, &points, &mut rng)?;
        model = draw_model(&stats(&a), &template, &mut rng);
        debug_assert!(model.validate().is_ok());
        on_sweep(sweep, &model, &a);
        let lj = log_joint(ds, &model, &a, hyper)?;
        trace.push(lj);
        if sweep >= config.burn_in && best.as_ref().is_none_or(|(b, _, _)| lj > *b) {
            best = Some((lj, sweep, a.clone()));
        }
    }
    let (_, best_sweep, best_assignment) = best.expect("at least one post-burn-in sweep");
    let final_model = point_model(&stats(&a), &template);
    let best_model = point_model(&stats(&best_assignment), &template);
    final_model.validate()?;
    Ok(LearnResult {
        model: final_model,
        assignment: a,
        log_joint_trace: trace,
        best_model,
        best_assignment,
        best_sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::{TeachingEvent, Vocabulary};
    use crate::grid_map::GridPose;

    fn one_event() -> TeachingDataset {
        TeachingDataset {
            trajectory: vec![GridPose::new(3, 3), GridPose::new(3, 4)],
            events: vec![TeachingEvent { t_end: 1, words: vec![0], feature: vec![2, 0], is_event: true }],
            vocab: Vocabulary::from(vec!["kitchen".to_string()]),
            n_features: 2,
            truth_c: None,
            truth_i: None,
        }
    }

    #[test]
    fn forced_assignment_gives_niw_mean() {
        let ds = one_event();
        let hyper = Hyperparameters::<f64> { l_max: 1, k_max: 1, ..Default::default() };
        let cfg = GibbsConfig { iterations: 5, burn_in: 2, ..Default::default() };
        let r = gibbs_fit(&ds, [10, 10], &hyper, &cfg).unwrap();
        assert_eq!(r.assignment, LatentAssignment { c: vec![0], i: vec![0] });
        let x = [3.0, 4.0];
        for d in 0..2 {
            let expect = (hyper.kappa0 * hyper.m0[d] + x[d]) / (hyper.kappa0 + 1.0);
            assert!((r.model.mu[0][d] - expect).abs() < 1e-12);
        }
        assert_eq!(r.log_joint_trace.len(), 5);
    }

    #[test]
    fn rejects_bad_config() {
        let ds = one_event();
        let hyper = Hyperparameters::<f64>::default();
        let cfg = GibbsConfig { iterations: 5, burn_in: 5, ..Default::default() };
        assert!(gibbs_fit(&ds, [10, 10], &hyper, &cfg).is_err());
        let h0 = Hyperparameters::<f64> { k_max: 0, ..Default::default() };
        assert!(gibbs_fit(&ds, [10, 10], &h0, &GibbsConfig::default()).is_err());
        let mut empty = ds;
        empty.events.clear();
        assert!(gibbs_fit(&empty, [10, 10], &hyper, &GibbsConfig::default()).is_err());
    }

    #[test]
    fn transition_count_examples() {
        let n = transition_counts(&[0, 1, 0, 1], 2, false);
        assert_eq!(n, vec![vec![0, 2], vec![1, 0]]);
        let n = transition_counts(&[0, 1, 0, 1], 2, true);
        assert_eq!(n[0][1], 3);
        assert_eq!(n[1][0], 3);
        assert!(transition_counts(&[1], 3, true).iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn replay_counts_are_order_invariant() {
        let seq = [0, 2, 1, 1, 0, 2, 2];
        let rev: Vec<usize> = seq.iter().rev().copied().collect();
        assert_eq!(transition_counts(&seq, 3, true), transition_counts(&rev, 3, true));
    }

    #[test]
    fn psi_with_no_transitions_is_a_prior_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = sample_psi::<f64, _>(&[2], 3, 1.0, true, &mut rng);
        for row in &psi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_joint_is_pure_and_checks_simplexes() {
        let ds = one_event();
        let hyper = Hyperparameters::<f64> { l_max: 2, k_max: 2, ..Default::default() };
        let m = ConceptModel::<f64>::uniform(2, 2, ds.vocab.clone(), 2, [10, 10]);
        let a = LatentAssignment { c: vec![1], i: vec![0] };
        let v1 = log_joint(&ds, &m, &a, &hyper).unwrap();
        let v2 = log_joint(&ds, &m, &a, &hyper).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
        let mut bad = m;
        bad.theta[0] = vec![0.5, 0.6];
        assert!(matches!(log_joint(&ds, &bad, &a, &hyper), Err(Error::Invariant(_))));
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for i in 0..20 {
            let j = (i % 5) as f64 * 0.1;
            pts.push([j, j]);
            pts.push([50.0 + j, 50.0 - j]);
        }
        let lab = kmeans(&pts, 2, &mut rng);
        for i in 0..20 {
            assert_eq!(lab[2 * i], lab[0]);
            assert_eq!(lab[2 * i + 1], lab[1]);
        }
        assert_ne!(lab[0], lab[1]);
    }
}

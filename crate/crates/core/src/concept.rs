//! Parameters of the spatial concept model, the teaching data it is learned
//! from, and the per-factor likelihoods shared by the learner and planners.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_map::{GridPose, OccupancyGrid};
use crate::linalg::{Gaussian2, Mat2, Vec2};
use crate::scalar::Scalar;

pub const MODEL_SCHEMA: &str = "topo-nav.concept-model";
pub const MODEL_VERSION: u32 = 1;
pub const DATASET_SCHEMA: &str = "topo-nav.teaching-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_FEATURES: usize = 16;

/// Interned word table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut v = Vocabulary::default();
        for w in words {
            v.intern(&w);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn intern(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Known words within edit distance 2 of `word`, closest first.
    pub fn suggestions(&self, word: &str) -> Vec<String> {
        let mut hits: Vec<(usize, &String)> = self
            .words
            .iter()
            .map(|w| (edit_distance(w, word), w))
            .filter(|(d, _)| *d <= 2)
            .collect();
        hits.sort();
        hits.into_iter().map(|(_, w)| w.clone()).collect()
    }

    /// Resolves space-separated words to ids.
    pub fn lookup_all(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w).ok_or_else(|| Error::UnknownWord { word: w.to_string(), suggestions: self.suggestions(w) })
            })
            .collect()
    }
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Hyperparameters<T> {
    /// DP concentration of the concept weights `pi`.
    pub alpha: T,
    /// DP concentration of each concept's place weights `phi_l`.
    pub gamma: T,
    /// Dirichlet parameter of the word distributions `W_l`.
    pub beta: T,
    /// Dirichlet parameter of the feature distributions `theta_l`.
    pub chi: T,
    /// DP concentration of the place-transition rows `psi_k`.
    pub omega: T,
    pub m0: Vec2<T>,
    pub kappa0: T,
    pub v0: Mat2<T>,
    pub nu0: T,
    pub l_max: usize,
    pub k_max: usize,
}

impl<T: Scalar> Default for Hyperparameters<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.5),
            gamma: T::lit(0.05),
            beta: T::lit(0.1),
            chi: T::lit(1.0),
            omega: T::lit(1.0),
            m0: [T::zero(), T::zero()],
            kappa0: T::lit(0.001),
            v0: Mat2::diag(T::lit(2.0), T::lit(2.0)),
            nu0: T::lit(3.0),
            l_max: 24,
            k_max: 24,
        }
    }
}

impl<T: Scalar> Hyperparameters<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("chi", self.chi),
            ("omega", self.omega),
            ("kappa0", self.kappa0),
        ];
        for (name, v) in pos {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !self.v0.is_spd() {
            return Err(Error::InvalidInput("V0 must be symmetric positive-definite".into()));
        }
        if !(self.nu0 > T::one()) {
            return Err(Error::InvalidInput("nu0 must exceed 1".into()));
        }
        if self.l_max == 0 || self.k_max == 0 {
            return Err(Error::InvalidInput("L_max and K_max must be positive".into()));
        }
        Ok(())
    }
}

/// All global parameters. Positions are in cell units, `[row, col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConceptModel<T> {
    pub pi: Vec<T>,
    pub phi: Vec<Vec<T>>,
    pub theta: Vec<Vec<T>>,
    pub w: Vec<Vec<T>>,
    pub psi: Vec<Vec<T>>,
    pub mu: Vec<Vec2<T>>,
    pub sigma: Vec<Mat2<T>>,
    pub vocab: Vocabulary,
    pub n_features: usize,
    /// `[height, width]` of the grid the positions refer to.
    pub map_shape: [usize; 2],
}

fn uniform_row<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::lit(n as f64); n]
}

impl<T: Scalar> ConceptModel<T> {
    /// Model with every row uniform, all means at the map center and unit
    /// covariances.
    pub fn uniform(l: usize, k: usize, vocab: Vocabulary, n_features: usize, map_shape: [usize; 2]) -> Self {
        let v = vocab.len().max(1);
        let center = [T::lit((map_shape[0] as f64 - 1.0) / 2.0), T::lit((map_shape[1] as f64 - 1.0) / 2.0)];
        Self {
            pi: uniform_row(l),
            phi: vec![uniform_row(k); l],
            theta: vec![uniform_row(n_features.max(1)); l],
            w: vec![uniform_row(v); l],
            psi: vec![uniform_row(k); k],
            mu: vec![center; k],
            sigma: vec![Mat2::identity(); k],
            vocab,
            n_features,
            map_shape,
        }
    }

    pub fn n_concepts(&self) -> usize {
        self.pi.len()
    }

    pub fn n_places(&self) -> usize {
        self.mu.len()
    }

    pub fn n_words(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.pi.len();
        let k = self.mu.len();
        if l == 0 || k == 0 {
            return Err(Error::Invariant("model has no concepts or places".into()));
        }
        check_simplex("pi", 0, &self.pi)?;
        let tables: [(&str, &Vec<Vec<T>>, usize, usize); 4] = [
            ("phi", &self.phi, l, k),
            ("theta", &self.theta, l, self.n_features.max(1)),
            ("W", &self.w, l, self.w.first().map_or(0, Vec::len)),
            ("psi", &self.psi, k, k),
        ];
        for (name, rows, n_rows, n_cols) in tables {
            if rows.len() != n_rows {
                return Err(Error::Invariant(format!("{name} has {} rows, expected {n_rows}", rows.len())));
            }
            for (r, row) in rows.iter().enumerate() {
                if row.len() != n_cols {
                    return Err(Error::Invariant(format!("{name}[{r}] has {} entries, expected {n_cols}", row.len())));
                }
                check_simplex(name, r, row)?;
            }
        }
        if self.w[0].len() < self.vocab.len() {
            return Err(Error::Invariant("W is narrower than the vocabulary".into()));
        }
        if self.sigma.len() != k {
            return Err(Error::Invariant("Sigma count differs from mu count".into()));
        }
        for (i, s) in self.sigma.iter().enumerate() {
            if !s.is_spd() {
                return Err(Error::Invariant(format!("Sigma[{i}] is not symmetric positive-definite")));
            }
        }
        let (h, w) = (T::lit(self.map_shape[0] as f64 - 0.5), T::lit(self.map_shape[1] as f64 - 0.5));
        let lo = T::lit(-0.5);
        for (i, m) in self.mu.iter().enumerate() {
            if !(m[0] >= lo && m[0] <= h && m[1] >= lo && m[1] <= w) {
                return Err(Error::Invariant(format!("mu[{i}] lies outside the map")));
            }
        }
        Ok(())
    }

    fn check_word(&self, s: usize) -> Result<()> {
        if s >= self.n_words() {
            Err(Error::UnknownWordId(s))
        } else {
            Ok(())
        }
    }

    /// `sum_b log W_c(s_b)` without rescaling.
    pub fn word_log_mult(&self, words: &[usize], c: usize) -> Result<T> {
        let mut acc = T::zero();
        for &s in words {
            self.check_word(s)?;
            acc = acc + self.w[c][s].ln();
        }
        Ok(acc)
    }

    /// Unigram-rescaled word likelihood of sentence `words` under concept `c`.
    /// The language-model factor is constant in `c` and omitted.
    pub fn word_likelihood(&self, words: &[usize], c: usize) -> Result<T> {
        let mut acc = T::zero();
        for &s in words {
            self.check_word(s)?;
            let denom: T = self.w.iter().map(|row| row[s]).sum();
            acc = acc + self.w[c][s].ln() - denom.ln();
        }
        Ok(acc)
    }

    /// `log Σ_c' phi_c'(k)`, the rescaling denominator for place `k`.
    pub fn phi_column_log_sum(&self, k: usize) -> T {
        self.phi.iter().map(|row| row[k]).sum::<T>().ln()
    }

    /// Unigram-rescaled transition score of `i_prev -> i_cur` under concept `c`.
    pub fn place_transition_score(&self, i_prev: usize, i_cur: usize, c: usize) -> T {
        self.psi[i_prev][i_cur].ln() + self.phi[c][i_cur].ln() - self.phi_column_log_sum(i_cur)
    }

    pub fn gaussian(&self, k: usize) -> Result<Gaussian2<T>> {
        Gaussian2::new(self.mu[k], self.sigma[k])
            .ok_or_else(|| Error::Invariant(format!("Sigma[{k}] is not symmetric positive-definite")))
    }

    /// Log-density of place `k`'s Gaussian at the center of `x`.
    pub fn position_emission(&self, x: GridPose, k: usize) -> Result<T> {
        Ok(self.gaussian(k)?.log_pdf(x.coord()))
    }

    /// `log Mult(f | theta_c)` without the multinomial coefficient.
    pub fn feature_log_mult(&self, hist: &[u32], c: usize) -> T {
        hist.iter()
            .zip(&self.theta[c])
            .filter(|(&n, _)| n > 0)
            .map(|(&n, &p)| T::lit(n as f64) * p.ln())
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(self, path)
    }
}

fn check_simplex<T: Scalar>(name: &str, row: usize, xs: &[T]) -> Result<()> {
    if xs.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(Error::Invariant(format!("{name}[{row}] has a negative or non-finite entry")));
    }
    let s: f64 = xs.iter().map(|x| x.as_f64()).sum();
    if (s - 1.0).abs() > T::SIMPLEX_TOL {
        return Err(Error::Invariant(format!("{name}[{row}] sums to {s}, not 1")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Envelope<B> {
    schema: String,
    version: u32,
    #[serde(flatten)]
    body: B,
}

fn read_envelope(path: &Path, schema: &'static str, version: u32) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let found_schema = doc.get("schema").and_then(|v| v.as_str()).unwrap_or("<none>").to_string();
    let found_version = doc.get("version").and_then(|v| v.as_u64());
    if found_schema != schema || found_version != Some(version as u64) {
        return Err(Error::Schema {
            expected: schema,
            version,
            found: format!("{found_schema} version {}", found_version.map_or("<none>".into(), |v| v.to_string())),
        });
    }
    if let Some(obj) = doc.as_object_mut() {
        obj.remove("schema");
        obj.remove("version");
    }
    Ok(doc)
}

pub(crate) fn write_json<B: Serialize>(path: &Path, schema: &str, version: u32, body: &B) -> Result<()> {
    let env = Envelope { schema: schema.to_string(), version, body };
    let text = serde_json::to_string_pretty(&env).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<B: serde::de::DeserializeOwned>(path: &Path, schema: &'static str, version: u32) -> Result<B> {
    let doc = read_envelope(path, schema, version)?;
    serde_json::from_value(doc).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model<T: Scalar>(model: &ConceptModel<T>, path: &Path) -> Result<()> {
    model.validate()?;
    write_json(path, MODEL_SCHEMA, MODEL_VERSION, model)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ConceptModel<T>> {
    let model: ConceptModel<T> = read_json(path, MODEL_SCHEMA, MODEL_VERSION)?;
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingEvent {
    /// Time index `t'_e` of the utterance.
    pub t_end: usize,
    pub words: Vec<usize>,
    /// Histogram over the feature vocabulary.
    pub feature: Vec<u32>,
    pub is_event: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeachingDataset {
    pub trajectory: Vec<GridPose>,
    pub events: Vec<TeachingEvent>,
    pub vocab: Vocabulary,
    pub n_features: usize,
    pub truth_c: Option<Vec<usize>>,
    pub truth_i: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentAssignment {
    pub c: Vec<usize>,
    pub i: Vec<usize>,
}

impl LatentAssignment {
    pub fn validate(&self, l_max: usize, k_max: usize) -> Result<()> {
        if self.c.len() != self.i.len() {
            return Err(Error::Invariant("assignment vectors differ in length".into()));
        }
        if self.c.iter().any(|&c| c >= l_max) || self.i.iter().any(|&i| i >= k_max) {
            return Err(Error::Invariant("assignment index beyond truncation level".into()));
        }
        Ok(())
    }
}

impl TeachingDataset {
    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// `T`, the final time index.
    pub fn horizon(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }

    /// `D_e = t'_e - t'_{e-1}` with `t'_0 = 0`.
    pub fn durations(&self) -> Vec<usize> {
        let mut prev = 0;
        self.events
            .iter()
            .map(|e| {
                let d = e.t_end - prev;
                prev = e.t_end;
                d
            })
            .collect()
    }

    pub fn event_pose(&self, e: usize) -> GridPose {
        self.trajectory[self.events[e].t_end]
    }

    /// Checks the structural invariants; `grid` additionally checks that the
    /// trajectory stays on free cells.
    pub fn validate(&self, grid: Option<&OccupancyGrid>) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::InvalidInput("dataset has no events".into()));
        }
        let mut prev = 0;
        for (e, ev) in self.events.iter().enumerate() {
            if ev.t_end <= prev {
                return Err(Error::InvalidInput(format!("event {e}: t_end must be strictly increasing and >= 1")));
            }
            prev = ev.t_end;
            if ev.is_event && ev.words.is_empty() {
                return Err(Error::InvalidInput(format!("event {e}: taught event without words")));
            }
            if let Some(&s) = ev.words.iter().find(|&&s| s >= self.vocab.len()) {
                return Err(Error::UnknownWordId(s));
            }
            if ev.feature.len() != self.n_features {
                return Err(Error::InvalidInput(format!("event {e}: feature histogram has wrong length")));
            }
        }
        if prev != self.horizon() {
            return Err(Error::InvalidInput(format!(
                "sum of durations {prev} differs from trajectory horizon {}",
                self.horizon()
            )));
        }
        for (name, labels) in [("truth_c", &self.truth_c), ("truth_i", &self.truth_i)] {
            if let Some(l) = labels {
                if l.len() != self.events.len() {
                    return Err(Error::InvalidInput(format!("{name} length differs from event count")));
                }
            }
        }
        if let Some(g) = grid {
            if let Some(p) = self.trajectory.iter().find(|p| !g.is_free(**p)) {
                return Err(Error::InvalidInput(format!("trajectory pose ({}, {}) is not free", p.row, p.col)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = DatasetFile {
            n_features: self.n_features,
            trajectory: self.trajectory.iter().map(|p| [p.row, p.col]).collect(),
            events: self
                .events
                .iter()
                .enumerate()
                .map(|(e, ev)| EventRecord {
                    t_end: ev.t_end,
                    words: ev.words.iter().map(|&s| self.vocab.word(s).unwrap_or("").to_string()).collect(),
                    feature: ev.feature.clone(),
                    is_event: ev.is_event,
                    truth_c: self.truth_c.as_ref().map(|v| v[e]),
                    truth_i: self.truth_i.as_ref().map(|v| v[e]),
                })
                .collect(),
        };
        write_json(path, DATASET_SCHEMA, DATASET_VERSION, &body)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: DatasetFile = read_json(path, DATASET_SCHEMA, DATASET_VERSION)?;
        let mut vocab = Vocabulary::default();
        let mut events = Vec::with_capacity(file.events.len());
        let has_c = file.events.iter().all(|e| e.truth_c.is_some());
        let has_i = file.events.iter().all(|e| e.truth_i.is_some());
        for rec in &file.events {
            events.push(TeachingEvent {
                t_end: rec.t_end,
                words: rec.words.iter().map(|w| vocab.intern(w)).collect(),
                feature: rec.feature.clone(),
                is_event: rec.is_event,
            });
        }
        let ds = TeachingDataset {
            trajectory: file.trajectory.iter().map(|&[row, col]| GridPose { row, col }).collect(),
            truth_c: has_c.then(|| file.events.iter().map(|e| e.truth_c.unwrap()).collect()),
            truth_i: has_i.then(|| file.events.iter().map(|e| e.truth_i.unwrap()).collect()),
            events,
            vocab,
            n_features: file.n_features,
        };
        ds.validate(None)?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    n_features: usize,
    trajectory: Vec<[usize; 2]>,
    events: Vec<EventRecord>,
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    t_end: usize,
    words: Vec<String>,
    feature: Vec<u32>,
    #[serde(default = "yes")]
    is_event: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_c: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_i: Option<usize>,
}

fn yes() -> bool {
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from((0..n).map(|i| format!("w{i}")).collect::<Vec<_>>())
    }

    #[test]
    fn word_likelihood_examples() {
        let m = ConceptModel::<f64>::uniform(4, 3, vocab(5), 4, [10, 10]);
        let v = m.word_likelihood(&[0, 3, 4], 2).unwrap();
        assert!((v - 3.0 * (0.25f64).ln()).abs() < 1e-12);
        assert_eq!(m.word_likelihood(&[], 1).unwrap(), 0.0);

        let mut m = ConceptModel::<f64>::uniform(2, 2, vocab(3), 4, [10, 10]);
        m.w = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1]];
        let v = m.word_likelihood(&[0], 0).unwrap();
        assert!((v - (0.8f64 / 0.9).ln()).abs() < 1e-12);
        assert!(matches!(m.word_likelihood(&[7], 0), Err(Error::UnknownWordId(7))));
    }

    #[test]
    fn transition_score_examples() {
        let m = ConceptModel::<f64>::uniform(3, 4, vocab(2), 4, [10, 10]);
        let v = m.place_transition_score(1, 2, 0);
        assert!((v - ((0.25f64).ln() + (1.0f64 / 3.0).ln())).abs() < 1e-12);

        let mut m = ConceptModel::<f64>::uniform(2, 2, vocab(2), 4, [10, 10]);
        m.psi = vec![vec![0.7, 0.3], vec![1.0, 0.0]];
        m.phi = vec![vec![0.9, 0.1], vec![0.5, 0.5]];
        let v = m.place_transition_score(0, 0, 0);
        assert!((v - (0.7f64.ln() + (0.9f64 / 1.4).ln())).abs() < 1e-12);
        assert_eq!(m.place_transition_score(1, 1, 0), f64::NEG_INFINITY);
    }

    #[test]
    fn emission_examples() {
        let mut m = ConceptModel::<f64>::uniform(1, 2, vocab(1), 4, [20, 20]);
        m.mu[0] = [3.0, 4.0];
        let at_mode = m.position_emission(GridPose::new(3, 4), 0).unwrap();
        assert!((at_mode + (2.0 * PI).ln()).abs() < 1e-12);
        let off = m.position_emission(GridPose::new(6, 8), 0).unwrap();
        assert!((off - (at_mode - 25.0 / 2.0)).abs() < 1e-12);
        m.sigma[1] = Mat2::diag(4.0, 4.0);
        m.mu[1] = [5.0, 5.0];
        let v = m.position_emission(GridPose::new(5, 5), 1).unwrap();
        assert!((v + (2.0 * PI * 4.0).ln()).abs() < 1e-12);
        m.sigma[1] = Mat2::new(1.0, 3.0, 3.0, 1.0);
        assert!(matches!(m.position_emission(GridPose::new(0, 0), 1), Err(Error::Invariant(_))));
    }

    #[test]
    fn emission_integrates_to_one() {
        let mut m = ConceptModel::<f64>::uniform(1, 1, vocab(1), 1, [100, 100]);
        m.mu[0] = [50.0, 50.0];
        m.sigma[0] = Mat2::new(4.0, 1.0, 1.0, 2.0);
        // midpoint quadrature over a 6-sigma box with sub-cell resolution
        let g = m.gaussian(0).unwrap();
        let h = 0.1;
        let half = 6.0 * 2.0;
        let n = (2.0 * half / h) as usize;
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                let x = [50.0 - half + (a as f64 + 0.5) * h, 50.0 - half + (b as f64 + 0.5) * h];
                acc += g.log_pdf(x).exp() * h * h;
            }
        }
        assert!(acc >= 0.99 && acc <= 1.0 + 1e-9, "{acc}");
    }

    #[test]
    fn model_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ConceptModel::<f64>::uniform(2, 3, vocab(4), 3, [10, 12]);
        m.pi = vec![0.1 + 1e-17, 0.9 - 1e-17];
        m.mu[1] = [1.0 / 3.0, 2.0f64.sqrt()];
        m.sigma[2] = Mat2::new(2.0 / 7.0, 0.1, 0.1, 3.3);
        let p = dir.path().join("m.json");
        save_model(&m, &p).unwrap();
        let back: ConceptModel<f64> = load_model(&p).unwrap();
        assert_eq!(back, m);

        let text = fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 7");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_model::<f64>(&p), Err(Error::Schema { .. })));

        let mut bad = m.clone();
        bad.phi[0] = vec![0.3, 0.3, 0.3];
        write_json(&p, MODEL_SCHEMA, MODEL_VERSION, &bad).unwrap();
        assert!(matches!(load_model::<f64>(&p), Err(Error::Invariant(_))));
    }

    #[test]
    fn f32_model_works() {
        let m = ConceptModel::<f32>::uniform(2, 2, vocab(3), 2, [5, 5]);
        m.validate().unwrap();
        let v = m.word_likelihood(&[1], 0).unwrap();
        assert!((v - 0.5f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn vocabulary_suggestions() {
        let v = Vocabulary::from(vec!["bedroom".to_string(), "kitchen".into(), "bath".into()]);
        assert_eq!(v.suggestions("bedrom"), vec!["bedroom".to_string()]);
        assert!(v.suggestions("garage").is_empty());
        assert_eq!(v.lookup_all("kitchen bath").unwrap(), vec![1, 2]);
        assert!(matches!(v.lookup_all("kitchn"), Err(Error::UnknownWord { .. })));
        assert_eq!(edit_distance("", "abc"), 3);
    }

    fn tiny_dataset() -> TeachingDataset {
        let traj: Vec<GridPose> = (0..5).map(|c| GridPose::new(1, c)).collect();
        TeachingDataset {
            trajectory: traj,
            events: vec![
                TeachingEvent { t_end: 2, words: vec![0], feature: vec![1, 0], is_event: true },
                TeachingEvent { t_end: 4, words: vec![1], feature: vec![0, 2], is_event: true },
            ],
            vocab: vocab(2),
            n_features: 2,
            truth_c: Some(vec![0, 1]),
            truth_i: Some(vec![0, 1]),
        }
    }

    #[test]
    fn dataset_invariants_and_round_trip() {
        let ds = tiny_dataset();
        ds.validate(None).unwrap();
        assert_eq!(ds.durations(), vec![2, 2]);
        assert_eq!(ds.durations().iter().sum::<usize>(), ds.horizon());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        ds.save(&p).unwrap();
        assert_eq!(TeachingDataset::load(&p).unwrap(), ds);

        let mut bad = ds.clone();
        bad.events[1].t_end = 2;
        assert!(bad.validate(None).is_err());
        let mut bad = ds;
        bad.events[1].t_end = 3;
        assert!(bad.validate(None).is_err());
    }
}

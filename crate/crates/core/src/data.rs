//! Cohort files, deterministic splits, covariate scaling, and a synthetic
//! cohort generator with known potential outcomes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FactualBatch;

/// One unit: covariates, treatment, observed outcome, and (when known) both
/// potential outcome means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSample {
    pub x: Vec<f64>,
    pub t: u8,
    pub y_factual: f64,
    pub mu0: Option<f64>,
    pub mu1: Option<f64>,
}

impl CohortSample {
    /// True effect `mu1 - mu0`, when both are known.
    pub fn ite(&self) -> Option<f64> {
        Some(self.mu1? - self.mu0?)
    }
}

/// Which header names hold which field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    pub mu0: Option<String>,
    pub mu1: Option<String>,
}

impl CsvSchema {
    /// `x0..x{dim-1}, t, y_factual` plus `mu0, mu1` when `with_truth`.
    pub fn standard(dim: usize, with_truth: bool) -> Self {
        Self {
            covariates: (0..dim).map(|j| format!("x{j}")).collect(),
            treatment: "t".into(),
            outcome: "y_factual".into(),
            mu0: with_truth.then(|| "mu0".into()),
            mu1: with_truth.then(|| "mu1".into()),
        }
    }

    /// The standard layout read off a header: every `x<j>` column in index
    /// order, and `mu0`/`mu1` only if both are present.
    pub fn from_header(header: &[&str]) -> Result<Self> {
        let mut cov: Vec<(usize, &str)> = header
            .iter()
            .filter_map(|h| h.strip_prefix('x').and_then(|d| d.parse().ok()).map(|j| (j, *h)))
            .collect();
        cov.sort_unstable();
        if cov.is_empty() {
            return Err(Error::Schema("no covariate columns named x0, x1, ...".into()));
        }
        if cov.iter().enumerate().any(|(i, &(j, _))| i != j) {
            return Err(Error::Schema("covariate columns must be x0..x{d-1} without gaps".into()));
        }
        let has = |name: &str| header.contains(&name);
        let truth = has("mu0") && has("mu1");
        Ok(Self::standard(cov.len(), truth))
    }

    pub fn dim(&self) -> usize {
        self.covariates.len()
    }
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.record() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            row,
            msg: format!("{other:?}"),
        },
    }
}

/// Read samples using an explicit column mapping. Row indices in errors
/// count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<CohortSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cov: Vec<usize> = schema.covariates.iter().map(|c| column(&header, c)).collect::<Result<_>>()?;
    let t_col = column(&header, &schema.treatment)?;
    let y_col = column(&header, &schema.outcome)?;
    let mu0_col = schema.mu0.as_deref().map(|c| column(&header, c)).transpose()?;
    let mu1_col = schema.mu1.as_deref().map(|c| column(&header, c)).transpose()?;
    if cov.is_empty() {
        return Err(Error::Schema("schema lists no covariates".into()));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err)?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| Error::Parse {
                row,
                msg: format!("missing cell in column {c}"),
            })?;
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("cannot parse `{s}` in column `{}`", &header[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("non-finite value in column `{}`", &header[c]),
                });
            }
            Ok(v)
        };
        let x = cov.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        let t = match cell(t_col)? {
            v if v == 0.0 => 0,
            v if v == 1.0 => 1,
            v => {
                return Err(Error::Parse {
                    row,
                    msg: format!("treatment must be 0 or 1, got {v}"),
                })
            }
        };
        out.push(CohortSample {
            x,
            t,
            y_factual: cell(y_col)?,
            mu0: mu0_col.map(cell).transpose()?,
            mu1: mu1_col.map(cell).transpose()?,
        });
    }
    Ok(out)
}

/// Read a file in the standard layout, inferring the covariate count.
pub fn load_csv_auto(path: impl AsRef<Path>) -> Result<Vec<CohortSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().collect();
    let schema = CsvSchema::from_header(&names)?;
    load_csv(path, &schema)
}

/// Write samples in the standard layout. Ground-truth columns are written
/// only when every sample carries both values.
pub fn write_csv(path: impl AsRef<Path>, samples: &[CohortSample]) -> Result<()> {
    let dim = check_dims(samples)?;
    let truth = samples.iter().all(|s| s.mu0.is_some() && s.mu1.is_some());
    let schema = CsvSchema::standard(dim, truth);
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    let mut header: Vec<String> = schema.covariates.clone();
    header.extend(["t".into(), "y_factual".into()]);
    if truth {
        header.extend(["mu0".into(), "mu1".into()]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for s in samples {
        let mut rec: Vec<String> = s.x.iter().map(f64::to_string).collect();
        rec.push(s.t.to_string());
        rec.push(s.y_factual.to_string());
        if truth {
            rec.push(s.mu0.unwrap().to_string());
            rec.push(s.mu1.unwrap().to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Common covariate dimension, or an error if samples disagree.
pub fn check_dims(samples: &[CohortSample]) -> Result<usize> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    if samples.iter().any(|s| s.x.len() != dim) {
        return Err(Error::invalid("samples have different covariate dimensions"));
    }
    Ok(dim)
}

/// `[control, treated]` counts.
pub fn group_counts(samples: &[CohortSample]) -> [usize; 2] {
    let n1 = samples.iter().filter(|s| s.t == 1).count();
    [samples.len() - n1, n1]
}

/// Covariates of the control and treated units, in sample order.
pub fn split_groups(samples: &[CohortSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (mut x0, mut x1) = (Vec::new(), Vec::new());
    for s in samples {
        if s.t == 0 { &mut x0 } else { &mut x1 }.push(s.x.clone());
    }
    (x0, x1)
}

/// Observed triples of the given samples.
pub fn to_batch(samples: &[CohortSample]) -> FactualBatch {
    FactualBatch {
        x: samples.iter().map(|s| s.x.clone()).collect(),
        t: samples.iter().map(|s| s.t).collect(),
        y: samples.iter().map(|s| s.y_factual).collect(),
    }
}

/// Train / validation / test fractions and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_frac: 0.63,
            val_frac: 0.27,
            test_frac: 0.10,
            seed,
        }
    }

    /// `(train, val, test)` sizes: validation and test get their rounded
    /// shares, training takes the remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must be in [0, 1] and sum to 1"));
        }
        let val = (self.val_frac * n as f64).round() as usize;
        let test = (self.test_frac * n as f64).round() as usize;
        if val + test > n {
            return Err(Error::invalid("split fractions leave no training samples"));
        }
        Ok((n - val - test, val, test))
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Minimum cohort size accepted by [`split`].
pub const MIN_SPLIT_SAMPLES: usize = 10;

/// The three parts of a cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<CohortSample>,
    pub val: Vec<CohortSample>,
    pub test: Vec<CohortSample>,
}

impl Splits {
    /// Training and validation units, the in-sample evaluation scope.
    pub fn in_sample(&self) -> Vec<CohortSample> {
        self.train.iter().chain(&self.val).cloned().collect()
    }
}

/// Shuffle with the spec's seed and cut into train, validation and test.
pub fn split(samples: &[CohortSample], spec: &SplitSpec) -> Result<Splits> {
    if samples.len() < MIN_SPLIT_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_SPLIT_SAMPLES} samples to split, got {}",
            samples.len()
        )));
    }
    let (n_train, n_val, _) = spec.sizes(samples.len())?;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |r: &[usize]| r.iter().map(|&i| samples[i].clone()).collect();
    Ok(Splits {
        train: take(&idx[..n_train]),
        val: take(&idx[n_train..n_train + n_val]),
        test: take(&idx[n_train + n_val..]),
    })
}

/// Per-covariate z-scoring fitted on one split. Columns whose values are
/// all 0 or 1 are treated as indicators and left as they are, as are
/// constant columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(samples: &[CohortSample]) -> Result<Self> {
        let dim = check_dims(samples)?;
        if samples.is_empty() {
            return Err(Error::invalid("cannot fit scaling on no samples"));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in 0..dim {
            let col = samples.iter().map(|s| s.x[j]);
            if col.clone().all(|v| v == 0.0 || v == 1.0) {
                continue;
            }
            let m = col.clone().sum::<f64>() / n;
            let var = col.map(|v| (v - m).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                mean[j] = m;
                scale[j] = var.sqrt();
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, samples: &mut [CohortSample]) -> Result<()> {
        if check_dims(samples)? != self.mean.len() && !samples.is_empty() {
            return Err(Error::invalid("covariate dimension differs from the fitted scaling"));
        }
        for s in samples {
            for (j, v) in s.x.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(())
    }

    /// Fit on the training part and scale all three parts.
    pub fn fit_apply(splits: &mut Splits) -> Result<Self> {
        let st = Self::fit(&splits.train)?;
        st.apply(&mut splits.train)?;
        st.apply(&mut splits.val)?;
        st.apply(&mut splits.test)?;
        Ok(st)
    }
}

/// `sum_j x_j / sqrt(dim)`, the direction along which selection acts.
fn selection_score(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / (x.len() as f64).sqrt()
}

/// Control outcome mean: a fixed alternating-sign linear function.
pub fn synthetic_mu0(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(j, v)| if j % 2 == 0 { 1.0 } else { -1.0 } * v / ((j + 1) as f64).sqrt())
        .sum()
}

/// Treated outcome mean: the control mean plus an effect that varies
/// smoothly along the selection direction.
pub fn synthetic_mu1(x: &[f64]) -> f64 {
    synthetic_mu0(x) + 1.0 + 2.0 * selection_score(x).tanh()
}

/// Gaussian covariates, logistic treatment assignment with strength
/// `bias_strength` along the all-ones direction, and outcomes
/// `mu_t(x) + N(0, noise_sd^2)`.
pub fn gen_synthetic(n: usize, dim: usize, bias_strength: f64, noise_sd: f64, seed: u64) -> Result<Vec<CohortSample>> {
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 samples, got {n}")));
    }
    if dim == 0 {
        return Err(Error::invalid("covariate dimension must be positive"));
    }
    if !bias_strength.is_finite() {
        return Err(Error::invalid("bias strength must be finite"));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::invalid(format!("noise sd must be finite and nonnegative, got {noise_sd}")));
    }
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|_| Error::invalid(format!("noise sd must be finite and nonnegative, got {noise_sd}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = 1.0 / (1.0 + (-bias_strength * selection_score(&x)).exp());
            let t = u8::from(rng.random::<f64>() < p);
            let (mu0, mu1) = (synthetic_mu0(&x), synthetic_mu1(&x));
            let base = if t == 1 { mu1 } else { mu0 };
            let y_factual = base + noise.sample(&mut rng);
            CohortSample {
                x,
                t,
                y_factual,
                mu0: Some(mu0),
                mu1: Some(mu1),
            }
        })
        .collect();
    Ok(samples)
}

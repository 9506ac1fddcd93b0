use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{generate_watts_strogatz, graph_statistics, Graph, WsParams};
use crate::nn::Tensor;
use crate::par::{self, Execution};
use crate::rng::{self, Rng};
use crate::simulation::{
    assign_treatments, pca_project, sample_covariates, sample_unit_vector, standard_normal,
    CovariateTransform, GroundTruth, OutcomeModel, PropensityModel, PROPERTY_DIM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    #[serde(alias = "sw")]
    SmallWorld,
    MolecularSurrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    InSample,
    OutSample,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::InSample => "in_sample",
            Split::OutSample => "out_sample",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub benchmark: BenchmarkKind,
    pub n_in: usize,
    pub n_out: usize,
    pub n_treatments: usize,
    pub d_x: usize,
    pub kappa: f64,
    pub master_seed: u64,
}

impl SimConfig {
    /// Small-World at desk scale: 500/250 units, 50 graphs, 20 covariates, κ = 10.
    pub fn small_world(master_seed: u64) -> Self {
        Self {
            benchmark: BenchmarkKind::SmallWorld,
            n_in: 500,
            n_out: 250,
            n_treatments: 50,
            d_x: 20,
            kappa: 10.0,
            master_seed,
        }
    }

    /// Small-World at the full published size: 1,000/500 units, 200 graphs.
    pub fn small_world_full(master_seed: u64) -> Self {
        Self {
            n_in: 1000,
            n_out: 500,
            n_treatments: 200,
            ..Self::small_world(master_seed)
        }
    }

    /// Molecular surrogate at desk scale: 1,000/500 units, 200 molecules, 128 covariates, κ = 0.1.
    pub fn molecular_surrogate(master_seed: u64) -> Self {
        Self {
            benchmark: BenchmarkKind::MolecularSurrogate,
            n_in: 1000,
            n_out: 500,
            n_treatments: 200,
            d_x: 128,
            kappa: 0.1,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 || self.n_treatments == 0 || self.d_x == 0 {
            return Err(Error::Config("all simulation counts must be positive".into()));
        }
        if self.benchmark == BenchmarkKind::MolecularSurrogate && self.d_x < PROPERTY_DIM {
            return Err(Error::Config(format!(
                "molecular surrogate needs d_x >= {PROPERTY_DIM} for the PCA projection"
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }

    fn transform(&self) -> CovariateTransform {
        match self.benchmark {
            BenchmarkKind::SmallWorld => CovariateTransform::ElementwiseSquare,
            BenchmarkKind::MolecularSurrogate => CovariateTransform::Identity,
        }
    }
}

/// Observed units: covariates, assigned treatment ids into a shared catalog, outcomes.
///
/// Carries no ground truth; this is what estimators are trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub covariates: Tensor,
    pub catalog: Arc<Vec<Graph>>,
    pub treatments: Vec<usize>,
    pub outcomes: Vec<f64>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        covariates: Tensor,
        catalog: Arc<Vec<Graph>>,
        treatments: Vec<usize>,
        outcomes: Vec<f64>,
        split: Split,
    ) -> Result<Self> {
        let n = covariates.rows();
        if treatments.len() != n || outcomes.len() != n {
            return Err(Error::Config(format!(
                "{n} covariate rows, {} treatments, {} outcomes",
                treatments.len(),
                outcomes.len()
            )));
        }
        if let Some(&t) = treatments.iter().find(|&&t| t >= catalog.len()) {
            return Err(Error::UnknownTreatment(t));
        }
        Ok(Self {
            covariates,
            catalog,
            treatments,
            outcomes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.covariates.cols()
    }

    pub fn n_treatments(&self) -> usize {
        self.catalog.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            covariates: self.covariates.select_rows(idx),
            catalog: self.catalog.clone(),
            treatments: idx.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
            split: self.split,
        }
    }

    /// Treatment ids that appear at least once, ascending.
    pub fn observed_treatments(&self) -> Vec<usize> {
        let mut seen = vec![false; self.catalog.len()];
        for &t in &self.treatments {
            seen[t] = true;
        }
        (0..seen.len()).filter(|&t| seen[t]).collect()
    }
}

/// Per-column affine map applied to catalog node features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standardizes every node-feature column over all nodes of the catalog.
/// Constant columns are only centered.
pub fn standardize_node_features(catalog: &[Graph]) -> Result<(Vec<Graph>, FeatureScaling)> {
    let dim = catalog.first().map_or(0, Graph::feature_dim);
    if catalog.iter().any(|g| g.feature_dim() != dim) {
        return Err(Error::Config("catalog graphs disagree on node feature width".into()));
    }
    let n: usize = catalog.iter().map(Graph::n_nodes).sum();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for g in catalog {
        for v in 0..g.n_nodes() {
            for (c, &f) in g.node_features().row(v).iter().enumerate() {
                mean[c] += f;
                sq[c] += f * f;
            }
        }
    }
    let nf = n.max(1) as f64;
    let std: Vec<f64> = (0..dim)
        .map(|c| {
            mean[c] /= nf;
            let var = (sq[c] / nf - mean[c] * mean[c]).max(0.0);
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = catalog
        .iter()
        .map(|g| {
            let f = g.node_features();
            let data = f
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - mean[i % dim]) / std[i % dim])
                .collect();
            g.with_node_features(Tensor::from_vec(f.rows(), dim, data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scaled, FeatureScaling { mean, std }))
}

/// A generated benchmark: both splits plus the oracle.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub config: SimConfig,
    pub in_sample: Dataset,
    pub out_sample: Dataset,
    pub ground_truth: GroundTruth,
    pub propensity: PropensityModel,
    /// Map from raw to stored node features.
    pub node_scaling: FeatureScaling,
}

impl Benchmark {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::InSample => &self.in_sample,
            Split::OutSample => &self.out_sample,
        }
    }
}

/// Connected Watts–Strogatz graphs, one independent stream per catalog entry.
pub fn sw_catalog(master_seed: u64, n: usize, exec: Execution) -> Result<Vec<Graph>> {
    par::map_range(exec, n, |i| {
        let mut r = rng::stream(master_seed, "catalog", i as u64);
        let p = WsParams::sample(&mut r);
        generate_watts_strogatz(&mut r, &p)
    })
    .into_iter()
    .collect()
}

/// Random connected "molecule" graphs with property vectors `z ~ U(0, 10)^8`.
///
/// Each graph is a random tree on 5–15 atoms plus up to two ring-closing
/// bonds. Node features are `[degree centrality | z/10 + N(0, 0.05²)]`, so
/// the properties are recoverable from the graph alone.
pub fn molecular_catalog(master_seed: u64, n: usize) -> Result<(Vec<Graph>, Vec<Vec<f64>>)> {
    let mut graphs = Vec::with_capacity(n);
    let mut props = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(master_seed, "catalog", i as u64);
        let atoms = r.random_range(5..=15usize);
        let mut edges: Vec<(usize, usize)> = (1..atoms).map(|v| (r.random_range(0..v), v)).collect();
        let rings = r.random_range(0..=2usize);
        for _ in 0..rings {
            let (u, v) = (r.random_range(0..atoms), r.random_range(0..atoms));
            let e = (u.min(v), u.max(v));
            if u != v && !edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == e) {
                edges.push(e);
            }
        }
        let z: Vec<f64> = (0..PROPERTY_DIM).map(|_| r.random_range(0.0..10.0)).collect();
        let skeleton = Graph::with_degree_centrality(atoms, edges.clone())?;
        let centrality = skeleton.degree_centrality();
        let mut feats = Vec::with_capacity(atoms * (PROPERTY_DIM + 1));
        for c in centrality {
            feats.push(c);
            for zj in &z {
                feats.push(zj / 10.0 + 0.05 * standard_normal(&mut r));
            }
        }
        graphs.push(Graph::new(atoms, edges, Tensor::from_vec(atoms, PROPERTY_DIM + 1, feats)?)?);
        props.push(z);
    }
    Ok((graphs, props))
}

/// Correlated covariates: a 4-component Gaussian mixture in a rank-16 latent
/// space, mapped linearly to `d` dimensions with small isotropic noise, then
/// column-standardized over all units.
fn surrogate_covariates(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    const RANK: usize = 16;
    const COMPONENTS: usize = 4;
    let centers: Vec<Vec<f64>> = (0..COMPONENTS)
        .map(|_| (0..RANK).map(|_| 2.0 * standard_normal(rng)).collect())
        .collect();
    let loading: Vec<f64> = (0..d * RANK).map(|_| standard_normal(rng) / (RANK as f64).sqrt()).collect();
    let mut x = Tensor::zeros(n, d);
    for r in 0..n {
        let c = rng.random_range(0..COMPONENTS);
        let latent: Vec<f64> = centers[c].iter().map(|m| m + standard_normal(rng)).collect();
        for j in 0..d {
            let mut v = 0.1 * standard_normal(rng);
            for (k, l) in latent.iter().enumerate() {
                v += loading[j * RANK + k] * l;
            }
            x.set(r, j, v);
        }
    }
    for j in 0..d {
        let mean = (0..n).map(|r| x.get(r, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (x.get(r, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(1e-12);
        for r in 0..n {
            let v = x.get(r, j);
            x.set(r, j, (v - mean) / sd);
        }
    }
    x
}

fn split_rows(x: &Tensor, n_in: usize) -> (Tensor, Tensor) {
    let first: Vec<usize> = (0..n_in).collect();
    let rest: Vec<usize> = (n_in..x.rows()).collect();
    (x.select_rows(&first), x.select_rows(&rest))
}

fn observe(
    x: &Tensor,
    split: Split,
    catalog: &Arc<Vec<Graph>>,
    gt: &GroundTruth,
    pm: &PropensityModel,
    seed: u64,
) -> Result<Dataset> {
    let probs = (0..x.rows())
        .map(|r| pm.distribution(x.row(r)))
        .collect::<Result<Vec<_>>>()?;
    let tag = split.as_str();
    let treatments = assign_treatments(&mut rng::stream(seed, &format!("assign/{tag}"), 0), &probs);
    let mut noise = rng::stream(seed, &format!("noise/{tag}"), 0);
    let outcomes = treatments
        .iter()
        .enumerate()
        .map(|(r, &t)| gt.outcome(x.row(r), t, Some(&mut noise)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(x.clone(), catalog.clone(), treatments, outcomes, split)
}

/// Generates covariates, treatment catalog, propensity, assignments and
/// outcomes for both splits. Every random stream is derived from
/// `cfg.master_seed`, so equal configs give identical benchmarks.
pub fn build_benchmark(cfg: &SimConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let seed = cfg.master_seed;
    let d = cfg.d_x;
    let mut vec_rng = rng::stream(seed, "outcome_vectors", 0);
    let v0 = sample_unit_vector(&mut vec_rng, d);

    let (catalog, model, x_in, x_out) = match cfg.benchmark {
        BenchmarkKind::SmallWorld => {
            let v_nu = sample_unit_vector(&mut vec_rng, d);
            let v_l = sample_unit_vector(&mut vec_rng, d);
            let catalog = sw_catalog(seed, cfg.n_treatments, Execution::available())?;
            let treatment_stats = catalog.iter().map(graph_statistics).collect::<Result<Vec<_>>>()?;
            let x_in = sample_covariates(&mut rng::stream(seed, "covariates/in", 0), cfg.n_in, d);
            let x_out = sample_covariates(&mut rng::stream(seed, "covariates/out", 0), cfg.n_out, d);
            let model = OutcomeModel::SmallWorld {
                v_nu,
                v_l,
                treatment_stats,
            };
            (catalog, model, x_in, x_out)
        }
        BenchmarkKind::MolecularSurrogate => {
            let (catalog, properties) = molecular_catalog(seed, cfg.n_treatments)?;
            let all = surrogate_covariates(
                &mut rng::stream(seed, "covariates", 0),
                cfg.n_in + cfg.n_out,
                d,
            );
            let (pca, _) = pca_project(&all, PROPERTY_DIM)?;
            let (x_in, x_out) = split_rows(&all, cfg.n_in);
            (catalog, OutcomeModel::MolecularSurrogate { properties, pca }, x_in, x_out)
        }
    };
    let ground_truth = GroundTruth {
        v0,
        noise_std: 1.0,
        model,
    };
    let propensity = PropensityModel::sample(
        &mut rng::stream(seed, "propensity", 0),
        cfg.n_treatments,
        d,
        cfg.kappa,
        cfg.transform(),
    )?;
    let (catalog, node_scaling) = standardize_node_features(&catalog)?;
    let catalog = Arc::new(catalog);
    let in_sample = observe(&x_in, Split::InSample, &catalog, &ground_truth, &propensity, seed)?;
    let out_sample = observe(&x_out, Split::OutSample, &catalog, &ground_truth, &propensity, seed)?;
    Ok(Benchmark {
        config: cfg.clone(),
        in_sample,
        out_sample,
        ground_truth,
        propensity,
        node_scaling,
    })
}

//! Synthetic federated datasets, sub-client partitions and CSV ingestion.
//!
//! Each client draws features from a client-specific shifted Gaussian; the
//! shift magnitude is proportional to the heterogeneity knob, so
//! `heterogeneity = 0` yields identically distributed clients. Labels come
//! from one logistic ground-truth model shared by every client (and by the
//! held-out test generator), sampled as Bernoulli so label noise is intrinsic.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};
use crate::vector::ParamVector;

/// Scale of the ground-truth logit distribution. Fixed so that synthetic
/// labels are crisp but not separable.
const GROUND_TRUTH_LOGIT_SCALE: f64 = 6.0;

/// One labeled observation. `label` is 0/1 for classification data.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: ParamVector,
    pub label: f64,
}

/// All samples held by one silo.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: u64,
    pub samples: Vec<Sample>,
}

impl ClientDataset {
    pub fn new(client_id: u64, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset(format!("client {client_id} has no samples")));
        }
        let dim = samples[0].features.dim();
        if samples.iter().any(|s| s.features.dim() != dim) {
            return Err(Error::Dataset(format!(
                "client {client_id} has mixed feature dimensions"
            )));
        }
        Ok(ClientDataset { client_id, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.dim()
    }
}

/// Disjoint split of one client's sample indices into `v` shards.
#[derive(Debug, Clone)]
pub struct IntermediaryPartition {
    pub parent_client_id: u64,
    pub shards: Vec<Vec<usize>>,
    pub v: usize,
}

impl IntermediaryPartition {
    /// Check disjointness and coverage against a dataset of `n` samples.
    pub fn is_partition_of(&self, n: usize) -> bool {
        if self.shards.len() != self.v {
            return false;
        }
        let mut seen = vec![false; n];
        let mut count = 0usize;
        for shard in &self.shards {
            for &i in shard {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
                count += 1;
            }
        }
        count == n
    }
}

/// The ground-truth parameter vector behind all labels for a given seed and
/// dimension. Includes the intercept coordinate.
pub fn ground_truth(dim: usize, seed: u64) -> ParamVector {
    let mut stream = RngStream::new(seed, streams::DATA_GEN, 0);
    let scale = GROUND_TRUTH_LOGIT_SCALE / ((dim + 1) as f64).sqrt();
    let values = (0..dim + 1)
        .map(|_| scale * stream.standard_normal())
        .collect();
    ParamVector::new(values).expect("finite ground truth")
}

fn label_for(features: &[f64], truth: &ParamVector, stream: &mut RngStream) -> f64 {
    let logit: f64 = features
        .iter()
        .zip(truth.as_slice())
        .map(|(x, w)| x * w)
        .sum::<f64>()
        + truth.as_slice()[truth.dim() - 1];
    let p = 1.0 / (1.0 + (-logit).exp());
    if stream.uniform() < p {
        1.0
    } else {
        0.0
    }
}

/// Generate `n_clients` heterogeneous client datasets.
pub fn generate_federation(
    n_clients: usize,
    samples_per_client: usize,
    dim: usize,
    heterogeneity: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if n_clients < 1 {
        return Err(Error::invalid("n_clients", "must be >= 1"));
    }
    if samples_per_client < 2 {
        return Err(Error::invalid("samples_per_client", "must be >= 2"));
    }
    if dim < 1 {
        return Err(Error::invalid("dim", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&heterogeneity) {
        return Err(Error::invalid("heterogeneity", "must lie in [0, 1]"));
    }
    let truth = ground_truth(dim, seed);
    let mut clients = Vec::with_capacity(n_clients);
    for c in 0..n_clients {
        let mut stream = RngStream::new(seed, streams::DATA_GEN | (c as u64 + 1), 0);
        let shift: Vec<f64> = (0..dim)
            .map(|_| heterogeneity * stream.standard_normal())
            .collect();
        let mut samples = Vec::with_capacity(samples_per_client);
        for _ in 0..samples_per_client {
            let feats: Vec<f64> = shift
                .iter()
                .map(|mu| mu + stream.standard_normal())
                .collect();
            let label = label_for(&feats, &truth, &mut stream);
            samples.push(Sample {
                features: ParamVector::new(feats)?,
                label,
            });
        }
        clients.push(ClientDataset::new(c as u64, samples)?);
    }
    Ok(clients)
}

/// Pooled evaluation set drawn from the shared base distribution (no client
/// shift), labeled by the same ground truth as [`generate_federation`] for
/// the same `(dim, seed)`. Independent of the client count, which keeps the
/// test set fixed across scalability sweeps.
pub fn generate_test_set(n_samples: usize, dim: usize, seed: u64) -> Result<Vec<Sample>> {
    if n_samples < 1 {
        return Err(Error::invalid("n_samples", "must be >= 1"));
    }
    let truth = ground_truth(dim, seed);
    let mut stream = RngStream::new(seed, streams::TEST_GEN, 0);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let feats: Vec<f64> = (0..dim).map(|_| stream.standard_normal()).collect();
        let label = label_for(&feats, &truth, &mut stream);
        samples.push(Sample {
            features: ParamVector::new(feats)?,
            label,
        });
    }
    Ok(samples)
}

/// Split each client into held-out train/test parts (test fraction last).
pub fn split_train_test(
    dataset: &ClientDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(ClientDataset, Vec<Sample>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
    }
    let n = dataset.len();
    let n_test = ((n as f64) * test_fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed, streams::partition(dataset.client_id) | 0x8000, 0).shuffle(&mut idx);
    let test: Vec<Sample> = idx[n - n_test..]
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    let train: Vec<Sample> = idx[..n - n_test]
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    Ok((ClientDataset::new(dataset.client_id, train)?, test))
}

/// Random permutation then round-robin assignment into `v` shards, so shard
/// sizes differ by at most one.
pub fn split_client(dataset: &ClientDataset, v: usize, seed: u64) -> Result<IntermediaryPartition> {
    split_client_at_round(dataset, v, seed, 0)
}

/// Round-aware variant: a changed `round` re-randomizes the partition.
pub fn split_client_at_round(
    dataset: &ClientDataset,
    v: usize,
    seed: u64,
    round: u64,
) -> Result<IntermediaryPartition> {
    let n = dataset.len();
    if v < 1 {
        return Err(Error::invalid("v", "must be >= 1"));
    }
    if v > n {
        return Err(Error::invalid(
            "v",
            format!("{v} shards over {n} samples would leave a shard empty"),
        ));
    }
    // v = 1 is the identity split: one shard holding every index in order.
    if v == 1 {
        return Ok(IntermediaryPartition {
            parent_client_id: dataset.client_id,
            shards: vec![(0..n).collect()],
            v,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed, streams::partition(dataset.client_id), round).shuffle(&mut idx);
    let mut shards = vec![Vec::with_capacity(n / v + 1); v];
    for (pos, sample_idx) in idx.into_iter().enumerate() {
        shards[pos % v].push(sample_idx);
    }
    Ok(IntermediaryPartition {
        parent_client_id: dataset.client_id,
        shards,
        v,
    })
}

/// Materialize the shard datasets of a partition.
pub fn shard_datasets(
    dataset: &ClientDataset,
    partition: &IntermediaryPartition,
) -> Result<Vec<ClientDataset>> {
    if !partition.is_partition_of(dataset.len()) {
        return Err(Error::Dataset(format!(
            "partition does not cover client {}",
            dataset.client_id
        )));
    }
    partition
        .shards
        .iter()
        .map(|shard| {
            let samples = shard.iter().map(|&i| dataset.samples[i].clone()).collect();
            ClientDataset::new(dataset.client_id, samples)
        })
        .collect()
}

/// Load one client dataset from a headered, comma-separated UTF-8 file.
/// Feature order is column order minus the label column.
pub fn load_csv(path: &Path, label_column: &str) -> Result<ClientDataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        path: display.clone(),
        row: 0,
        column: String::new(),
        reason: "file is empty".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| Error::CsvParse {
            path: display.clone(),
            row: 1,
            column: label_column.to_string(),
            reason: "label column not found in header".into(),
        })?;

    let mut samples = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::CsvParse {
                path: display.clone(),
                row: line_no + 1,
                column: String::new(),
                reason: format!("expected {} cells, found {}", columns.len(), cells.len()),
            });
        }
        let mut feats = Vec::with_capacity(columns.len() - 1);
        let mut label = 0.0;
        for (col_idx, cell) in cells.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                path: display.clone(),
                row: line_no + 1,
                column: columns[col_idx].to_string(),
                reason: format!("cell `{cell}` is not numeric"),
            })?;
            if col_idx == label_idx {
                label = value;
            } else {
                feats.push(value);
            }
        }
        samples.push(Sample {
            features: ParamVector::new(feats).map_err(|_| Error::CsvParse {
                path: display.clone(),
                row: line_no + 1,
                column: String::new(),
                reason: "non-finite feature value".into(),
            })?,
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::CsvParse {
            path: display,
            row: 1,
            column: String::new(),
            reason: "no data rows".into(),
        });
    }
    ClientDataset::new(0, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    #[test]
    fn federation_has_unique_ids_and_right_count() {
        let clients = generate_federation(6, 10, 4, 0.3, 1).unwrap();
        assert_eq!(clients.len(), 6);
        let mut ids: Vec<u64> = clients.iter().map(|c| c.client_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_federation(3, 20, 5, 0.5, 9).unwrap();
        let b = generate_federation(3, 20, 5, 0.5, 9).unwrap();
        for (ca, cb) in a.iter().zip(&b) {
            for (sa, sb) in ca.samples.iter().zip(&cb.samples) {
                assert_eq!(sa.features, sb.features);
                assert_eq!(sa.label, sb.label);
            }
        }
    }

    #[test]
    fn zero_heterogeneity_means_match() {
        // Two-sample mean test: with heterogeneity 0 the per-client feature
        // means differ by less than 3 pooled standard errors.
        let n = 4000;
        let clients = generate_federation(2, n, 3, 0.0, 5).unwrap();
        for coord in 0..3 {
            let mean = |c: &ClientDataset| {
                c.samples
                    .iter()
                    .map(|s| s.features.as_slice()[coord])
                    .sum::<f64>()
                    / n as f64
            };
            let m0 = mean(&clients[0]);
            let m1 = mean(&clients[1]);
            let pooled_se = (2.0 / n as f64).sqrt();
            assert!(
                (m0 - m1).abs() < 3.0 * pooled_se,
                "coord {coord}: means {m0} vs {m1} differ by more than 3 SE"
            );
        }
    }

    #[test]
    fn invalid_sizes_error() {
        assert!(generate_federation(0, 10, 2, 0.0, 1).is_err());
        assert!(generate_federation(2, 1, 2, 0.0, 1).is_err());
        assert!(generate_federation(2, 10, 0, 0.0, 1).is_err());
    }

    #[test]
    fn split_identity_and_balance() {
        let d = generate_federation(1, 10, 2, 0.0, 3).unwrap().remove(0);
        let p1 = split_client(&d, 1, 4).unwrap();
        assert_eq!(p1.shards.len(), 1);
        assert_eq!(p1.shards[0].len(), 10);

        let p3 = split_client(&d, 3, 4).unwrap();
        let mut sizes: Vec<usize> = p3.shards.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(p3.is_partition_of(10));
    }

    #[test]
    fn oversplit_errors() {
        let d = generate_federation(1, 5, 2, 0.0, 3).unwrap().remove(0);
        assert!(split_client(&d, 6, 4).is_err());
    }

    proptest! {
        #[test]
        fn split_is_always_a_partition(n in 1usize..60, v_raw in 1usize..12, seed in 0u64..1000) {
            let v = v_raw.min(n);
            let d = generate_federation(1, n.max(2), 2, 0.0, seed).unwrap().remove(0);
            let p = split_client(&d, v, seed).unwrap();
            prop_assert!(p.is_partition_of(d.len()));
            let max = p.shards.iter().map(Vec::len).max().unwrap();
            let min = p.shards.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }

    fn write_temp(content: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!(
            "fedsplit-test-{}-{}.csv",
            std::process::id(),
            content.len()
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn csv_roundtrip() {
        let path = write_temp("a,b,y\n1.0,2.0,1\n3.0,4.0,0\n5.5,6.5,1\n");
        let d = load_csv(&path, "y").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[0].features.as_slice(), &[1.0, 2.0]);
        assert_eq!(d.samples[2].label, 1.0);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn csv_missing_label_column() {
        let path = write_temp("a,b\n1,2\n");
        let err = load_csv(&path, "y").unwrap_err();
        assert!(err.to_string().contains("label column"));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn csv_empty_file() {
        let path = write_temp("");
        assert!(load_csv(&path, "y").is_err());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn csv_bad_cell_names_row_and_column() {
        let path = write_temp("a,b,y\n1.0,oops,1\n");
        let err = load_csv(&path, "y").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("`b`"), "{msg}");
        std::fs::remove_file(path).ok();
    }
}

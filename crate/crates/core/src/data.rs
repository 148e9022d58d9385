//! Expression data model and the dataset transforms shared by every stage.
//!
//! Matrices are stored genes × cells, the same orientation as the TSV files.
//! Learners consume samples × features, built with [`ExpressionMatrix::design`].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Control = 0,
    Case = 1,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::Case => "case",
            Condition::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    gene_ids: Vec<String>,
    cell_ids: Vec<String>,
    values: Array2<f64>,
    condition: Condition,
    gene_index: HashMap<String, usize>,
}

impl ExpressionMatrix {
    pub fn new(
        gene_ids: Vec<String>,
        cell_ids: Vec<String>,
        values: Array2<f64>,
        condition: Condition,
    ) -> Result<Self> {
        if values.nrows() != gene_ids.len() || values.ncols() != cell_ids.len() {
            return Err(Error::invalid(format!(
                "matrix is {}x{} but {} gene ids and {} cell ids were given",
                values.nrows(),
                values.ncols(),
                gene_ids.len(),
                cell_ids.len()
            )));
        }
        if let Some(((g, c), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at gene {} cell {}",
                gene_ids[g], cell_ids[c]
            )));
        }
        let mut gene_index = HashMap::with_capacity(gene_ids.len());
        for (i, g) in gene_ids.iter().enumerate() {
            if gene_index.insert(g.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate gene id {g}")));
            }
        }
        Ok(ExpressionMatrix {
            gene_ids,
            cell_ids,
            values,
            condition,
            gene_index,
        })
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn gene_position(&self, gene: &str) -> Option<usize> {
        self.gene_index.get(gene).copied()
    }

    pub fn gene_row(&self, gene: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.gene_position(gene).map(|i| self.values.row(i))
    }

    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        ExpressionMatrix::new(self.gene_ids.clone(), self.cell_ids.clone(), values, self.condition)
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }

    /// Columns (cells) in the given order.
    pub fn select_cells(&self, cells: &[usize]) -> Self {
        let values = self.values.select(Axis(1), cells);
        let cell_ids = cells.iter().map(|&c| self.cell_ids[c].clone()).collect();
        ExpressionMatrix {
            gene_ids: self.gene_ids.clone(),
            cell_ids,
            values,
            condition: self.condition,
            gene_index: self.gene_index.clone(),
        }
    }

    /// Samples × TFs feature matrix and the target vector for one gene.
    pub fn design(&self, tfs: &TfList, target: &str) -> Result<(Array2<f64>, Array1<f64>)> {
        let t = self
            .gene_position(target)
            .ok_or_else(|| Error::invalid(format!("target gene {target} not in matrix")))?;
        let mut cols = Vec::with_capacity(tfs.len());
        for tf in tfs.iter() {
            cols.push(
                self.gene_position(tf)
                    .ok_or_else(|| Error::invalid(format!("TF {tf} not in matrix")))?,
            );
        }
        let x = self.values.select(Axis(0), &cols).reversed_axes();
        let x = x.as_standard_layout().into_owned();
        Ok((x, self.values.row(t).to_owned()))
    }

    pub fn read_tsv(path: impl AsRef<Path>, condition: Condition) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path, condition)
    }

    pub fn parse_tsv(text: &str, path: &Path, condition: Condition) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty expression file".into()))?;
        let cell_ids: Vec<String> = header.split('\t').skip(1).map(str::to_owned).collect();
        let mut gene_ids = Vec::new();
        let mut flat = Vec::new();
        for (ln, line) in lines {
            let mut fields = line.split('\t');
            let gene = fields.next().unwrap_or_default().to_owned();
            let mut n = 0;
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(ln + 1, format!("bad number {f:?}")))?;
                flat.push(v);
                n += 1;
            }
            if n != cell_ids.len() {
                return Err(parse_err(
                    ln + 1,
                    format!("expected {} values, found {n}", cell_ids.len()),
                ));
            }
            gene_ids.push(gene);
        }
        let values =
            Array2::from_shape_vec((gene_ids.len(), cell_ids.len()), flat).map_err(|e| parse_err(1, e.to_string()))?;
        ExpressionMatrix::new(gene_ids, cell_ids, values, condition)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gene");
        for c in &self.cell_ids {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (g, row) in self.gene_ids.iter().zip(self.values.rows()) {
            out.push_str(g);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Ordered candidate regulators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TfList(Vec<String>);

impl TfList {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate TF {id}")));
            }
        }
        Ok(TfList(ids))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.0.iter().position(|t| t == id)
    }

    /// Every entry must name a gene of `matrix`.
    pub fn check_against(&self, matrix: &ExpressionMatrix) -> Result<()> {
        match self.0.iter().find(|t| matrix.gene_position(t).is_none()) {
            Some(t) => Err(Error::invalid(format!("TF {t} not found in expression matrix"))),
            None => Ok(()),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TfList::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect(),
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.0.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

impl TryFrom<Vec<String>> for TfList {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        TfList::new(v)
    }
}

impl From<TfList> for Vec<String> {
    fn from(t: TfList) -> Self {
        t.0
    }
}

/// Per-gene location/scale; `None` marks a zero-variance gene left untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub params: Vec<Option<(f64, f64)>>,
}

impl Standardization {
    pub fn fit(values: &Array2<f64>) -> Self {
        let params = values
            .rows()
            .into_iter()
            .map(|row| {
                let (mean, sd) = mean_std(row.iter().copied());
                (sd > 0.0).then_some((mean, sd))
            })
            .collect();
        Standardization { params }
    }

    pub fn flagged(&self) -> impl Iterator<Item = usize> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| i)
    }

    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (mut row, p) in out.rows_mut().into_iter().zip(&self.params) {
            if let Some((mean, sd)) = *p {
                row.mapv_inplace(|v| (v - mean) / sd);
            }
        }
        out
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = xs.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Z-score every gene row (population std). Zero-variance rows are flagged in
/// the returned parameters and passed through unchanged.
pub fn standardize(matrix: &ExpressionMatrix) -> Result<(ExpressionMatrix, Standardization)> {
    if matrix.n_genes() == 0 || matrix.n_cells() == 0 {
        return Err(Error::invalid("cannot standardize an empty matrix"));
    }
    let params = Standardization::fit(matrix.values());
    let values = params.apply(matrix.values());
    Ok((matrix.with_values(values)?, params))
}

/// Number of training columns for a split of `n` cells.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
}

/// Random disjoint column partition. Both parts keep the original cell order.
pub fn split_train_test(
    matrix: &ExpressionMatrix,
    train_fraction: f64,
    seed: RngSeed,
) -> Result<(ExpressionMatrix, ExpressionMatrix)> {
    let (train, test) = split_indices(matrix.n_cells(), train_fraction, seed)?;
    Ok((matrix.select_cells(&train), matrix.select_cells(&test)))
}

pub fn split_indices(n: usize, train_fraction: f64, seed: RngSeed) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 cells to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let k = train_count(n, train_fraction);
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// When the target gene is itself a candidate regulator, permute its feature
/// column across samples so the model cannot read the target off its input.
pub fn decorrelate_self_feature(features: &Array2<f64>, tfs: &TfList, target: &str, seed: RngSeed) -> Array2<f64> {
    let mut out = features.clone();
    if let Some(j) = tfs.position(target) {
        let mut perm: Vec<usize> = (0..features.nrows()).collect();
        perm.shuffle(&mut seed.rng());
        let col = features.column(j);
        for (r, &p) in perm.iter().enumerate() {
            out[[r, j]] = col[p];
        }
    }
    out
}

/// Pool both groups' cells and deal them back out at random, keeping group sizes.
pub fn shuffle_condition_labels(
    case: &ExpressionMatrix,
    control: &ExpressionMatrix,
    seed: RngSeed,
) -> Result<(ExpressionMatrix, ExpressionMatrix)> {
    if case.gene_ids() != control.gene_ids() {
        return Err(Error::invalid("case and control matrices have different gene lists"));
    }
    let (n1, n0) = (case.n_cells(), control.n_cells());
    let pooled = ndarray::concatenate(Axis(1), &[case.values().view(), control.values().view()])
        .map_err(|e| Error::invalid(e.to_string()))?;
    let ids: Vec<String> = case.cell_ids().iter().chain(control.cell_ids()).cloned().collect();
    let mut perm: Vec<usize> = (0..n1 + n0).collect();
    perm.shuffle(&mut seed.rng());
    let build = |cols: &[usize], cond| {
        ExpressionMatrix::new(
            case.gene_ids().to_vec(),
            cols.iter().map(|&c| ids[c].clone()).collect(),
            pooled.select(Axis(1), cols),
            cond,
        )
    };
    Ok((
        build(&perm[..n1], Condition::Case)?,
        build(&perm[n1..], Condition::Control)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn matrix(values: Array2<f64>) -> ExpressionMatrix {
        let g = (0..values.nrows()).map(|i| format!("g{i}")).collect();
        let c = (0..values.ncols()).map(|i| format!("c{i}")).collect();
        ExpressionMatrix::new(g, c, values, Condition::Case).unwrap()
    }

    fn random_matrix(genes: usize, cells: usize, seed: u64) -> ExpressionMatrix {
        let mut rng = RngSeed(seed).rng();
        matrix(Array2::from_shape_fn((genes, cells), |_| {
            rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0
        }))
    }

    #[test]
    fn standardize_three_point_row() {
        let (z, p) = standardize(&matrix(array![[1.0, 2.0, 3.0]])).unwrap();
        let r = 1.5f64.sqrt();
        for (a, b) in z.values().iter().zip([-r, 0.0, r]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((r - 1.2247).abs() < 1e-4);
        assert_eq!(p.flagged().count(), 0);
    }

    #[test]
    fn constant_row_is_flagged_and_unchanged() {
        let (z, p) = standardize(&matrix(array![[5.0, 5.0, 5.0], [1.0, 2.0, 4.0]])).unwrap();
        assert_eq!(z.values().row(0).to_vec(), vec![5.0, 5.0, 5.0]);
        assert_eq!(p.flagged().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn standardized_moments() {
        let m = random_matrix(1, 100, 3);
        let (z, _) = standardize(&m).unwrap();
        let (mean, sd) = mean_std(z.values().row(0).iter().copied());
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn standardize_is_idempotent() {
        let m = random_matrix(5, 40, 9);
        let (z1, _) = standardize(&m).unwrap();
        let (z2, _) = standardize(&z1).unwrap();
        for (a, b) in z1.values().iter().zip(z2.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = ExpressionMatrix::new(vec![], vec![], Array2::zeros((0, 0)), Condition::Case).unwrap();
        assert!(matches!(standardize(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn split_sizes() {
        let m = random_matrix(2, 10, 1);
        let (tr, te) = split_train_test(&m, 0.8, RngSeed(1)).unwrap();
        assert_eq!((tr.n_cells(), te.n_cells()), (8, 2));
        let (a, b) = split_indices(3000, 0.9, RngSeed(2)).unwrap();
        assert_eq!((a.len(), b.len()), (2700, 300));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let (a1, b1) = split_indices(57, 0.7, RngSeed(5)).unwrap();
        let (a2, b2) = split_indices(57, 0.7, RngSeed(5)).unwrap();
        assert_eq!((&a1, &b1), (&a2, &b2));
        let mut all: Vec<usize> = a1.iter().chain(&b1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_indices(10, 1.0, RngSeed(0)).is_err());
        assert!(split_indices(10, 0.0, RngSeed(0)).is_err());
        assert!(split_indices(1, 0.5, RngSeed(0)).is_err());
    }

    #[test]
    fn decorrelate_identity_when_target_not_a_tf() {
        let x = random_matrix(3, 20, 4).values().t().to_owned();
        let tfs = TfList::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(decorrelate_self_feature(&x, &tfs, "z", RngSeed(1)), x);
    }

    #[test]
    fn decorrelate_permutes_only_the_self_column() {
        let x = random_matrix(3, 50, 4).values().t().to_owned();
        let tfs = TfList::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let y = decorrelate_self_feature(&x, &tfs, "b", RngSeed(1));
        assert_eq!(y.column(0), x.column(0));
        assert_eq!(y.column(2), x.column(2));
        let mut u: Vec<f64> = x.column(1).to_vec();
        let mut v: Vec<f64> = y.column(1).to_vec();
        u.sort_by(f64::total_cmp);
        v.sort_by(f64::total_cmp);
        assert_eq!(u, v);
        assert_ne!(y.column(1), x.column(1));
    }

    #[test]
    fn decorrelated_column_is_uncorrelated_with_target() {
        let m = random_matrix(2, 1000, 11);
        let x = m.values().t().to_owned();
        let tfs = TfList::new(vec!["g0".into(), "g1".into()]).unwrap();
        let y = decorrelate_self_feature(&x, &tfs, "g0", RngSeed(3));
        let target = m.values().row(0).to_vec();
        let r = crate::baselines::pearson(&target, &y.column(0).to_vec()).unwrap();
        assert!(r.abs() < 0.1, "r = {r}");
    }

    #[test]
    fn label_shuffle_preserves_sizes_and_cells() {
        let a = random_matrix(3, 100, 1);
        let mut b = random_matrix(3, 120, 2).with_condition(Condition::Control);
        b.cell_ids = (0..120).map(|i| format!("d{i}")).collect();
        let (a2, b2) = shuffle_condition_labels(&a, &b, RngSeed(7)).unwrap();
        assert_eq!((a2.n_cells(), b2.n_cells()), (100, 120));
        let mut before: Vec<_> = a.cell_ids().iter().chain(b.cell_ids()).cloned().collect();
        let mut after: Vec<_> = a2.cell_ids().iter().chain(b2.cell_ids()).cloned().collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
        let (a3, _) = shuffle_condition_labels(&a, &b, RngSeed(8)).unwrap();
        assert_ne!(a2.cell_ids(), a3.cell_ids());
    }

    #[test]
    fn label_shuffle_rejects_gene_mismatch() {
        let a = random_matrix(3, 10, 1);
        let b = random_matrix(4, 10, 2);
        assert!(shuffle_condition_labels(&a, &b, RngSeed(0)).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let m = random_matrix(3, 4, 5);
        let back = ExpressionMatrix::parse_tsv(&m.to_tsv(), Path::new("x"), Condition::Case).unwrap();
        assert_eq!(back, m);
    }
}

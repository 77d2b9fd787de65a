//! K-fold out-of-fold stacking over five base predictors.
//!
//! Columns, in order: the low- and high-frequency link heads, then logistic
//! regression, random forest and MLP on [`pair_features`]. Out-of-fold
//! head probabilities come from GNN runs that never saw the fold (see
//! [`crate::trainer::out_of_fold_predictions`]). A logistic meta-learner is
//! fit on the out-of-fold matrix only.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual_gnn::BranchEmbeddings;
use crate::ensemble::forest::{fit_forest, ForestConfig, RandomForest};
use crate::ensemble::logistic::{fit_logistic, LogisticConfig, LogisticModel};
use crate::ensemble::mlp::{fit_mlp, MlpConfig, MlpModel};
use crate::error::{Error, Result};
use crate::graph::{read_json, write_json};
use crate::numerics::DenseMatrix;
use crate::split::stratified_folds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    HeadLf,
    HeadHf,
    Logistic,
    Forest,
    Mlp,
}

impl BaseKind {
    pub const ALL: [BaseKind; 5] = [
        BaseKind::HeadLf,
        BaseKind::HeadHf,
        BaseKind::Logistic,
        BaseKind::Forest,
        BaseKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::HeadLf => "head_lf",
            BaseKind::HeadHf => "head_hf",
            BaseKind::Logistic => "logistic",
            BaseKind::Forest => "forest",
            BaseKind::Mlp => "mlp",
        }
    }

    pub const CLASSICAL: [BaseKind; 3] = [BaseKind::Logistic, BaseKind::Forest, BaseKind::Mlp];

    pub fn column(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub k_folds: usize,
    pub seed: u64,
    pub logistic: LogisticConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub meta: LogisticConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            seed: 0,
            logistic: LogisticConfig::default(),
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
            meta: LogisticConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=10).contains(&self.k_folds) {
            return Err(Error::Config(format!("k_folds must be in 2..=10 (got {})", self.k_folds)));
        }
        Ok(())
    }
}

/// `[h_i^LF ‖ h_j^LF ‖ h_i^HF ‖ h_j^HF ‖ |x_i − x_j|]` with `i < j`.
pub fn pair_features(emb: &BranchEmbeddings, x: &DenseMatrix, pairs: &[(usize, usize)]) -> Result<DenseMatrix> {
    let e = emb.h_lf.cols();
    let d = x.cols();
    let width = 4 * e + d;
    let n = emb.h_lf.rows().min(x.rows());
    let mut data = Vec::with_capacity(pairs.len() * width);
    for &(a, b) in pairs {
        let (i, j) = (a.min(b), a.max(b));
        if j >= n {
            return Err(Error::Index {
                op: "pair_features",
                index: j,
                len: n,
            });
        }
        data.extend_from_slice(emb.h_lf.row(i));
        data.extend_from_slice(emb.h_lf.row(j));
        data.extend_from_slice(emb.h_hf.row(i));
        data.extend_from_slice(emb.h_hf.row(j));
        data.extend(x.row(i).iter().zip(x.row(j)).map(|(u, v)| (u - v).abs()));
    }
    DenseMatrix::from_vec(pairs.len(), width, data)
}

/// Row-aligned inputs of the five columns: edge probabilities of the two
/// GNN heads (`n×2`, low then high) and the classical learners' design.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseInputs {
    pub gnn: DenseMatrix,
    pub pair: DenseMatrix,
}

impl BaseInputs {
    pub fn new(gnn: DenseMatrix, pair: DenseMatrix) -> Result<Self> {
        if gnn.cols() != 2 || gnn.rows() != pair.rows() {
            return Err(Error::dim(
                "BaseInputs::new",
                format!("gnn {:?} against pair design {:?}", gnn.shape(), pair.shape()),
            ));
        }
        Ok(Self { gnn, pair })
    }

    pub fn rows(&self) -> usize {
        self.pair.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseModel {
    Logistic(LogisticModel),
    Forest(RandomForest),
    Mlp(MlpModel),
}

impl BaseModel {
    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        match self {
            BaseModel::Logistic(m) => m.predict_proba(x),
            BaseModel::Forest(m) => m.predict_proba(x),
            BaseModel::Mlp(m) => m.predict_proba(x),
        }
    }
}

/// Seed of model `kind` on fold `fold`; `fold == k` is the full-data fit.
fn model_seed(base: u64, kind: BaseKind, fold: usize) -> u64 {
    base ^ ((kind.column() as u64 + 1) << 40) ^ ((fold as u64 + 1) << 20)
}

/// Fits one classical learner. `fold` only feeds the seed.
pub fn fit_base(kind: BaseKind, x: &DenseMatrix, labels: &[u8], cfg: &EnsembleConfig, fold: usize) -> Result<BaseModel> {
    let seed = model_seed(cfg.seed, kind, fold);
    Ok(match kind {
        BaseKind::HeadLf | BaseKind::HeadHf => {
            return Err(Error::Contract(format!(
                "{} is trained by the GNN trainer, not fit here",
                kind.name()
            )))
        }
        BaseKind::Logistic => BaseModel::Logistic(fit_logistic(x, labels, &cfg.logistic)?),
        BaseKind::Forest => BaseModel::Forest(fit_forest(x, labels, &ForestConfig { seed, ..cfg.forest.clone() })?),
        BaseKind::Mlp => BaseModel::Mlp(fit_mlp(x, labels, &MlpConfig { seed, ..cfg.mlp.clone() })?),
    })
}

/// Out-of-fold predictions: row `r`, column `m` comes from model `m` fit
/// without fold `folds[r]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OofMatrix {
    pub folds: Vec<usize>,
    pub labels: Vec<u8>,
    pub predictions: DenseMatrix,
}

impl OofMatrix {
    pub fn column(&self, kind: BaseKind) -> Vec<f64> {
        (0..self.predictions.rows())
            .map(|r| self.predictions.get(r, kind.column()))
            .collect()
    }
}

/// Stratified fold id of every row.
pub fn assign_folds(labels: &[u8], cfg: &EnsembleConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    stratified_folds(labels, cfg.k_folds, cfg.seed)
}

/// `(rows outside fold f, rows in fold f)`.
pub fn fold_rows(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&r| folds[r] != f)
}

/// Fits classical learner `kind` on every fold but `fold`.
pub fn refit_excluding_fold(
    pair: &DenseMatrix,
    labels: &[u8],
    folds: &[usize],
    kind: BaseKind,
    fold: usize,
    cfg: &EnsembleConfig,
) -> Result<BaseModel> {
    let (train, _) = fold_rows(folds, fold);
    let y: Vec<u8> = train.iter().map(|&r| labels[r]).collect();
    if y.is_empty() || y.iter().all(|&v| v == y[0]) {
        return Err(Error::DegenerateFit(format!(
            "training split without fold {fold} has a single class"
        )));
    }
    fit_base(kind, &pair.select_rows(&train)?, &y, cfg, fold)
}

/// `inputs.gnn` must already hold out-of-fold probabilities for `folds`;
/// the classical columns are fit here.
pub fn build_oof(inputs: &BaseInputs, labels: &[u8], folds: &[usize], cfg: &EnsembleConfig) -> Result<OofMatrix> {
    cfg.validate()?;
    if inputs.rows() != labels.len() || folds.len() != labels.len() {
        return Err(Error::dim(
            "build_oof",
            format!("{} rows, {} labels, {} folds", inputs.rows(), labels.len(), folds.len()),
        ));
    }
    if let Some(&f) = folds.iter().find(|&&f| f >= cfg.k_folds) {
        return Err(Error::Contract(format!("fold id {f} outside 0..{}", cfg.k_folds)));
    }
    let mut preds = DenseMatrix::zeros(labels.len(), BaseKind::ALL.len());
    for r in 0..labels.len() {
        preds.set(r, BaseKind::HeadLf.column(), inputs.gnn.get(r, 0));
        preds.set(r, BaseKind::HeadHf.column(), inputs.gnn.get(r, 1));
    }
    for f in 0..cfg.k_folds {
        let (_, held) = fold_rows(folds, f);
        if held.is_empty() {
            continue;
        }
        let held_x = inputs.pair.select_rows(&held)?;
        for kind in BaseKind::CLASSICAL {
            let model = refit_excluding_fold(&inputs.pair, labels, folds, kind, f, cfg)?;
            for (&r, v) in held.iter().zip(model.predict_proba(&held_x)?) {
                preds.set(r, kind.column(), v);
            }
        }
    }
    Ok(OofMatrix {
        folds: folds.to_vec(),
        labels: labels.to_vec(),
        predictions: preds,
    })
}

pub fn fit_meta(oof: &OofMatrix, cfg: &EnsembleConfig) -> Result<LogisticModel> {
    fit_logistic(&oof.predictions, &oof.labels, &cfg.meta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedEnsemble {
    pub config: EnsembleConfig,
    /// Full-data fits in [`BaseKind::CLASSICAL`] order.
    pub classical: Vec<BaseModel>,
    pub meta: LogisticModel,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    config: EnsembleConfig,
    columns: Vec<BaseKind>,
    models: Vec<(BaseKind, String)>,
    meta: String,
    oof: String,
}

/// Builds the out-of-fold matrix, fits the meta-learner on it, then fits
/// the classical learners on all rows.
pub fn fit_stack(inputs: &BaseInputs, labels: &[u8], folds: &[usize], cfg: &EnsembleConfig) -> Result<(StackedEnsemble, OofMatrix)> {
    let oof = build_oof(inputs, labels, folds, cfg)?;
    let meta = fit_meta(&oof, cfg)?;
    let classical = BaseKind::CLASSICAL
        .iter()
        .map(|&kind| fit_base(kind, &inputs.pair, labels, cfg, cfg.k_folds))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        StackedEnsemble {
            config: cfg.clone(),
            classical,
            meta,
        },
        oof,
    ))
}

impl StackedEnsemble {
    /// `n×5` matrix of base predictions in [`BaseKind::ALL`] order.
    pub fn base_predictions(&self, inputs: &BaseInputs) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(inputs.rows(), BaseKind::ALL.len());
        for r in 0..inputs.rows() {
            out.set(r, BaseKind::HeadLf.column(), inputs.gnn.get(r, 0));
            out.set(r, BaseKind::HeadHf.column(), inputs.gnn.get(r, 1));
        }
        for (kind, model) in BaseKind::CLASSICAL.iter().zip(&self.classical) {
            for (r, v) in model.predict_proba(&inputs.pair)?.into_iter().enumerate() {
                out.set(r, kind.column(), v);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, inputs: &BaseInputs) -> Result<Vec<f64>> {
        self.meta.predict_proba(&self.base_predictions(inputs)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>, oof: &OofMatrix) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut models = Vec::new();
        for (kind, model) in BaseKind::CLASSICAL.iter().zip(&self.classical) {
            let file = format!("{}.bin", kind.name());
            let path = dir.join(&file);
            fs::write(&path, bincode::serialize(model)?).map_err(|e| Error::io(&path, e))?;
            models.push((*kind, file));
        }
        write_json(&dir.join("meta.json"), &self.meta)?;
        write_oof_csv(dir.join("oof.csv"), oof)?;
        write_json(
            &dir.join("manifest.json"),
            &BundleManifest {
                config: self.config.clone(),
                columns: BaseKind::ALL.to_vec(),
                models,
                meta: "meta.json".into(),
                oof: "oof.csv".into(),
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.columns != BaseKind::ALL || manifest.models.iter().map(|(k, _)| *k).ne(BaseKind::CLASSICAL) {
            return Err(Error::Validation("bundle columns out of order".into()));
        }
        let classical = manifest
            .models
            .iter()
            .map(|(_, file)| {
                let path = dir.join(file);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Ok(bincode::deserialize(&bytes)?)
            })
            .collect::<Result<Vec<BaseModel>>>()?;
        Ok(Self {
            config: manifest.config,
            classical,
            meta: read_json(&dir.join(&manifest.meta))?,
        })
    }
}

/// `row,fold,label,<one column per base model>`.
pub fn write_oof_csv(path: impl AsRef<Path>, oof: &OofMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string(), "fold".into(), "label".into()];
    header.extend(BaseKind::ALL.iter().map(|k| k.name().to_string()));
    w.write_record(&header)?;
    for r in 0..oof.predictions.rows() {
        let mut rec = vec![r.to_string(), oof.folds[r].to_string(), oof.labels[r].to_string()];
        rec.extend(oof.predictions.row(r).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads back the prediction block of [`write_oof_csv`].
pub fn read_oof_csv(path: impl AsRef<Path>) -> Result<OofMatrix> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path)?;
    let (mut folds, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |detail: String| Error::Row {
            path: path.display().to_string(),
            line: line as u64 + 2,
            detail,
        };
        if rec.len() != 3 + BaseKind::ALL.len() {
            return Err(bad(format!("expected {} fields, got {}", 3 + BaseKind::ALL.len(), rec.len())));
        }
        folds.push(rec[1].parse().map_err(|e| bad(format!("fold: {e}")))?);
        labels.push(rec[2].parse().map_err(|e| bad(format!("label: {e}")))?);
        for f in rec.iter().skip(3) {
            data.push(f.parse::<f64>().map_err(|e| bad(format!("prediction: {e}")))?);
        }
    }
    let n = labels.len();
    Ok(OofMatrix {
        folds,
        labels,
        predictions: DenseMatrix::from_vec(n, BaseKind::ALL.len(), data)?,
    })
}

/// Writes per-row full-data base predictions and the stacked score.
pub fn write_predictions_csv(path: impl AsRef<Path>, pairs: &[(usize, usize)], base: &DenseMatrix, stacked: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let names: Vec<&str> = BaseKind::ALL.iter().map(|k| k.name()).collect();
    writeln!(w, "a,b,{},stacked", names.join(",")).map_err(|e| Error::io(path, e))?;
    for (r, &(a, b)) in pairs.iter().enumerate() {
        let cols: Vec<String> = base.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{a},{b},{},{:?}", cols.join(","), stacked[r]).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;
    use crate::ensemble::logistic::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick_cfg() -> EnsembleConfig {
        EnsembleConfig {
            forest: ForestConfig {
                n_trees: 20,
                ..ForestConfig::default()
            },
            mlp: MlpConfig {
                epochs: 20,
                ..MlpConfig::default()
            },
            ..EnsembleConfig::default()
        }
    }

    /// Two informative columns plus noise, and GNN probabilities that track
    /// the first one.
    fn fixture(n: usize, seed: u64) -> (BaseInputs, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut gnn = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = u8::from(i % 2 == 0);
            let s = if c == 1 { 1.0 } else { -1.0 };
            let a = s + rng.gen_range(-1.2..1.2);
            rows.push(vec![a, 0.5 * s + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            gnn.push(vec![sigmoid(a), sigmoid(a + rng.gen_range(-0.5..0.5))]);
            y.push(c);
        }
        let inputs = BaseInputs::new(
            DenseMatrix::from_rows(&gnn).unwrap(),
            DenseMatrix::from_rows(&rows).unwrap(),
        )
        .unwrap();
        (inputs, y)
    }

    fn oof_of(inputs: &BaseInputs, y: &[u8], cfg: &EnsembleConfig) -> OofMatrix {
        let folds = assign_folds(y, cfg).unwrap();
        build_oof(inputs, y, &folds, cfg).unwrap()
    }

    #[test]
    fn every_row_predicted_once_per_model() {
        let (inputs, y) = fixture(100, 0);
        let oof = oof_of(&inputs, &y, &quick_cfg());
        assert_eq!(oof.predictions.shape(), (100, 5));
        for f in 0..5 {
            assert_eq!(oof.folds.iter().filter(|&&g| g == f).count(), 20);
        }
        assert!(oof.predictions.data().iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(oof.column(BaseKind::HeadHf), (0..100).map(|r| inputs.gnn.get(r, 1)).collect::<Vec<_>>());
    }

    #[test]
    fn oof_rows_reproduce_bit_for_bit() {
        let (inputs, y) = fixture(60, 1);
        let cfg = quick_cfg();
        let oof = oof_of(&inputs, &y, &cfg);
        for r in [0, 7, 19, 33, 58] {
            for kind in BaseKind::CLASSICAL {
                let m = refit_excluding_fold(&inputs.pair, &y, &oof.folds, kind, oof.folds[r], &cfg).unwrap();
                let p = m.predict_proba(&inputs.pair.select_rows(&[r]).unwrap()).unwrap()[0];
                assert_eq!(p.to_bits(), oof.predictions.get(r, kind.column()).to_bits());
            }
        }
    }

    #[test]
    fn forest_does_not_see_its_own_noisy_label() {
        let (inputs, mut y) = fixture(60, 2);
        let canary = (0..60)
            .filter(|&r| y[r] == 0)
            .min_by(|&a, &b| inputs.pair.get(a, 0).total_cmp(&inputs.pair.get(b, 0)))
            .unwrap();
        y[canary] = 1;
        let oof = oof_of(&inputs, &y, &quick_cfg());
        assert!(oof.predictions.get(canary, BaseKind::Forest.column()) < 1.0);
    }

    #[test]
    fn identical_columns_keep_rank_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let col: Vec<f64> = (0..80).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<u8> = col.iter().map(|&p| u8::from(rng.gen_bool(p))).collect();
        let preds = DenseMatrix::from_vec(80, 5, col.iter().flat_map(|&p| [p; 5]).collect()).unwrap();
        let oof = OofMatrix {
            folds: vec![0; 80],
            labels: y,
            predictions: preds.clone(),
        };
        let meta = fit_meta(&oof, &EnsembleConfig::default()).unwrap();
        let out = meta.predict_proba(&preds).unwrap();
        let mut idx: Vec<usize> = (0..80).collect();
        idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let increasing = meta.weights.iter().sum::<f64>() >= 0.0;
        for w in idx.windows(2) {
            let (lo, hi) = (out[w[0]], out[w[1]]);
            assert!(if increasing { lo <= hi } else { lo >= hi });
        }
        assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn perfect_column_survives_meta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let make = |n: usize, rng: &mut ChaCha8Rng| {
            let y: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
            let data: Vec<f64> = y
                .iter()
                .flat_map(|&v| {
                    let perfect = if v == 1 { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.0..0.4) };
                    let mut row = [0.0; 5];
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot = if c == 3 { perfect } else { rng.gen_range(0.0..1.0) };
                    }
                    row
                })
                .collect();
            (DenseMatrix::from_vec(n, 5, data).unwrap(), y)
        };
        let (train, ytr) = make(200, &mut rng);
        let (test, yte) = make(200, &mut rng);
        let oof = OofMatrix {
            folds: vec![0; 200],
            labels: ytr,
            predictions: train,
        };
        let meta = fit_meta(&oof, &EnsembleConfig::default()).unwrap();
        let stacked = auc(&meta.predict_proba(&test).unwrap(), &yte).unwrap();
        let col: Vec<f64> = (0..200).map(|r| test.get(r, 3)).collect();
        assert!(stacked >= auc(&col, &yte).unwrap() - 0.02, "{stacked}");
    }

    #[test]
    fn stack_is_deterministic_and_round_trips() {
        let (inputs, y) = fixture(50, 5);
        let cfg = quick_cfg();
        let folds = assign_folds(&y, &cfg).unwrap();
        let (a, oof_a) = fit_stack(&inputs, &y, &folds, &cfg).unwrap();
        let (b, oof_b) = fit_stack(&inputs, &y, &folds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(oof_a, oof_b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), &oof_a).unwrap();
        let loaded = StackedEnsemble::load(dir.path()).unwrap();
        assert_eq!(loaded, a);
        assert_eq!(read_oof_csv(dir.path().join("oof.csv")).unwrap(), oof_a);
        assert_eq!(a.predict(&inputs).unwrap(), loaded.predict(&inputs).unwrap());
    }

    #[test]
    fn bad_fold_count_is_config_error() {
        let (_, y) = fixture(20, 6);
        let cfg = EnsembleConfig {
            k_folds: 1,
            ..quick_cfg()
        };
        assert!(matches!(assign_folds(&y, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn gnn_columns_are_not_fit_here() {
        let (inputs, y) = fixture(20, 7);
        assert!(matches!(
            fit_base(BaseKind::HeadLf, &inputs.pair, &y, &quick_cfg(), 0),
            Err(Error::Contract(_))
        ));
    }
}

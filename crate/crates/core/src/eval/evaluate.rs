use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::metrics::{first_relevant_rank, rank_row, DirectionReport};
use crate::featstore::{Modality, Split};
use crate::model::{FeatureSet, HadaParams, ItemFeatures, Variant};
use crate::numerics::Tensor;
use crate::{Error, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    I2t,
    T2i,
}

/// Query × gallery scores with the relevant gallery indices per query.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<S> {
    pub direction: Direction,
    pub scores: Tensor<S>,
    pub relevance: Vec<Vec<usize>>,
}

impl<S: Scalar> SimilarityMatrix<S> {
    pub fn rank(&self) -> Result<Vec<Vec<usize>>, Error> {
        if self.relevance.len() != self.scores.rows() {
            return Err(Error::Eval(format!(
                "{} relevance sets for {} queries",
                self.relevance.len(),
                self.scores.rows()
            )));
        }
        if let Some(q) = self.relevance.iter().position(Vec::is_empty) {
            return Err(Error::Eval(format!(
                "query {q} has no relevant gallery item"
            )));
        }
        (0..self.scores.rows())
            .map(|q| rank_row(self.scores.row_slice(q), q))
            .collect()
    }
}

/// How image-text scores are formed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScoreMode {
    /// `⟨h_p, h_s⟩` only.
    Fused,
    /// `(1 − α)⟨h_p, h_s⟩ + α⟨anchor globals⟩`.
    Weighted,
    /// The weighted score of a B2 head.
    B2,
    /// One upstream model's globals.
    Single(String),
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreMode::Fused => f.write_str("fused"),
            ScoreMode::Weighted => f.write_str("weighted"),
            ScoreMode::B2 => f.write_str("b2"),
            ScoreMode::Single(m) => write!(f, "single:{m}"),
        }
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "fused" => Ok(ScoreMode::Fused),
            "weighted" => Ok(ScoreMode::Weighted),
            "b2" => Ok(ScoreMode::B2),
            _ => match s.strip_prefix("single:") {
                Some(m) if !m.is_empty() => Ok(ScoreMode::Single(m.to_string())),
                _ => Err(Error::Config(format!("unknown score mode {s:?}"))),
            },
        }
    }
}

/// Both directions' rankings over one split, with the ids they index.
#[derive(Clone, Debug, PartialEq)]
pub struct Rankings {
    pub images: Vec<String>,
    pub texts: Vec<String>,
    pub i2t: Vec<Vec<usize>>,
    pub t2i: Vec<Vec<usize>>,
    pub i2t_relevance: Vec<Vec<usize>>,
    pub t2i_relevance: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub i2t: DirectionReport,
    pub t2i: DirectionReport,
    pub total_rsum: f64,
    /// 1-based rank of the first relevant item per image query.
    pub i2t_first_rank: Vec<usize>,
    pub t2i_first_rank: Vec<usize>,
}

impl RetrievalReport {
    pub fn from_rankings(r: &Rankings) -> Self {
        let i2t = DirectionReport::from_rankings(&r.i2t, &r.i2t_relevance);
        let t2i = DirectionReport::from_rankings(&r.t2i, &r.t2i_relevance);
        let first = |rk: &[Vec<usize>], rel: &[Vec<usize>]| {
            rk.iter()
                .zip(rel)
                .map(|(a, b)| first_relevant_rank(a, b).unwrap_or(0))
                .collect()
        };
        Self {
            i2t,
            t2i,
            total_rsum: i2t.rsum + t2i.rsum,
            i2t_first_rank: first(&r.i2t, &r.i2t_relevance),
            t2i_first_rank: first(&r.t2i, &r.t2i_relevance),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: RetrievalReport,
    pub rankings: Rankings,
}

struct Gallery<'a> {
    images: Vec<&'a str>,
    texts: Vec<&'a str>,
    i2t_relevance: Vec<Vec<usize>>,
    t2i_relevance: Vec<Vec<usize>>,
}

fn gallery<S: Scalar>(data: &FeatureSet<S>, split: Split) -> Result<Gallery<'_>, Error> {
    let pairs = data.pairs_in(split);
    if pairs.is_empty() {
        return Err(Error::Eval(format!(
            "split {split} has no image-text pairs"
        )));
    }
    let mut g = Gallery {
        images: Vec::new(),
        texts: Vec::new(),
        i2t_relevance: Vec::new(),
        t2i_relevance: Vec::new(),
    };
    for (k, (img, texts)) in pairs.into_iter().enumerate() {
        g.images.push(img);
        let start = g.texts.len();
        g.i2t_relevance.push((start..start + texts.len()).collect());
        for t in texts {
            g.texts.push(t);
            g.t2i_relevance.push(vec![k]);
        }
    }
    Ok(g)
}

fn features<'a, S: Scalar>(
    data: &'a FeatureSet<S>,
    ids: &[&str],
) -> Result<Vec<&'a ItemFeatures<S>>, Error> {
    ids.iter().map(|id| data.get(id)).collect()
}

fn globals_of<S: Scalar>(items: &[&ItemFeatures<S>], model: usize) -> Result<Tensor<S>, Error> {
    let rows: Vec<Vec<S>> = items
        .iter()
        .map(|it| it.globals[model].data().to_vec())
        .collect();
    Ok(Tensor::from_rows(&rows)?)
}

/// Image × text score matrix for one split.
pub fn score_matrix<S: Scalar>(
    params: Option<&HadaParams<S>>,
    images: &[&ItemFeatures<S>],
    texts: &[&ItemFeatures<S>],
    model_ids: &[String],
    mode: &ScoreMode,
) -> Result<Tensor<S>, Error> {
    if let ScoreMode::Single(m) = mode {
        let i = model_ids
            .iter()
            .position(|id| id == m)
            .ok_or_else(|| Error::Config(format!("model {m:?} is not loaded")))?;
        return Ok(globals_of(images, i)?.matmul(&globals_of(texts, i)?.transpose()?)?);
    }
    let params =
        params.ok_or_else(|| Error::Config(format!("score mode {mode} needs a checkpoint")))?;
    let cfg = params.config();
    if cfg.model_ids() != model_ids {
        return Err(Error::Config(format!(
            "checkpoint models {:?} differ from loaded features {model_ids:?}",
            cfg.model_ids()
        )));
    }
    match (mode, cfg.variant) {
        (ScoreMode::B2, Variant::Hada) => {
            return Err(Error::Config("score mode b2 needs a B2 checkpoint".into()))
        }
        (ScoreMode::Fused | ScoreMode::Weighted, Variant::B2) => {
            return Err(Error::Config(format!(
                "score mode {mode} needs a HADA checkpoint"
            )))
        }
        _ => {}
    }
    let hp = params.embed_items(images, Modality::Image)?;
    let hs = params.embed_items(texts, Modality::Text)?;
    let fused = hp.matmul(&hs.transpose()?)?;
    if *mode == ScoreMode::Fused {
        return Ok(fused);
    }
    let a = cfg.anchor_index().expect("validated config");
    let anchor = globals_of(images, a)?.matmul(&globals_of(texts, a)?.transpose()?)?;
    let alpha = params.alpha();
    Ok(fused.zip_map(&anchor, |f, g| {
        crate::model::weighted_similarity(f, g, alpha)
    }))
}

/// Embeds every item of `split` once, scores both directions and reports.
pub fn evaluate<S: Scalar>(
    params: Option<&HadaParams<S>>,
    data: &FeatureSet<S>,
    split: Split,
    mode: &ScoreMode,
) -> Result<EvalOutcome, Error> {
    let g = gallery(data, split)?;
    let images = features(data, &g.images)?;
    let texts = features(data, &g.texts)?;
    let scores = score_matrix(params, &images, &texts, &data.model_ids, mode)?;
    let i2t = SimilarityMatrix {
        direction: Direction::I2t,
        scores: scores.clone(),
        relevance: g.i2t_relevance.clone(),
    };
    let t2i = SimilarityMatrix {
        direction: Direction::T2i,
        scores: scores.transpose()?,
        relevance: g.t2i_relevance.clone(),
    };
    let rankings = Rankings {
        images: g.images.iter().map(|s| s.to_string()).collect(),
        texts: g.texts.iter().map(|s| s.to_string()).collect(),
        i2t: i2t.rank()?,
        t2i: t2i.rank()?,
        i2t_relevance: g.i2t_relevance,
        t2i_relevance: g.t2i_relevance,
    };
    Ok(EvalOutcome {
        report: RetrievalReport::from_rankings(&rankings),
        rankings,
    })
}

fn average_ranks(a: &[Vec<usize>], b: &[Vec<usize>]) -> Result<Vec<Vec<usize>>, Error> {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(q, (ra, rb))| {
            let n = ra.len();
            let mut pos_a = vec![0usize; n];
            let mut pos_b = vec![0usize; n];
            for (p, &g) in ra.iter().enumerate() {
                pos_a[g] = p + 1;
            }
            for (p, &g) in rb.iter().enumerate() {
                pos_b[g] = p + 1;
            }
            let scores: Vec<f64> = (0..n)
                .map(|g| -((pos_a[g] + pos_b[g]) as f64) / 2.0)
                .collect();
            rank_row(&scores, q)
        })
        .collect()
}

/// Rank averaging of two systems' rankings over the same items.
pub fn baseline_b1(a: &Rankings, b: &Rankings) -> Result<EvalOutcome, Error> {
    if a.images != b.images || a.texts != b.texts || a.i2t_relevance != b.i2t_relevance {
        return Err(Error::Eval("B1 inputs rank different item sets".into()));
    }
    let rankings = Rankings {
        i2t: average_ranks(&a.i2t, &b.i2t)?,
        t2i: average_ranks(&a.t2i, &b.t2i)?,
        ..a.clone()
    };
    Ok(EvalOutcome {
        report: RetrievalReport::from_rankings(&rankings),
        rankings,
    })
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::container::Container;
use crate::error::{Error, Result};

/// Two-section conditioning: a frozen caption section followed by a
/// learnable inverted section, each `[rows, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceEmbedding {
    caption: Tensor,
    inversion: Tensor,
}

fn rows_dim(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [k, d] => Ok((*k, *d)),
        s => Err(Error::shape(
            "concat_guidance",
            format!("{what} section must be [rows, D], got {s:?}"),
        )),
    }
}

pub fn concat_guidance(caption: Tensor, inversion: Tensor) -> Result<GuidanceEmbedding> {
    let (k0, d0) = rows_dim(&caption, "caption")?;
    let (k1, d1) = rows_dim(&inversion, "inversion")?;
    if k0 + k1 == 0 {
        return Err(Error::invalid("guidance needs at least one row"));
    }
    if d0 != d1 {
        return Err(Error::shape(
            "concat_guidance",
            format!("embedding dimensions differ: caption D={d0}, inversion D={d1}"),
        ));
    }
    Ok(GuidanceEmbedding { caption, inversion })
}

impl GuidanceEmbedding {
    pub fn dim(&self) -> usize {
        self.caption.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.caption.shape()[0] + self.inversion.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frozen section.
    pub fn caption(&self) -> &Tensor {
        &self.caption
    }

    /// Learnable section.
    pub fn inversion(&self) -> &Tensor {
        &self.inversion
    }

    /// Rows `[caption; inversion]` as one `[K0 + K*, D]` tensor.
    pub fn joint(&self) -> Tensor {
        let mut data = self.caption.data().to_vec();
        data.extend_from_slice(self.inversion.data());
        Tensor::new(vec![self.len(), self.dim()], data).expect("consistent sections")
    }

    /// Split a joint tensor back into its sections.
    pub fn split(&self, joint: &Tensor) -> Result<(Tensor, Tensor)> {
        if joint.shape() != [self.len(), self.dim()] {
            return Err(Error::shape(
                "guidance split",
                format!("expected [{}, {}], got {:?}", self.len(), self.dim(), joint.shape()),
            ));
        }
        let cut = self.caption.numel();
        let d = self.dim();
        Ok((
            Tensor::new(vec![cut / d, d], joint.data()[..cut].to_vec())?,
            Tensor::new(vec![(joint.numel() - cut) / d, d], joint.data()[cut..].to_vec())?,
        ))
    }
}

pub const EMBEDDING_MAGIC: [u8; 4] = *b"NRDE";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableHeader {
    labels: Vec<String>,
}

/// Named embedding rows: the toy vocabulary, or a single inverted embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    labels: Vec<String>,
    table: Tensor,
}

impl EmbeddingTable {
    pub fn new(labels: Vec<String>, table: Tensor) -> Result<Self> {
        let (k, _) = rows_dim(&table, "embedding table")?;
        if k != labels.len() {
            return Err(Error::invalid(format!(
                "{} labels for {k} embedding rows",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || labels[..i].contains(l) {
                return Err(Error::invalid(format!("embedding label `{l}` is empty or repeated")));
            }
        }
        Ok(Self { labels, table })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| {
            Error::invalid(format!(
                "unknown class `{label}`; vocabulary: {}",
                self.labels.join(", ")
            ))
        })
    }

    /// Row `i` as a `[1, D]` tensor.
    pub fn row(&self, i: usize) -> Tensor {
        let d = self.dim();
        Tensor::new(vec![1, d], self.table.data()[i * d..(i + 1) * d].to_vec()).expect("row")
    }

    /// Mean of all rows as `[1, D]`.
    pub fn mean_row(&self) -> Tensor {
        let d = self.dim();
        let k = self.labels.len() as f64;
        let mut m = vec![0.0; d];
        for r in self.table.data().chunks(d) {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b / k;
            }
        }
        Tensor::new(vec![1, d], m).expect("row")
    }

    /// Cosine similarity of `v` to every row.
    pub fn cosine_to_rows(&self, v: &[f64]) -> Vec<f64> {
        let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        self.table
            .data()
            .chunks(self.dim())
            .map(|r| {
                let rn = r.iter().map(|a| a * a).sum::<f64>().sqrt();
                let dot: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
                dot / (rn * vn).max(1e-300)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&TableHeader {
            labels: self.labels.clone(),
        })
        .map_err(|e| Error::format(format!("cannot encode embedding header: {e}")))?;
        Ok(Container::new(EMBEDDING_MAGIC, header, vec![self.table.clone()]).to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes, EMBEDDING_MAGIC)?;
        let h: TableHeader =
            toml::from_str(&c.header).map_err(|e| Error::format(format!("bad embedding header: {e}")))?;
        let [table]: [Tensor; 1] = c
            .tensors
            .try_into()
            .map_err(|_| Error::format("embedding file must hold exactly one tensor"))?;
        Self::new(h.labels, table).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

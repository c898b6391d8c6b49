use std::fs;
use std::path::Path;

use super::collab_stage::CollabModel;
use super::stream::{AttentionConfig, StreamModel};
use crate::collab::{CollabHeads, CollabParams, GuideParams};
use crate::error::{Error, Result};
use crate::spatial::{SpatialHead, StreamTag};
use crate::temporal::{LstmParams, TemporalHeads};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCLM";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_STREAM: f64 = 0.0;
const KIND_COLLAB: f64 = 1.0;

/// Ordered named f64 tensors. On disk: magic, version u32 LE, then blocks
/// of (name length u32, name bytes, ndim u32, dims u32 each, f64 LE payload)
/// until end of file. Scalar metadata lives in one-element `meta.*` blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, tensor: Tensor) {
        self.blocks.push((name.to_string(), tensor));
    }

    fn push_meta(&mut self, name: &str, value: f64) {
        self.push(name, Tensor::scalar(value));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::CorruptFile(format!("missing block {name:?}")))
    }

    fn take(&self, name: &str) -> Result<Tensor> {
        Ok(self.get(name)?.clone())
    }

    pub fn meta(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        match t.data() {
            [v] => Ok(*v),
            _ => Err(Error::CorruptFile(format!("metadata {name:?} is not a scalar"))),
        }
    }

    fn meta_usize(&self, name: &str) -> Result<usize> {
        let v = self.meta(name)?;
        if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::CorruptFile(format!("metadata {name:?} = {v} is not a count")))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::CorruptFile("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut ck = Checkpoint::default();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::CorruptFile("block name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::CorruptFile(format!("block {name:?} too large")))?;
            let data = r
                .take(count)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::CorruptFile(format!("block {name:?}: {e}")))?;
            ck.blocks.push((name, t));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    fn expect_kind(&self, kind: f64) -> Result<()> {
        if self.meta("meta.kind")? != kind {
            let what = if kind == KIND_STREAM { "stream" } else { "collaborative" };
            return Err(Error::CorruptFile(format!("not a {what} checkpoint")));
        }
        Ok(())
    }

    pub fn from_stream(model: &StreamModel) -> Self {
        let mut ck = Checkpoint::default();
        ck.push_meta("meta.kind", KIND_STREAM);
        ck.push_meta("meta.stream", model.stream.index() as f64);
        ck.push_meta("meta.spatial_attention", f64::from(u8::from(model.attention.spatial)));
        ck.push_meta("meta.temporal_attention", f64::from(u8::from(model.attention.temporal)));
        for (name, t) in model.tensors() {
            ck.push(name, t.clone());
        }
        ck
    }

    pub fn to_stream(&self) -> Result<StreamModel> {
        self.expect_kind(KIND_STREAM)?;
        let stream = match self.meta_usize("meta.stream")? {
            0 => StreamTag::Static,
            1 => StreamTag::Motion,
            other => return Err(Error::CorruptFile(format!("unknown stream {other}"))),
        };
        let attention = AttentionConfig {
            spatial: self.meta("meta.spatial_attention")? != 0.0,
            temporal: self.meta("meta.temporal_attention")? != 0.0,
        };
        let corrupt = |e: Error| Error::CorruptFile(e.to_string());
        let spatial = SpatialHead::new(
            self.take("spatial.cam_kernels")?,
            self.take("spatial.cam_bias")?,
            self.take("spatial.classifier_weights")?,
            self.take("spatial.classifier_bias")?,
        )
        .map_err(corrupt)?;
        let lstm = LstmParams::new(
            self.take("lstm.w_input")?,
            self.take("lstm.w_hidden")?,
            self.take("lstm.bias")?,
        )
        .map_err(corrupt)?;
        let heads = TemporalHeads {
            feature_weights: self.take("heads.feature_weights")?,
            feature_bias: self.take("heads.feature_bias")?,
            lstm_weights: self.take("heads.lstm_weights")?,
            lstm_bias: self.take("heads.lstm_bias")?,
        };
        let c = heads.classes();
        let n = lstm.hidden_size();
        let d = lstm.input_size();
        if heads.feature_weights.shape() != [d, c]
            || heads.lstm_weights.shape() != [n, c]
            || heads.lstm_bias.shape() != [c]
            || spatial.classes() != c
            || spatial.in_channels() != d
        {
            return Err(Error::CorruptFile("stream checkpoint shapes disagree".into()));
        }
        Ok(StreamModel {
            stream,
            attention,
            spatial,
            lstm,
            heads,
        })
    }

    pub fn from_collab(model: &CollabModel) -> Self {
        let mut ck = Checkpoint::default();
        ck.push_meta("meta.kind", KIND_COLLAB);
        ck.push_meta("meta.unroll_rounds", model.unroll_rounds as f64);
        ck.push_meta("meta.max_segments", model.max_segments as f64);
        for (name, t) in model.tensors() {
            ck.push(name, t.clone());
        }
        ck
    }

    pub fn to_collab(&self) -> Result<CollabModel> {
        self.expect_kind(KIND_COLLAB)?;
        let corrupt = |e: Error| Error::CorruptFile(e.to_string());
        let guide = |prefix: &str| -> Result<GuideParams> {
            GuideParams::new(
                self.take(&format!("{prefix}.proj"))?,
                self.take(&format!("{prefix}.guide"))?,
                self.take(&format!("{prefix}.score"))?,
            )
            .map_err(corrupt)
        };
        let params = CollabParams {
            to_motion: guide("collab.to_motion")?,
            to_static: guide("collab.to_static")?,
        };
        let heads = CollabHeads {
            static_weights: self.take("collab_heads.static_weights")?,
            static_bias: self.take("collab_heads.static_bias")?,
            motion_weights: self.take("collab_heads.motion_weights")?,
            motion_bias: self.take("collab_heads.motion_bias")?,
        };
        let d = params.to_motion.proj.shape()[0];
        let c = heads.static_bias.len();
        let dims_ok = [&params.to_static.proj, &params.to_static.guide, &params.to_motion.guide]
            .iter()
            .all(|t| t.shape()[0] == d)
            && heads.static_weights.shape() == [d, c]
            && heads.motion_weights.shape() == [d, c]
            && heads.motion_bias.shape() == [c];
        if !dims_ok {
            return Err(Error::CorruptFile("collaborative checkpoint shapes disagree".into()));
        }
        let unroll_rounds = self.meta_usize("meta.unroll_rounds")?;
        let max_segments = self.meta_usize("meta.max_segments")?;
        if unroll_rounds == 0 || max_segments == 0 {
            return Err(Error::CorruptFile("zero rounds or segments".into()));
        }
        Ok(CollabModel {
            params,
            heads,
            unroll_rounds,
            max_segments,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptFile("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::TrainConfig;

    #[test]
    fn stream_round_trip_is_exact() {
        let cfg = TrainConfig::default();
        let m = StreamModel::init(StreamTag::Motion, AttentionConfig::TEMPORAL, 6, 4, &cfg);
        let bytes = Checkpoint::from_stream(&m).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap().to_stream().unwrap();
        assert_eq!(back, m);
        assert_eq!(Checkpoint::from_stream(&back).to_bytes(), bytes);
    }

    #[test]
    fn collab_round_trip_is_exact() {
        let m = CollabModel::init(5, 3, &TrainConfig::default());
        let back = Checkpoint::from_bytes(&Checkpoint::from_collab(&m).to_bytes())
            .unwrap()
            .to_collab()
            .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_and_version_errors() {
        let m = StreamModel::init(StreamTag::Static, AttentionConfig::FULL, 3, 2, &TrainConfig::default());
        let mut bytes = Checkpoint::from_stream(&m).to_bytes();
        let cat = |b: &[u8]| Checkpoint::from_bytes(b).unwrap_err().category();
        assert_eq!(cat(b""), "corrupt-file");
        assert_eq!(cat(&bytes[..bytes.len() - 3]), "corrupt-file");
        bytes[4] = 7;
        assert_eq!(cat(&bytes), "unsupported-version");
        bytes[4] = 1;
        bytes[0] = b'X';
        assert_eq!(cat(&bytes), "corrupt-file");
        let wrong_kind = Checkpoint::from_stream(&m).to_collab().unwrap_err();
        assert_eq!(wrong_kind.category(), "corrupt-file");
    }
}

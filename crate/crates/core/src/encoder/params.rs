use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderVariant};
use crate::error::{PmlError, Result};
use crate::seed;

/// Which part of the model a block belongs to. Optimizers and the
/// detachment rules select blocks by group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Encoder,
    DiscHead,
    LabelPolicy,
    FeaturePolicy,
}

impl Group {
    fn as_str(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::DiscHead => "disc-head",
            Group::LabelPolicy => "label-policy",
            Group::FeaturePolicy => "feature-policy",
        }
    }

    fn parse(s: &str) -> Option<Group> {
        Some(match s {
            "encoder" => Group::Encoder,
            "disc-head" => Group::DiscHead,
            "label-policy" => Group::LabelPolicy,
            "feature-policy" => Group::FeaturePolicy,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Dense matrix, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Weight,
    /// Linear bias, same distribution as its weight.
    Bias,
    /// Layer-norm gain, ones.
    Gain,
    /// Layer-norm shift, zeros.
    Shift,
}

#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub name: String,
    pub group: Group,
    pub kind: BlockKind,
    pub fan_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gain: ParamId,
    pub shift: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub norm: NormIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub attention: Option<AttentionIds>,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
    pub norm2: Option<NormIds>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub input: LinearIds,
    pub layers: Vec<LayerIds>,
    pub disc: LinearIds,
    pub label_policy: ParamId,
    pub feature_policy: LinearIds,
}

/// All trainable weights with congruent gradient arrays.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    pub(crate) config: EncoderConfig,
    pub(crate) n_features: usize,
    pub(crate) n_labels: usize,
    pub(crate) specs: Vec<BlockSpec>,
    pub(crate) values: Vec<Array2<f64>>,
    pub(crate) grads: Vec<Array2<f64>>,
    pub(crate) layout: Layout,
    pub(crate) version: u64,
}

struct Builder {
    specs: Vec<BlockSpec>,
    shapes: Vec<(usize, usize)>,
}

impl Builder {
    fn block(
        &mut self,
        name: String,
        group: Group,
        kind: BlockKind,
        rows: usize,
        cols: usize,
        fan_in: usize,
    ) -> ParamId {
        self.specs.push(BlockSpec {
            name,
            group,
            kind,
            fan_in,
        });
        self.shapes.push((rows, cols));
        ParamId(self.specs.len() - 1)
    }

    fn linear(&mut self, name: &str, group: Group, fan_in: usize, fan_out: usize) -> LinearIds {
        LinearIds {
            w: self.block(format!("{name}.w"), group, BlockKind::Weight, fan_in, fan_out, fan_in),
            b: self.block(format!("{name}.b"), group, BlockKind::Bias, 1, fan_out, fan_in),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> NormIds {
        NormIds {
            gain: self.block(format!("{name}.gain"), Group::Encoder, BlockKind::Gain, 1, width, width),
            shift: self.block(format!("{name}.shift"), Group::Encoder, BlockKind::Shift, 1, width, width),
        }
    }
}

impl ParameterStore {
    pub(crate) fn new(cfg: &EncoderConfig, d: usize, labels: usize) -> Result<ParameterStore> {
        cfg.validate()?;
        if d == 0 || labels == 0 {
            return Err(PmlError::Config("d and L must be at least 1".into()));
        }
        let w = cfg.model_width;
        let ff = cfg.feedforward_width;
        let mut b = Builder {
            specs: Vec::new(),
            shapes: Vec::new(),
        };
        let input = b.linear("input", Group::Encoder, d + labels, w);
        let mut layers = Vec::with_capacity(cfg.layer_count);
        for l in 0..cfg.layer_count {
            let attention = match cfg.variant {
                EncoderVariant::Transformer => Some(AttentionIds {
                    q: b.linear(&format!("layer{l}.attn.q"), Group::Encoder, w, w),
                    k: b.linear(&format!("layer{l}.attn.k"), Group::Encoder, w, w),
                    v: b.linear(&format!("layer{l}.attn.v"), Group::Encoder, w, w),
                    o: b.linear(&format!("layer{l}.attn.o"), Group::Encoder, w, w),
                    norm: b.norm(&format!("layer{l}.norm1"), w),
                }),
                EncoderVariant::Mlp => None,
            };
            let ff1 = b.linear(&format!("layer{l}.ff1"), Group::Encoder, w, ff);
            let ff2 = b.linear(&format!("layer{l}.ff2"), Group::Encoder, ff, w);
            let norm2 = match cfg.variant {
                EncoderVariant::Transformer => Some(b.norm(&format!("layer{l}.norm2"), w)),
                EncoderVariant::Mlp => None,
            };
            layers.push(LayerIds {
                attention,
                ff1,
                ff2,
                norm2,
            });
        }
        let disc = b.linear("disc", Group::DiscHead, w, labels);
        let label_policy = b.block(
            "label_policy.theta".into(),
            Group::LabelPolicy,
            BlockKind::Weight,
            w,
            labels,
            w,
        );
        let feature_policy = b.linear("feature_policy", Group::FeaturePolicy, w, d);

        let mut rng = seed::derived_rng(cfg.seed, "encoder/init");
        let values: Vec<Array2<f64>> = b
            .specs
            .iter()
            .zip(&b.shapes)
            .map(|(spec, &(r, c))| match spec.kind {
                BlockKind::Weight | BlockKind::Bias => {
                    let bound = 1.0 / (spec.fan_in as f64).sqrt();
                    Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
                }
                BlockKind::Gain => Array2::ones((r, c)),
                BlockKind::Shift => Array2::zeros((r, c)),
            })
            .collect();
        let grads = values.iter().map(|v| Array2::zeros(v.raw_dim())).collect();
        Ok(ParameterStore {
            config: cfg.clone(),
            n_features: d,
            n_labels: labels,
            specs: b.specs,
            values,
            grads,
            layout: Layout {
                input,
                layers,
                disc,
                label_policy,
                feature_policy,
            },
            version: 0,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn input_dim(&self) -> usize {
        self.n_features + self.n_labels
    }

    pub fn model_width(&self) -> usize {
        self.config.model_width
    }

    pub fn block_count(&self) -> usize {
        self.specs.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.specs.len()).map(ParamId)
    }

    pub fn spec(&self, id: ParamId) -> &BlockSpec {
        &self.specs[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    /// Mutable access to a weight block. Bumps the store version so tapes
    /// recorded before the change are rejected.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        self.version += 1;
        &mut self.values[id.0]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn label_policy_id(&self) -> ParamId {
        self.layout.label_policy
    }

    pub fn feature_policy_ids(&self) -> (ParamId, ParamId) {
        (self.layout.feature_policy.w, self.layout.feature_policy.b)
    }

    pub fn group_ids(&self, group: Group) -> Vec<ParamId> {
        self.ids().filter(|&id| self.specs[id.0].group == group).collect()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn grad_norm(&self, groups: &[Group]) -> f64 {
        self.ids()
            .filter(|&id| groups.contains(&self.specs[id.0].group))
            .map(|id| self.grads[id.0].iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Sets every weight to zero (gains included).
    pub fn zero_values(&mut self) {
        self.version += 1;
        for v in &mut self.values {
            v.fill(0.0);
        }
    }

    /// Copies weight values (not gradients or optimizer state) of `groups`
    /// from `other`, which must share the same layout.
    pub fn copy_groups_from(&mut self, other: &ParameterStore, groups: &[Group]) -> Result<()> {
        if other.specs.len() != self.specs.len() {
            return Err(PmlError::Config("parameter layouts differ".into()));
        }
        self.version += 1;
        for (i, spec) in self.specs.iter().enumerate() {
            if groups.contains(&spec.group) {
                self.values[i].assign(&other.values[i]);
            }
        }
        Ok(())
    }

    pub(crate) fn split_mut(&mut self) -> (&[Array2<f64>], &mut [Array2<f64>]) {
        (&self.values, &mut self.grads)
    }

    // ---------------------------------------------------------------------
    // checkpoint files

    /// Writes a checkpoint.
    ///
    /// Layout: an ASCII preamble line `PMLFS-CKPT 1`, a `stamp <text>` line,
    /// a `config <json>` line, then for every block a line
    /// `block <name> <group> <rows> <cols>` immediately followed by
    /// `rows * cols` little-endian f64 values in row-major order and a
    /// newline. The file ends with `end\n`.
    pub fn write_checkpoint(&self, mut w: impl Write, stamp: &str) -> Result<()> {
        let io = |e| PmlError::io("writing checkpoint", e);
        let mut header = String::new();
        let _ = writeln!(header, "PMLFS-CKPT 1");
        let _ = writeln!(header, "stamp {stamp}");
        let _ = writeln!(
            header,
            "config {}",
            serde_json::to_string(&CheckpointConfig {
                encoder: self.config.clone(),
                n_features: self.n_features,
                n_labels: self.n_labels,
            })?
        );
        w.write_all(header.as_bytes()).map_err(io)?;
        for (spec, value) in self.specs.iter().zip(&self.values) {
            let (r, c) = value.dim();
            w.write_all(format!("block {} {} {r} {c}\n", spec.name, spec.group.as_str()).as_bytes())
                .map_err(io)?;
            let mut bytes = Vec::with_capacity(r * c * 8 + 1);
            for v in value.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.push(b'\n');
            w.write_all(&bytes).map_err(io)?;
        }
        w.write_all(b"end\n").map_err(io)?;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, stamp: &str) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)
            .map_err(|e| PmlError::io(format!("creating {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w, stamp)?;
        w.flush().map_err(|e| PmlError::io("flushing checkpoint", e))
    }

    /// Reads a checkpoint written by [`ParameterStore::write_checkpoint`].
    /// Returns the store and its stamp.
    pub fn read_checkpoint(r: impl Read) -> Result<(ParameterStore, String)> {
        let mut r = BufReader::new(r);
        let bad = |m: &str| PmlError::InvalidData(format!("checkpoint: {m}"));
        let mut line = String::new();
        let next_line = |r: &mut BufReader<_>, line: &mut String| -> Result<()> {
            line.clear();
            r.read_line(line).map_err(|e| PmlError::io("reading checkpoint", e))?;
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        if line.trim_end() != "PMLFS-CKPT 1" {
            return Err(bad("missing preamble"));
        }
        next_line(&mut r, &mut line)?;
        let stamp = line
            .trim_end()
            .strip_prefix("stamp ")
            .ok_or_else(|| bad("missing stamp"))?
            .to_string();
        next_line(&mut r, &mut line)?;
        let cfg: CheckpointConfig = serde_json::from_str(
            line.trim_end()
                .strip_prefix("config ")
                .ok_or_else(|| bad("missing config"))?,
        )?;
        let mut store = ParameterStore::new(&cfg.encoder, cfg.n_features, cfg.n_labels)?;
        for i in 0..store.specs.len() {
            next_line(&mut r, &mut line)?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 || parts[0] != "block" {
                return Err(bad("malformed block header"));
            }
            if parts[1] != store.specs[i].name
                || Group::parse(parts[2]) != Some(store.specs[i].group)
            {
                return Err(bad(&format!("unexpected block `{}`", parts[1])));
            }
            let rows: usize = parts[3].parse().map_err(|_| bad("bad rows"))?;
            let cols: usize = parts[4].parse().map_err(|_| bad("bad cols"))?;
            if (rows, cols) != store.values[i].dim() {
                return Err(bad(&format!("shape mismatch for `{}`", parts[1])));
            }
            let mut buf = vec![0u8; rows * cols * 8 + 1];
            r.read_exact(&mut buf).map_err(|e| PmlError::io("reading checkpoint payload", e))?;
            for (slot, chunk) in store.values[i].iter_mut().zip(buf.chunks_exact(8)) {
                *slot = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        next_line(&mut r, &mut line)?;
        if line.trim_end() != "end" {
            return Err(bad("missing end marker"));
        }
        Ok((store, stamp))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParameterStore, String)> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| PmlError::io(format!("opening {}", path.display()), e))?;
        ParameterStore::read_checkpoint(file)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    encoder: EncoderConfig,
    n_features: usize,
    n_labels: usize,
}

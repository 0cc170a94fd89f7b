//! Analytic FLOP counts for a stack of conv / attention / group-norm layers
//! on a multi-plane input.
//!
//! Conventions: one multiply-accumulate is 2 FLOPs; softmax and
//! normalization cost 5 FLOPs per element. Cube padding is reported on its
//! own line and left out of the headline total.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        c_in: u64,
        c_out: u64,
        kernel: u64,
        #[serde(default = "one")]
        scale: u64,
    },
    Attention {
        channels: u64,
        heads: u64,
        #[serde(default = "one")]
        scale: u64,
    },
    GroupNorm {
        channels: u64,
        groups: u64,
        #[serde(default = "one")]
        scale: u64,
    },
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("bad architecture spec: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyncFlags {
    pub attention: bool,
    pub conv: bool,
    pub group_norm: bool,
}

impl SyncFlags {
    pub const ALL: SyncFlags = SyncFlags {
        attention: true,
        conv: true,
        group_norm: true,
    };
    pub const NONE: SyncFlags = SyncFlags {
        attention: false,
        conv: false,
        group_norm: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub conv: u128,
    pub attention_projection: u128,
    /// `Q K^T` and `P V` products.
    pub attention_quadratic: u128,
    pub softmax: u128,
    pub norm: u128,
    /// Halo resampling for synced convolutions; not part of `total`.
    pub padding: u128,
    pub total: u128,
}

/// FLOPs of one forward pass over `batch` samples of `planes` planes of
/// `height x width` pixels.
pub fn estimate_flops(arch: &ArchSpec, batch: u64, planes: u64, height: u64, width: u64, sync: SyncFlags) -> Result<FlopsBreakdown> {
    let mut f = FlopsBreakdown::default();
    let (b, m) = (batch as u128, planes as u128);
    for layer in &arch.layers {
        let scale = match layer {
            LayerSpec::Conv { scale, .. } | LayerSpec::Attention { scale, .. } | LayerSpec::GroupNorm { scale, .. } => *scale,
        };
        if scale == 0 || height % scale != 0 || width % scale != 0 {
            return Err(invalid(format!("scale {scale} does not divide {height}x{width}")));
        }
        let (h, w) = ((height / scale) as u128, (width / scale) as u128);
        let hw = h * w;
        match *layer {
            LayerSpec::Conv { c_in, c_out, kernel, .. } => {
                let (ci, co, k) = (c_in as u128, c_out as u128, kernel as u128);
                f.conv += 2 * b * m * hw * ci * co * k * k;
                if sync.conv && kernel > 1 {
                    let p = (k - 1) / 2;
                    let halo = (h + 2 * p) * (w + 2 * p) - hw;
                    f.padding += 8 * b * m * halo * ci;
                }
            }
            LayerSpec::Attention { channels, heads, .. } => {
                if heads == 0 || channels % heads != 0 {
                    return Err(invalid(format!("{channels} channels not divisible by {heads} heads")));
                }
                let (c, nh) = (channels as u128, heads as u128);
                f.attention_projection += 4 * 2 * b * m * hw * c * c;
                let (seqs, len) = if sync.attention { (b, m * hw) } else { (b * m, hw) };
                f.attention_quadratic += 2 * 2 * seqs * len * len * c;
                f.softmax += 5 * seqs * nh * len * len;
            }
            LayerSpec::GroupNorm { channels, groups, .. } => {
                if groups == 0 || channels % groups != 0 {
                    return Err(invalid(format!("{channels} channels not divisible into {groups} groups")));
                }
                f.norm += 5 * b * m * hw * channels as u128;
            }
        }
    }
    f.total = f.conv + f.attention_projection + f.attention_quadratic + f.softmax + f.norm;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchSpec {
        ArchSpec::from_json(
            r#"{"layers": [
                {"kind": "conv", "c_in": 12, "c_out": 16, "kernel": 3},
                {"kind": "group_norm", "channels": 16, "groups": 4},
                {"kind": "attention", "channels": 16, "heads": 2, "scale": 2},
                {"kind": "conv", "c_in": 16, "c_out": 8, "kernel": 3}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_ratio_is_plane_count() {
        for h in [4u64, 16, 32, 64, 128] {
            let s = estimate_flops(&arch(), 2, 6, h, h, SyncFlags::ALL).unwrap();
            let u = estimate_flops(&arch(), 2, 6, h, h, SyncFlags::NONE).unwrap();
            assert_eq!(s.attention_quadratic, 6 * u.attention_quadratic);
            assert_eq!(s.softmax, 6 * u.softmax);
            assert_eq!(s.conv, u.conv);
            assert_eq!(s.norm, u.norm);
            assert_eq!(s.attention_projection, u.attention_projection);
        }
    }

    #[test]
    fn conv_only_arch_ignores_sync() {
        let a = ArchSpec {
            layers: vec![LayerSpec::Conv {
                c_in: 3,
                c_out: 3,
                kernel: 3,
                scale: 1,
            }],
        };
        let s = estimate_flops(&a, 1, 6, 8, 8, SyncFlags::ALL).unwrap();
        let u = estimate_flops(&a, 1, 6, 8, 8, SyncFlags::NONE).unwrap();
        assert_eq!(s.total, u.total);
        assert_eq!(s.conv, 2 * 6 * 64 * 9 * 9);
        assert!(s.padding > 0 && u.padding == 0);
    }

    #[test]
    fn unknown_layer_kind_is_an_error() {
        let err = ArchSpec::from_json(r#"{"layers": [{"kind": "pooling", "size": 2}]}"#).unwrap_err();
        assert!(err.to_string().contains("pooling"), "{err}");
    }
}

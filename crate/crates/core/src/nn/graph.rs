use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calib::CalibratorKind;
use crate::error::{Error, Result};
use crate::nn::conv::output_extent;
use crate::polar::PolarLattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerKind {
    Conv {
        k: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool2,
    AvgPool {
        extent: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv {
                k,
                in_channels,
                out_channels,
                ..
            } => out_channels * in_channels * k * k + out_channels,
            LayerKind::Dense { inputs, outputs } => inputs * outputs + outputs,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::Dense { .. } => "dense",
        }
    }
}

/// A feed-forward stack; every convolution uses the graph's calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    /// `(channels, height, width)` of one input image.
    pub input: [usize; 3],
    pub calibrator: CalibratorKind,
    pub layers: Vec<LayerKind>,
}

/// The named architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Six convolutions of 32/32/64/64/128/128 kernels (7x7 then 3x3).
    Paper6,
    /// The same topology with K=3 and 16/16/32/32/64/64 kernels.
    Desk,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Paper6 => "paper6",
            Architecture::Desk => "desk",
        }
    }

    pub fn build(self, calibrator: CalibratorKind) -> LayerGraph {
        match self {
            Architecture::Paper6 => LayerGraph::paper_baseline(calibrator),
            Architecture::Desk => LayerGraph::desk(calibrator),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper6" => Ok(Architecture::Paper6),
            "desk" => Ok(Architecture::Desk),
            _ => Err(Error::InvalidConfig(format!(
                "unknown architecture `{s}`; expected paper6 or desk"
            ))),
        }
    }
}

impl LayerGraph {
    /// Two conv pairs each followed by 2x2 max pooling, a third conv pair,
    /// global average pooling over the remaining 7x7 map and a dense layer.
    pub fn six_layer(
        input: [usize; 3],
        widths: [usize; 6],
        k_first: usize,
        k_last: usize,
        classes: usize,
        calibrator: CalibratorKind,
    ) -> LayerGraph {
        let mut layers = Vec::new();
        let mut cin = input[0];
        for (i, &w) in widths.iter().enumerate() {
            layers.push(LayerKind::Conv {
                k: if i < 4 { k_first } else { k_last },
                in_channels: cin,
                out_channels: w,
                stride: 1,
            });
            layers.push(LayerKind::Relu);
            if i == 1 || i == 3 {
                layers.push(LayerKind::MaxPool2);
            }
            cin = w;
        }
        layers.push(LayerKind::AvgPool { extent: input[1] / 4 });
        layers.push(LayerKind::Dense {
            inputs: cin,
            outputs: classes,
        });
        LayerGraph {
            input,
            calibrator,
            layers,
        }
    }

    pub fn paper_baseline(calibrator: CalibratorKind) -> LayerGraph {
        Self::six_layer([1, 28, 28], [32, 32, 64, 64, 128, 128], 7, 3, 10, calibrator)
    }

    pub fn desk(calibrator: CalibratorKind) -> LayerGraph {
        Self::six_layer([1, 28, 28], [16, 16, 32, 32, 64, 64], 3, 3, 10, calibrator)
    }

    pub fn with_calibrator(&self, calibrator: CalibratorKind) -> LayerGraph {
        LayerGraph {
            calibrator,
            ..self.clone()
        }
    }

    /// `(channels, height, width)` after every layer; errors on the first
    /// inconsistent layer.
    pub fn output_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        if shape.contains(&0) {
            return Err(Error::InvalidConfig(format!("input shape {shape:?} has a zero extent")));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let [c, h, w] = shape;
            shape = match *layer {
                LayerKind::Conv {
                    k,
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    PolarLattice::new(k)?;
                    if in_channels != c || stride == 0 || out_channels == 0 {
                        return Err(Error::shape(
                            format!("layer {i}: conv over {in_channels} channels"),
                            format!("{c} channels"),
                        ));
                    }
                    [
                        out_channels,
                        output_extent(h, k, stride, k / 2),
                        output_extent(w, k, stride, k / 2),
                    ]
                }
                LayerKind::Relu => shape,
                LayerKind::MaxPool2 | LayerKind::AvgPool { .. } => {
                    let e = match *layer {
                        LayerKind::AvgPool { extent } => extent,
                        _ => 2,
                    };
                    if e == 0 || h % e != 0 || w % e != 0 {
                        return Err(Error::NonDivisiblePool {
                            extent: e,
                            height: h,
                            width: w,
                        });
                    }
                    [c, h / e, w / e]
                }
                LayerKind::Dense { inputs, outputs } => {
                    if inputs != c * h * w {
                        return Err(Error::shape(
                            format!("layer {i}: dense over {inputs} features"),
                            format!("{} features", c * h * w),
                        ));
                    }
                    [outputs, 1, 1]
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn classes(&self) -> usize {
        self.output_shapes()
            .ok()
            .and_then(|s| s.last().map(|l| l[0] * l[1] * l[2]))
            .unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerKind::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.output_shapes().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_baseline_topology() {
        let g = LayerGraph::paper_baseline(CalibratorKind::None);
        let shapes = g.output_shapes().unwrap();
        assert_eq!(shapes.last(), Some(&[10, 1, 1]));
        let convs: Vec<_> = g
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerKind::Conv { k, out_channels, .. } => Some((*k, *out_channels)),
                _ => None,
            })
            .collect();
        assert_eq!(convs, [(7, 32), (7, 32), (7, 64), (7, 64), (3, 128), (3, 128)]);
        let pooled: Vec<_> = g
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l, LayerKind::MaxPool2 | LayerKind::AvgPool { .. }))
            .map(|(_, s)| *s)
            .collect();
        assert_eq!(pooled, [[32, 14, 14], [64, 7, 7], [128, 1, 1]]);
    }

    #[test]
    fn calibrator_changes_no_shape_or_count() {
        let base = LayerGraph::paper_baseline(CalibratorKind::None);
        for kind in CalibratorKind::ALL {
            let g = base.with_calibrator(kind);
            assert_eq!(g.output_shapes().unwrap(), base.output_shapes().unwrap());
            assert_eq!(g.param_count(), base.param_count());
        }
    }

    #[test]
    fn reduced_variant_keeps_shape_relations() {
        let g = LayerGraph::six_layer([1, 28, 28], [16, 16, 32, 32, 32, 32], 3, 3, 10, CalibratorKind::Gd);
        let shapes = g.output_shapes().unwrap();
        assert_eq!(shapes[4], [16, 14, 14]);
        assert_eq!(shapes.last(), Some(&[10, 1, 1]));
        let desk = LayerGraph::desk(CalibratorKind::St);
        assert_eq!(desk.output_shapes().unwrap().last(), Some(&[10, 1, 1]));
    }

    #[test]
    fn inconsistent_graphs_are_rejected() {
        let mut g = LayerGraph::desk(CalibratorKind::None);
        g.input = [1, 30, 30];
        assert!(g.validate().is_err());
        assert!("paper7".parse::<Architecture>().is_err());
    }

    #[test]
    fn graph_serializes() {
        let g = LayerGraph::desk(CalibratorKind::LbpAdj);
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("\"lbp-adj\""));
        assert_eq!(serde_json::from_str::<LayerGraph>(&json).unwrap(), g);
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::Genotype;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleKind {
    MaxPool,
    AvgPool,
    StridedConv,
}

impl DownsampleKind {
    pub const ALL: [DownsampleKind; 3] = [Self::MaxPool, Self::AvgPool, Self::StridedConv];

    pub fn name(self) -> &'static str {
        match self {
            Self::MaxPool => "max_pool",
            Self::AvgPool => "avg_pool",
            Self::StridedConv => "strided_conv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TaskIl,
    ClassIl,
    Custom,
}

/// Which architectural components a decoded network uses.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub downsample: DownsampleKind,
    pub use_skip: bool,
    pub use_gap: bool,
    /// Output width of an optional 1x1 conv inserted before the classifier.
    #[serde(default)]
    pub pre_classifier: Option<usize>,
    pub preset: Preset,
}

impl ComponentConfig {
    /// Max pooling with skips, no global average pooling.
    pub fn task_il() -> Self {
        Self {
            downsample: DownsampleKind::MaxPool,
            use_skip: true,
            use_gap: false,
            pre_classifier: None,
            preset: Preset::TaskIl,
        }
    }

    /// Max pooling with skips and global average pooling.
    pub fn class_il() -> Self {
        Self {
            use_gap: true,
            preset: Preset::ClassIl,
            ..Self::task_il()
        }
    }

    pub fn custom(downsample: DownsampleKind, use_skip: bool, use_gap: bool) -> Self {
        Self {
            downsample,
            use_skip,
            use_gap,
            pre_classifier: None,
            preset: Preset::Custom,
        }
    }

    pub fn with_pre_classifier(mut self, width: Option<usize>) -> Self {
        self.pre_classifier = width;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn square(channels: usize, size: usize) -> Self {
        Self::new(channels, size, size)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// 3x3 stride-1 conv + BN + ReLU.
    Stem { cin: usize, cout: usize },
    /// Halves the spatial size before a unit.
    Downsample { kind: DownsampleKind, channels: usize },
    /// 3x3 conv + BN, optional skip (1x1 projection when widths differ), ReLU.
    Unit {
        index: usize,
        cin: usize,
        cout: usize,
        skip: bool,
        projection: bool,
    },
    /// 1x1 conv + BN + ReLU.
    PreClassifier { cin: usize, cout: usize },
    GlobalAvgPool,
    Flatten,
    Classifier { features: usize, classes: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

/// A decoded genotype: ordered layers with per-sample shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitecturePlan {
    pub genotype: Genotype,
    pub config: ComponentConfig,
    pub input: InputShape,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// conv kernel + bias + BN gamma/beta
pub(crate) fn conv_bn_params(cin: usize, cout: usize, k: usize) -> usize {
    k * k * cin * cout + cout + 2 * cout
}

impl ArchitecturePlan {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    /// Width of the vector fed to the classifier.
    pub fn feature_width(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Classifier { features, .. }) => *features,
            _ => unreachable!("plans always end with a classifier"),
        }
    }

    /// `[C, H, W]` of the last convolutional feature map.
    pub fn final_feature_map(&self) -> [usize; 3] {
        let last_map = self
            .layers
            .iter()
            .rev()
            .find(|l| l.output.len() == 3)
            .expect("stem is spatial");
        [last_map.output[0], last_map.output[1], last_map.output[2]]
    }

    pub fn downsample_layers(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::Downsample { .. }))
    }

    pub fn gap_layers(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::GlobalAvgPool))
    }

    pub fn units(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::Unit { .. }))
    }

    fn count(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(&l.kind)).count()
    }

    /// Classifier parameters excluded: the trunk only.
    pub fn trunk_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::Classifier { .. }))
            .map(|l| l.params)
            .sum()
    }
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl fmt::Display for ArchitecturePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "genotype {}", self.genotype)?;
        writeln!(
            f,
            "{:<4} {:<34} {:>12} {:>12} {:>10}",
            "#", "layer", "in", "out", "params"
        )?;
        for (i, l) in self.layers.iter().enumerate() {
            let name = match &l.kind {
                LayerKind::Stem { cin, cout } => format!("stem conv3x3 {cin}->{cout}"),
                LayerKind::Downsample { kind, .. } => format!("downsample {}", kind.name()),
                LayerKind::Unit {
                    index,
                    cin,
                    cout,
                    skip,
                    projection,
                } => {
                    let skip = match (skip, projection) {
                        (false, _) => "",
                        (true, false) => " +skip",
                        (true, true) => " +skip(1x1)",
                    };
                    format!("unit {index} conv3x3 {cin}->{cout}{skip}")
                }
                LayerKind::PreClassifier { cin, cout } => format!("pre-classifier conv1x1 {cin}->{cout}"),
                LayerKind::GlobalAvgPool => "global average pool".into(),
                LayerKind::Flatten => "flatten".into(),
                LayerKind::Classifier { features, classes } => {
                    format!("classifier {features}->{classes}")
                }
            };
            writeln!(
                f,
                "{:<4} {:<34} {:>12} {:>12} {:>10}",
                i,
                name,
                shape_str(&l.input),
                shape_str(&l.output),
                l.params
            )?;
        }
        write!(f, "total parameters: {}", self.param_count())
    }
}

/// Decodes `g` under `config` for inputs of shape `input`.
pub fn decode(
    g: &Genotype,
    config: &ComponentConfig,
    input: InputShape,
    num_classes: usize,
) -> Result<ArchitecturePlan> {
    if g.depth == 0 || g.width == 0 {
        return Err(Error::Decode("depth and width must be positive".into()));
    }
    if num_classes == 0 || input.channels == 0 || input.height == 0 || input.width == 0 {
        return Err(Error::Decode(format!(
            "degenerate input {:?} / {num_classes} classes",
            input.dims()
        )));
    }
    if config.pre_classifier == Some(0) {
        return Err(Error::Decode("pre-classifier width must be positive".into()));
    }
    let downs = g.active_downsample();
    let doubles = g.active_doubling();
    let mut layers = Vec::new();
    let (mut c, mut h, mut w) = (g.width, input.height, input.width);
    layers.push(LayerSpec {
        kind: LayerKind::Stem {
            cin: input.channels,
            cout: c,
        },
        input: input.dims().to_vec(),
        output: vec![c, h, w],
        params: conv_bn_params(input.channels, c, 3),
    });
    for u in 0..g.depth {
        if downs.contains(&u) {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Decode(format!(
                    "too many halvings: {} active down-sampling codes but the feature map is {h}x{w} before unit {}",
                    downs.len(),
                    u + 1
                )));
            }
            let params = match config.downsample {
                DownsampleKind::StridedConv => conv_bn_params(c, c, 3),
                _ => 0,
            };
            layers.push(LayerSpec {
                kind: LayerKind::Downsample {
                    kind: config.downsample,
                    channels: c,
                },
                input: vec![c, h, w],
                output: vec![c, h / 2, w / 2],
                params,
            });
            h /= 2;
            w /= 2;
        }
        let cout = if doubles.contains(&u) { 2 * c } else { c };
        let projection = config.use_skip && cout != c;
        let mut params = conv_bn_params(c, cout, 3);
        if projection {
            params += c * cout + cout;
        }
        layers.push(LayerSpec {
            kind: LayerKind::Unit {
                index: u + 1,
                cin: c,
                cout,
                skip: config.use_skip,
                projection,
            },
            input: vec![c, h, w],
            output: vec![cout, h, w],
            params,
        });
        c = cout;
    }
    if let Some(p) = config.pre_classifier {
        layers.push(LayerSpec {
            kind: LayerKind::PreClassifier { cin: c, cout: p },
            input: vec![c, h, w],
            output: vec![p, h, w],
            params: conv_bn_params(c, p, 1),
        });
        c = p;
    }
    let features = if config.use_gap {
        layers.push(LayerSpec {
            kind: LayerKind::GlobalAvgPool,
            input: vec![c, h, w],
            output: vec![c],
            params: 0,
        });
        c
    } else {
        layers.push(LayerSpec {
            kind: LayerKind::Flatten,
            input: vec![c, h, w],
            output: vec![c * h * w],
            params: 0,
        });
        c * h * w
    };
    layers.push(LayerSpec {
        kind: LayerKind::Classifier {
            features,
            classes: num_classes,
        },
        input: vec![features],
        output: vec![num_classes],
        params: features * num_classes + num_classes,
    });
    Ok(ArchitecturePlan {
        genotype: *g,
        config: config.clone(),
        input,
        num_classes,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Genotype {
        Genotype::new(3, 8, [0, 1, 7, 7, 7], [1, 7, 7, 7, 7])
    }

    #[test]
    fn class_il_example() {
        let p = decode(&example(), &ComponentConfig::class_il(), InputShape::square(3, 16), 10)
            .unwrap();
        let downs: Vec<usize> = p
            .layers
            .windows(2)
            .filter_map(|w| match (&w[0].kind, &w[1].kind) {
                (LayerKind::Downsample { .. }, LayerKind::Unit { index, .. }) => Some(*index),
                _ => None,
            })
            .collect();
        assert_eq!(downs, [1, 2]);
        let unit2 = p
            .layers
            .iter()
            .find(|l| matches!(l.kind, LayerKind::Unit { index: 2, .. }))
            .unwrap();
        assert!(matches!(unit2.kind, LayerKind::Unit { cin: 8, cout: 16, .. }));
        assert_eq!(p.final_feature_map(), [16, 4, 4]);
        assert_eq!(p.feature_width(), 16);
        assert_eq!(p.gap_layers(), 1);
    }

    #[test]
    fn task_il_example_flattens() {
        let p = decode(&example(), &ComponentConfig::task_il(), InputShape::square(3, 16), 10)
            .unwrap();
        assert_eq!(p.gap_layers(), 0);
        assert_eq!(p.feature_width(), 256);
    }

    #[test]
    fn inert_codes_mean_no_pooling_or_doubling() {
        let g = Genotype::new(3, 12, [3, 4, 5, 6, 7], [3, 9, 9, 9, 9]);
        let p = decode(&g, &ComponentConfig::class_il(), InputShape::square(3, 16), 10).unwrap();
        assert_eq!(p.downsample_layers(), 0);
        assert_eq!(p.final_feature_map(), [12, 16, 16]);
    }

    #[test]
    fn stem_parameter_count() {
        let g = Genotype::new(1, 4, [9; 5], [9; 5]);
        let p = decode(&g, &ComponentConfig::class_il(), InputShape::square(3, 16), 10).unwrap();
        assert_eq!(p.layers[0].params, 3 * 3 * 3 * 4 + 4 + 8);
        assert_eq!(p.layers[0].params, 120);
    }

    #[test]
    fn too_many_halvings() {
        let g = Genotype::new(5, 4, [0, 1, 2, 3, 4], [9; 5]);
        let r = decode(&g, &ComponentConfig::class_il(), InputShape::square(3, 16), 10);
        assert!(matches!(r, Err(Error::Decode(_))));
        assert!(decode(&g, &ComponentConfig::class_il(), InputShape::square(3, 32), 10).is_ok());
    }

    #[test]
    fn duplicate_codes_count_once() {
        let g = Genotype::new(4, 4, [1, 1, 1, 1, 1], [2, 2, 9, 9, 9]);
        let p = decode(&g, &ComponentConfig::class_il(), InputShape::square(3, 16), 10).unwrap();
        assert_eq!(p.downsample_layers(), 1);
        assert_eq!(p.final_feature_map(), [8, 8, 8]);
    }

    #[test]
    fn pre_classifier_sets_feature_width() {
        let g = Genotype::new(2, 16, [9; 5], [9; 5]);
        let cfg = ComponentConfig::class_il().with_pre_classifier(Some(256));
        let p = decode(&g, &cfg, InputShape::square(3, 16), 10).unwrap();
        assert_eq!(p.feature_width(), 256);
    }

    #[test]
    fn table_mentions_every_layer() {
        let p = decode(&example(), &ComponentConfig::class_il(), InputShape::square(3, 16), 10)
            .unwrap();
        let text = p.to_string();
        assert!(text.contains("global average pool"));
        assert!(text.contains("classifier 16->10"));
        assert!(text.ends_with(&format!("total parameters: {}", p.param_count())));
    }
}

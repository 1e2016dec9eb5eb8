use std::collections::BTreeMap;

use super::domain::DomainTag;
use super::legend::ColorLegend;
use super::mask::MaskIndexed;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An image in `[0, 1]` with shape `[3, H, W]`, its optional ground truth,
/// and the tag of the dataset it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Option<MaskIndexed>,
    pub domain: DomainTag,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn is_labelled(&self) -> bool {
        self.mask.is_some()
    }
}

/// A loaded dataset. Labelled datasets carry a mask on every sample and
/// unlabelled ones on none.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    tag: DomainTag,
    labelled: bool,
    legend: ColorLegend,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        tag: DomainTag,
        labelled: bool,
        legend: ColorLegend,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let name = name.into();
        for s in &samples {
            if s.is_labelled() != labelled {
                return Err(Error::Contract(format!(
                    "sample {} in {} dataset {name} {} a mask",
                    s.id,
                    if labelled { "labelled" } else { "unlabelled" },
                    if labelled { "lacks" } else { "carries" }
                )));
            }
            if s.domain != tag {
                return Err(Error::Contract(format!(
                    "sample {} has tag {} but dataset {name} is tagged {tag}",
                    s.id, s.domain
                )));
            }
            let [c, h, w] = match s.image.shape() {
                &[c, h, w] => [c, h, w],
                other => return Err(Error::Dimension(format!("sample {} image shape {other:?}", s.id))),
            };
            if c != 3 {
                return Err(Error::Dimension(format!("sample {} has {c} channels", s.id)));
            }
            if let Some(m) = &s.mask {
                if (m.height(), m.width()) != (h, w) {
                    return Err(Error::Dimension(format!("sample {} mask does not match its image", s.id)));
                }
                m.validate(legend.len())?;
            }
        }
        Ok(Self {
            name,
            tag,
            labelled,
            legend,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tag(&self) -> &DomainTag {
        &self.tag
    }

    pub fn is_labelled(&self) -> bool {
        self.labelled
    }

    pub fn legend(&self) -> &ColorLegend {
        &self.legend
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy holding only the samples for which `keep` is true.
    pub fn subset(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Ground-truth masks kept apart from an unlabelled dataset, for evaluation
/// only. Nothing on the training path accepts this type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenTruth {
    masks: BTreeMap<String, MaskIndexed>,
}

impl HiddenTruth {
    pub fn new(masks: BTreeMap<String, MaskIndexed>) -> Self {
        Self { masks }
    }

    pub fn get(&self, id: &str) -> Option<&MaskIndexed> {
        self.masks.get(id)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MaskIndexed)> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Attaches the hidden masks to a copy of `dataset`, producing a labelled
    /// evaluation set.
    pub fn reveal(&self, dataset: &Dataset) -> Result<Dataset> {
        let samples = dataset
            .samples()
            .iter()
            .map(|s| {
                let mask = self
                    .get(&s.id)
                    .ok_or_else(|| Error::Contract(format!("no hidden mask for {}", s.id)))?;
                Ok(Sample {
                    mask: Some(mask.clone()),
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            format!("{}-revealed", dataset.name()),
            dataset.tag().clone(),
            true,
            dataset.legend().clone(),
            samples,
        )
    }
}

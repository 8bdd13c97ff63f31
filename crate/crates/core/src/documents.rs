//! JSON documents exchanged by the command-line tools.
//!
//! Every document carries `kind` and `version` fields. Polygons are flat
//! `[x0, y0, x1, y1, ...]` lists in image pixels; boxes are
//! `[xmin, ymin, xmax, ymax]`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decode::{ProbEntry, ProbTable, SpottedInstance};
use crate::error::{Error, Result};
use crate::evaluation::{Detection, GtLabel};
use crate::geometry::{AxisRect, Polygon, ScoredBox};
use crate::maps::NUM_CHARS;
use crate::targets::{CharBox, GtInstance};

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    Annotations,
    Proposals,
    Results,
}

trait Versioned {
    const KIND: DocumentKind;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharBoxRecord {
    #[serde(rename = "box")]
    pub rect: [f64; 4],
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub polygon: Vec<f64>,
    #[serde(default)]
    pub transcription: String,
    #[serde(default = "default_care")]
    pub care: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_boxes: Option<Vec<CharBoxRecord>>,
}

fn default_care() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub kind: DocumentKind,
    pub version: u32,
    pub images: Vec<AnnotatedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub id: String,
    #[serde(rename = "box")]
    pub rect: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalImage {
    pub id: String,
    pub proposals: Vec<ProposalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalsDocument {
    pub kind: DocumentKind,
    pub version: u32,
    pub images: Vec<ProposalImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    pub proposal: String,
    pub polygon: Vec<f64>,
    pub text: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    /// Voted probabilities per decoded character, 36 values each.
    #[serde(default)]
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultImage {
    pub id: String,
    pub instances: Vec<SpotRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub kind: DocumentKind,
    pub version: u32,
    pub images: Vec<ResultImage>,
}

macro_rules! versioned {
    ($ty:ty, $image:ty, $kind:expr) => {
        impl Versioned for $ty {
            const KIND: DocumentKind = $kind;
        }

        impl $ty {
            pub fn new(images: Vec<$image>) -> Self {
                Self {
                    kind: $kind,
                    version: DOCUMENT_VERSION,
                    images,
                }
            }

            pub fn parse(text: &str) -> Result<Self> {
                parse_document(text)
            }

            pub fn load(path: &Path) -> Result<Self> {
                let text = fs::read_to_string(path)?;
                parse_document(&text)
                    .map_err(|e| Error::Document(format!("{}: {e}", path.display())))
            }

            pub fn to_json(&self) -> String {
                serde_json::to_string_pretty(self).expect("documents always serialize") + "\n"
            }

            pub fn save(&self, path: &Path) -> Result<()> {
                fs::write(path, self.to_json())?;
                Ok(())
            }
        }
    };
}

versioned!(AnnotationDocument, AnnotatedImage, DocumentKind::Annotations);
versioned!(ProposalsDocument, ProposalImage, DocumentKind::Proposals);
versioned!(ResultsDocument, ResultImage, DocumentKind::Results);

#[derive(Deserialize)]
struct Header {
    kind: DocumentKind,
    version: u32,
}

fn parse_document<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
    let syntax = |e: serde_json::Error| {
        Error::Document(format!("line {} column {}: {e}", e.line(), e.column()))
    };
    let header: Header = serde_json::from_str(text).map_err(syntax)?;
    if header.kind != T::KIND {
        return Err(Error::Document(format!(
            "expected a {:?} document, found {:?}",
            T::KIND,
            header.kind
        )));
    }
    if header.version != DOCUMENT_VERSION {
        return Err(Error::Document(format!(
            "unsupported document version {}",
            header.version
        )));
    }
    serde_json::from_str(text).map_err(syntax)
}

fn rect_from(values: &[f64; 4], what: &str) -> Result<AxisRect> {
    AxisRect::new(values[0], values[1], values[2], values[3])
        .map_err(|e| Error::Document(format!("{what}: {e}")))
}

impl InstanceRecord {
    pub fn polygon(&self, image: &str) -> Result<Polygon> {
        Polygon::from_flat(&self.polygon).map_err(|e| {
            Error::Document(format!("image {image} instance {}: {e}", self.id))
        })
    }

    /// Validated ground truth for target generation.
    pub fn to_instance(&self, image: &str) -> Result<GtInstance> {
        let polygon = self.polygon(image)?;
        let ctx = |e: Error| Error::Document(format!("image {image} instance {}: {e}", self.id));
        let char_boxes = self
            .char_boxes
            .as_ref()
            .map(|boxes| {
                boxes
                    .iter()
                    .map(|b| {
                        let mut chars = b.label.chars();
                        let (Some(label), None) = (chars.next(), chars.next()) else {
                            return Err(Error::contract(format!(
                                "character label {:?} must be one symbol",
                                b.label
                            )));
                        };
                        CharBox::new(rect_from(&b.rect, "character box")?, label)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
            .map_err(ctx)?;
        let transcription = (!self.transcription.is_empty()).then(|| self.transcription.clone());
        GtInstance::new(polygon, transcription, char_boxes).map_err(ctx)
    }

    pub fn to_label(&self, image: &str) -> Result<GtLabel> {
        GtLabel::new(self.polygon(image)?, self.transcription.clone(), self.care).map_err(|e| {
            Error::Document(format!("image {image} instance {}: {e}", self.id))
        })
    }
}

impl ProposalRecord {
    pub fn to_scored_box(&self, image: &str) -> Result<ScoredBox> {
        let ctx = |e: Error| Error::Document(format!("image {image} proposal {}: {e}", self.id));
        ScoredBox::new(rect_from(&self.rect, "proposal box").map_err(ctx)?, self.score).map_err(ctx)
    }
}

impl SpotRecord {
    pub fn from_instance(proposal: &str, inst: &SpottedInstance) -> Self {
        Self {
            proposal: proposal.to_string(),
            polygon: inst.polygon.to_flat(),
            text: inst.text.clone(),
            score: inst.det_score,
            matched: None,
            distance: None,
            probs: inst.probs.entries.iter().map(|e| e.probs.to_vec()).collect(),
        }
    }

    pub fn prob_table(&self) -> Result<ProbTable> {
        let entries = self
            .probs
            .iter()
            .map(|p| {
                let probs: [f64; NUM_CHARS] = p.as_slice().try_into().map_err(|_| {
                    Error::Document(format!(
                        "proposal {}: probability rows need {NUM_CHARS} values, found {}",
                        self.proposal,
                        p.len()
                    ))
                })?;
                Ok(ProbEntry::from_probs(probs))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbTable { entries })
    }

    /// Detection scored by evaluation; the lexicon match replaces the raw
    /// text when present.
    pub fn to_detection(&self, image: &str) -> Result<Detection> {
        let polygon = Polygon::from_flat(&self.polygon).map_err(|e| {
            Error::Document(format!("image {image} result {}: {e}", self.proposal))
        })?;
        Ok(Detection {
            polygon,
            text: self.matched.clone().unwrap_or_else(|| self.text.clone()),
            score: self.score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "kind": "annotations", "version": 1,
        "images": [{"id": "img", "width": 100, "height": 50, "instances": [
            {"id": "w1", "polygon": [10, 10, 60, 10, 60, 30, 10, 30], "transcription": "ab",
             "char_boxes": [{"box": [10, 10, 30, 30], "label": "A"}, {"box": [35, 10, 60, 30], "label": "b"}]},
            {"id": "w2", "polygon": [70, 10, 90, 10, 90, 30], "transcription": "", "care": false}
        ]}]
    }"#;

    #[test]
    fn parses_and_validates_annotations() {
        let doc = AnnotationDocument::parse(SAMPLE).unwrap();
        let img = &doc.images[0];
        let inst = img.instances[0].to_instance(&img.id).unwrap();
        let boxes = inst.char_boxes.unwrap();
        assert_eq!(boxes[0].label(), 'a');
        assert!(img.instances[1].char_boxes.is_none());
        assert!(!img.instances[1].care);
        assert_eq!(AnnotationDocument::parse(&doc.to_json()).unwrap(), doc);
    }

    #[test]
    fn bad_polygon_names_instance() {
        let text = SAMPLE.replace("[70, 10, 90, 10, 90, 30]", "[70, 10, 90, 10]");
        let doc = AnnotationDocument::parse(&text).unwrap();
        let err = doc.images[0].instances[1].to_label("img").unwrap_err();
        assert!(err.to_string().contains("instance w2"), "{err}");
    }

    #[test]
    fn wrong_kind_and_syntax_errors() {
        let err = ProposalsDocument::parse(SAMPLE).unwrap_err();
        assert!(err.to_string().contains("Proposals"), "{err}");
        let err = AnnotationDocument::parse("{\n  \"kind\": ").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let v2 = SAMPLE.replace("\"version\": 1", "\"version\": 2");
        assert!(AnnotationDocument::parse(&v2).is_err());
    }
}

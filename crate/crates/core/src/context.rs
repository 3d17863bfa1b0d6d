//! Context classification, behavior selection and prompt construction.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::http::{png_base64, HttpEndpoint};
use crate::scene::SceneView;
use crate::world::{color_class, ColorClass, SemanticWorld, TerrainClass};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("invalid context catalog: {0}")]
    InvalidCatalog(String),
    #[error("classifier backend failed: {0}")]
    Backend(String),
    #[error("catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Rule the oracle VLM applies when this behavior is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorRule {
    KeepRight,
    #[default]
    MoveOnPavement,
    Crosswalk,
    AvoidBetweenPeople,
    Detour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEntry {
    pub id: String,
    /// Context phrase `c_i` ("an indoor corridor").
    pub context: String,
    /// Behavior phrase `b_i` completing "...such that the robot ___".
    pub behavior: String,
    #[serde(default)]
    pub rule: BehaviorRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextCatalog {
    #[serde(rename = "context")]
    entries: Vec<ContextEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(rename = "context")]
    entries: Vec<ContextEntry>,
}

impl ContextCatalog {
    pub fn new(entries: Vec<ContextEntry>) -> Result<Self, ContextError> {
        if entries.is_empty() {
            return Err(ContextError::InvalidCatalog("catalog is empty".into()));
        }
        let mut phrases = HashSet::new();
        let mut ids = HashSet::new();
        for e in &entries {
            if e.context.trim().is_empty() || e.behavior.trim().is_empty() {
                return Err(ContextError::InvalidCatalog(format!(
                    "entry {:?} has an empty context or behavior phrase",
                    e.id
                )));
            }
            if !phrases.insert(e.context.clone()) {
                return Err(ContextError::InvalidCatalog(format!(
                    "duplicate context phrase {:?}",
                    e.context
                )));
            }
            if !ids.insert(e.id.clone()) {
                return Err(ContextError::InvalidCatalog(format!("duplicate id {:?}", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ContextError> {
        let f: CatalogFile = toml::from_str(s)?;
        Self::new(f.entries)
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn entries(&self) -> &[ContextEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&ContextEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Appends a (context, behavior) pair.
    pub fn with_entry(mut self, entry: ContextEntry) -> Result<Self, ContextError> {
        self.entries.push(entry);
        Self::new(self.entries)
    }
}

impl Default for ContextCatalog {
    fn default() -> Self {
        let e = |id: &str, context: &str, behavior: &str, rule| ContextEntry {
            id: id.into(),
            context: context.into(),
            behavior: behavior.into(),
            rule,
        };
        Self::new(vec![
            e(
                "indoor_corridor",
                "an indoor corridor",
                "keep close to the right wall",
                BehaviorRule::KeepRight,
            ),
            e(
                "indoor_people",
                "an indoor space with groups of people",
                "avoid moving in between groups of people",
                BehaviorRule::AvoidBetweenPeople,
            ),
            e(
                "outdoor_terrain",
                "an outdoor area with multiple terrains",
                "move on pavement",
                BehaviorRule::MoveOnPavement,
            ),
            e(
                "crosswalk",
                "a street with a crosswalk",
                "stay on the crosswalk",
                BehaviorRule::Crosswalk,
            ),
            e(
                "detour_sign",
                "a blocked path with a detour sign",
                "follow the detour sign",
                BehaviorRule::Detour,
            ),
        ])
        .expect("default catalog is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEstimate {
    pub probabilities: Vec<f64>,
    pub winner_index: usize,
    pub winner_id: String,
    pub behavior: String,
    pub rule: BehaviorRule,
    pub tick: u64,
}

/// Backend output: either raw scores (normalized by softmax) or a probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub enum Scores {
    Raw(Vec<f64>),
    Simplex(Vec<f64>),
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Light-weight image/text classifier used to recognize the context.
pub trait ContextClassifier: Send + Sync {
    fn id(&self) -> &str;

    fn scores(&self, scene: &SceneView<'_>, catalog: &ContextCatalog) -> Result<Scores, ContextError>;

    /// Cheap backends are consulted every tick; others only when a decision needs them.
    fn is_cheap(&self) -> bool {
        true
    }
}

pub fn classify_context(
    classifier: &dyn ContextClassifier,
    scene: &SceneView<'_>,
    catalog: &ContextCatalog,
) -> Result<ContextEstimate, ContextError> {
    let scores = classifier.scores(scene, catalog)?;
    estimate_from_scores(scores, catalog, scene.tick)
}

pub fn estimate_from_scores(
    scores: Scores,
    catalog: &ContextCatalog,
    tick: u64,
) -> Result<ContextEstimate, ContextError> {
    let probabilities = match scores {
        Scores::Raw(s) => {
            if s.iter().any(|x| !x.is_finite()) {
                return Err(ContextError::Backend("non-finite score".into()));
            }
            softmax(&s)
        }
        Scores::Simplex(p) => {
            let total: f64 = p.iter().sum();
            if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (total - 1.0).abs() > 1e-6 {
                return Err(ContextError::Backend("backend probabilities are not a simplex".into()));
            }
            p
        }
    };
    if probabilities.len() != catalog.len() {
        return Err(ContextError::Backend(format!(
            "expected {} scores, got {}",
            catalog.len(),
            probabilities.len()
        )));
    }
    let winner_index = argmax_first(&probabilities);
    let entry = &catalog.entries()[winner_index];
    Ok(ContextEstimate {
        probabilities,
        winner_index,
        winner_id: entry.id.clone(),
        behavior: entry.behavior.clone(),
        rule: entry.rule,
        tick,
    })
}

pub const BEHAVIOR_TEMPLATE: &str = "You are navigating a robot in this scenario. The numbers marked in the image denote regions where you can navigate the robot. Pick a list of numbers marked in the image such that the robot ";

pub const ANTI_HALLUCINATION_PREAMBLE: &str =
    "Consider this query as a new task. You must disregard past inputs and outputs.";

pub fn context_query(context_phrase: &str) -> String {
    format!("This is a picture of {context_phrase}")
}

/// Behavior prompt sent with the marked image.
pub fn build_behavior_prompt(behavior: &str) -> String {
    assert!(!behavior.trim().is_empty(), "behavior phrase must be nonempty");
    format!("{ANTI_HALLUCINATION_PREAMBLE}\n{BEHAVIOR_TEMPLATE}{behavior}")
}

/// Single prompt describing the rules of every context, used when context-based
/// prompting is disabled.
pub fn build_generic_prompt(catalog: &ContextCatalog) -> String {
    let rules: Vec<String> = catalog
        .entries()
        .iter()
        .map(|e| format!("in {}, {}", e.context, e.behavior))
        .collect();
    format!(
        "{ANTI_HALLUCINATION_PREAMBLE}\n{BEHAVIOR_TEMPLATE}follows these rules: {}",
        rules.join("; ")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub behavior_prompt: String,
    pub anti_hallucination_preamble: String,
    /// One resolved "This is a picture of ..." query per catalog entry.
    pub context_queries: Vec<String>,
}

impl PromptBundle {
    pub fn new(catalog: &ContextCatalog, estimate: &ContextEstimate) -> Self {
        Self {
            behavior_prompt: build_behavior_prompt(&estimate.behavior),
            anti_hallucination_preamble: ANTI_HALLUCINATION_PREAMBLE.into(),
            context_queries: catalog.entries().iter().map(|e| context_query(&e.context)).collect(),
        }
    }
}

/// Reads the ground-truth context declared at the robot position.
pub struct OracleContextClassifier;

impl ContextClassifier for OracleContextClassifier {
    fn id(&self) -> &str {
        "oracle"
    }

    fn scores(&self, scene: &SceneView<'_>, catalog: &ContextCatalog) -> Result<Scores, ContextError> {
        let declared = scene
            .world
            .declared_context(scene.pose.position())
            .ok_or_else(|| ContextError::Backend("no context declared at robot position".into()))?;
        let idx = catalog
            .index_of(declared)
            .ok_or_else(|| ContextError::Backend(format!("context {declared:?} not in catalog")))?;
        let mut p = vec![0.0; catalog.len()];
        p[idx] = 1.0;
        Ok(Scores::Simplex(p))
    }
}

fn class_fractions(img: &RgbImage) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let total = (img.width() * img.height()).max(1) as f64;
    for p in img.pixels() {
        let key = match color_class(*p) {
            Some(ColorClass::Terrain(t)) => format!("{t:?}"),
            Some(ColorClass::Obstacle(k)) => format!("{k:?}"),
            Some(ColorClass::Pedestrian) => "Pedestrian".into(),
            Some(ColorClass::Sky) => "Sky".into(),
            None => continue,
        };
        *counts.entry(key).or_default() += 1.0;
    }
    counts.values_mut().for_each(|v| *v /= total);
    counts
}

/// Deterministic offline classifier over flat-color renders: scores each
/// context from the share of characteristic colors in the image.
pub struct ColorVoteClassifier;

impl ColorVoteClassifier {
    fn rule_score(rule: BehaviorRule, f: &BTreeMap<String, f64>) -> f64 {
        let g = |k: &str| f.get(k).copied().unwrap_or(0.0);
        match rule {
            BehaviorRule::KeepRight => g("IndoorFloor") + g("Wall"),
            BehaviorRule::AvoidBetweenPeople => 0.5 * g("IndoorFloor") + 10.0 * g("Pedestrian"),
            BehaviorRule::MoveOnPavement => g("Pavement") + g("Grass") + g("Gravel"),
            BehaviorRule::Crosswalk => 3.0 * g("Crosswalk") + 2.0 * g("AsphaltRoad"),
            BehaviorRule::Detour => 20.0 * g("Sign") + 5.0 * g("Barrier"),
        }
    }
}

impl ContextClassifier for ColorVoteClassifier {
    fn id(&self) -> &str {
        "color_vote"
    }

    fn scores(&self, scene: &SceneView<'_>, catalog: &ContextCatalog) -> Result<Scores, ContextError> {
        let f = class_fractions(scene.image());
        Ok(Scores::Raw(
            catalog
                .entries()
                .iter()
                .map(|e| 10.0 * Self::rule_score(e.rule, &f))
                .collect(),
        ))
    }

    fn is_cheap(&self) -> bool {
        false
    }
}

/// CLIP-style service: `POST {url}` with `{"model", "image_png_base64", "labels"}`,
/// answering `{"scores": [...]}` (raw logits) or `{"probabilities": [...]}`.
pub struct RemoteClassifier {
    pub endpoint: HttpEndpoint,
}

#[derive(Deserialize)]
struct RemoteScores {
    #[serde(default)]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    probabilities: Option<Vec<f64>>,
}

impl RemoteClassifier {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }

    pub fn query(&self, img: &RgbImage, labels: &[String]) -> Result<Scores, ContextError> {
        let client = self.endpoint.client().map_err(|e| ContextError::Backend(e.to_string()))?;
        let body = serde_json::json!({
            "model": self.endpoint.model,
            "image_png_base64": png_base64(img),
            "labels": labels,
        });
        let resp: RemoteScores = self
            .endpoint
            .post_json(&client, &body)
            .and_then(|r| r.json())
            .map_err(|e| ContextError::Backend(e.to_string()))?;
        match (resp.probabilities, resp.scores) {
            (Some(p), _) => Ok(Scores::Simplex(p)),
            (None, Some(s)) => Ok(Scores::Raw(s)),
            _ => Err(ContextError::Backend("response has neither scores nor probabilities".into())),
        }
    }
}

impl ContextClassifier for RemoteClassifier {
    fn id(&self) -> &str {
        "remote"
    }

    fn scores(&self, scene: &SceneView<'_>, catalog: &ContextCatalog) -> Result<Scores, ContextError> {
        let labels: Vec<String> = catalog.entries().iter().map(|e| context_query(&e.context)).collect();
        self.query(scene.image(), &labels)
    }

    fn is_cheap(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Paved,
    Unpaved,
}

/// Image patch around a candidate waypoint.
pub struct PatchQuery<'a> {
    pub patch: RgbImage,
    /// Ground point (odom frame) the patch is centered on.
    pub center_odom: Point2,
    pub world: &'a SemanticWorld,
}

pub trait PatchClassifier: Send + Sync {
    fn classify_patch_paved(&self, q: &PatchQuery<'_>) -> Result<Surface, ContextError>;
}

/// `n_pat` x `n_pat` crop centered on a pixel; regions outside the image are zero.
pub fn crop_patch(img: &RgbImage, center: (f64, f64), n_pat: u32) -> RgbImage {
    let x0 = center.0.round() as i64 - (n_pat / 2) as i64;
    let y0 = center.1.round() as i64 - (n_pat / 2) as i64;
    RgbImage::from_fn(n_pat, n_pat, |x, y| {
        let sx = x0 + x as i64;
        let sy = y0 + y as i64;
        if sx >= 0 && sy >= 0 && (sx as u32) < img.width() && (sy as u32) < img.height() {
            *img.get_pixel(sx as u32, sy as u32)
        } else {
            Rgb([0, 0, 0])
        }
    })
}

pub struct OraclePatchClassifier;

impl PatchClassifier for OraclePatchClassifier {
    fn classify_patch_paved(&self, q: &PatchQuery<'_>) -> Result<Surface, ContextError> {
        Ok(if q.world.semantic_at(q.center_odom).is_paved() {
            Surface::Paved
        } else {
            Surface::Unpaved
        })
    }
}

/// Majority terrain color of the patch decides the verdict.
pub struct ColorVotePatchClassifier;

impl PatchClassifier for ColorVotePatchClassifier {
    fn classify_patch_paved(&self, q: &PatchQuery<'_>) -> Result<Surface, ContextError> {
        let mut votes: BTreeMap<u8, (TerrainClass, u32)> = BTreeMap::new();
        for (i, t) in TerrainClass::ALL.iter().enumerate() {
            votes.insert(i as u8, (*t, 0));
        }
        for p in q.patch.pixels() {
            if let Some(ColorClass::Terrain(t)) = color_class(*p) {
                let i = TerrainClass::ALL.iter().position(|x| *x == t).unwrap() as u8;
                votes.get_mut(&i).unwrap().1 += 1;
            }
        }
        let (class, n) = votes
            .values()
            .copied()
            .fold((TerrainClass::Unknown, 0), |best, v| if v.1 > best.1 { v } else { best });
        Ok(if n > 0 && class.is_paved() {
            Surface::Paved
        } else {
            Surface::Unpaved
        })
    }
}

impl PatchClassifier for RemoteClassifier {
    fn classify_patch_paved(&self, q: &PatchQuery<'_>) -> Result<Surface, ContextError> {
        let labels = vec![
            context_query("a paved surface (indoors or sidewalks)"),
            context_query("an unpaved surface (grass, gravel, asphalt)"),
        ];
        let p = match self.query(&q.patch, &labels)? {
            Scores::Raw(s) => softmax(&s),
            Scores::Simplex(p) => p,
        };
        if p.len() != 2 {
            return Err(ContextError::Backend("expected two patch scores".into()));
        }
        Ok(if argmax_first(&p) == 0 {
            Surface::Paved
        } else {
            Surface::Unpaved
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> ContextCatalog {
        ContextCatalog::new(vec![
            ContextEntry {
                id: "a".into(),
                context: "a".into(),
                behavior: "x".into(),
                rule: BehaviorRule::KeepRight,
            },
            ContextEntry {
                id: "b".into(),
                context: "b".into(),
                behavior: "y".into(),
                rule: BehaviorRule::MoveOnPavement,
            },
        ])
        .unwrap()
    }

    #[test]
    fn tie_goes_to_first_entry() {
        let e = estimate_from_scores(Scores::Raw(vec![2.0, 2.0]), &two(), 0).unwrap();
        assert_eq!(e.probabilities, vec![0.5, 0.5]);
        assert_eq!(e.winner_index, 0);
    }

    #[test]
    fn softmax_normalization() {
        let cat = ContextCatalog::default();
        let e = estimate_from_scores(Scores::Raw(vec![1.0, 3.0, 6.0, -50.0, -50.0]), &cat, 0).unwrap();
        // independent: e^s / sum(e^s) evaluated directly
        let exps: Vec<f64> = [1.0f64, 3.0, 6.0, -50.0, -50.0].iter().map(|s| s.exp()).collect();
        let total: f64 = exps.iter().sum();
        for (p, x) in e.probabilities.iter().zip(&exps) {
            assert!((p - x / total).abs() < 1e-12);
        }
        let three = estimate_from_scores(
            Scores::Raw(vec![1.0, 3.0, 6.0]),
            &ContextCatalog::new(cat.entries()[..3].to_vec()).unwrap(),
            0,
        )
        .unwrap();
        let frozen = [0.006377460922442297, 0.04712341652466415, 0.9464991225528936];
        for (p, f) in three.probabilities.iter().zip(frozen) {
            assert!((p - f).abs() < 1e-6);
        }
        assert_eq!(three.winner_index, 2);
    }

    #[test]
    fn bad_simplex_rejected() {
        assert!(estimate_from_scores(Scores::Simplex(vec![0.7, 0.7]), &two(), 0).is_err());
        assert!(estimate_from_scores(Scores::Raw(vec![1.0]), &two(), 0).is_err());
    }

    #[test]
    fn behavior_prompt_template() {
        let p = build_behavior_prompt("keep close to the right wall");
        assert!(p.ends_with(
            "Pick a list of numbers marked in the image such that the robot keep close to the right wall"
        ));
        assert!(p.starts_with(ANTI_HALLUCINATION_PREAMBLE));
        assert!(p.contains("disregard past inputs and outputs"));
        let p = build_behavior_prompt("move on pavement");
        assert!(p.ends_with("such that the robot move on pavement"));
    }

    #[test]
    fn catalog_validation() {
        let mut entries = two().entries().to_vec();
        entries[1].behavior = "".into();
        assert!(ContextCatalog::new(entries).is_err());
        let mut entries = two().entries().to_vec();
        entries[1].context = "a".into();
        assert!(ContextCatalog::new(entries).is_err());
        assert!(ContextCatalog::new(vec![]).is_err());
        assert_eq!(ContextCatalog::default().len(), 5);
    }

    #[test]
    fn catalog_file_round_trip() {
        let cat = ContextCatalog::default();
        let back = ContextCatalog::from_toml_str(&cat.to_toml_string()).unwrap();
        assert_eq!(back, cat);
        let bad = "[[context]]\nid = \"a\"\ncontext = \"a\"\nbehavior = \"b\"\ncolour = 1\n";
        assert!(ContextCatalog::from_toml_str(bad).is_err());
    }

    #[test]
    fn patch_crop_zero_pads() {
        let img = RgbImage::from_pixel(10, 10, Rgb([9, 9, 9]));
        let p = crop_patch(&img, (0.0, 0.0), 6);
        assert_eq!(p.dimensions(), (6, 6));
        assert_eq!(*p.get_pixel(0, 0), Rgb([0, 0, 0]));
        assert_eq!(*p.get_pixel(5, 5), Rgb([9, 9, 9]));
    }

    #[test]
    fn prompt_bundle_resolves_queries() {
        let cat = ContextCatalog::default();
        let e = estimate_from_scores(Scores::Raw(vec![0.0, 0.0, 0.0, 5.0, 0.0]), &cat, 3).unwrap();
        let b = PromptBundle::new(&cat, &e);
        assert!(b.behavior_prompt.contains("stay on the crosswalk"));
        assert_eq!(b.context_queries[0], "This is a picture of an indoor corridor");
        assert!(b.context_queries.iter().all(|q| !q.contains('{')));
    }
}

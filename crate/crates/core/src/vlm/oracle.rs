//! Deterministic stand-in for a large VLM: answers from ground-truth semantics.

use std::collections::BTreeMap;

use crate::context::BehaviorRule;
use crate::geometry::{Frame, Point2};
use crate::marking::{MarkerEntry, MarkerSet};
use crate::vlm::{VlmBackend, VlmError, VlmRequest};
use crate::world::{group_segment_clearance, SemanticWorld, Side, TerrainClass};

/// Clearance beyond which people no longer matter to the avoid-between-people rule.
const COMFORT_CLEARANCE: f64 = 2.0;

/// One marker per candidate row, near to far, chosen by the rule for `rule`.
pub fn oracle_select(world: &SemanticWorld, ms: &MarkerSet, rule: BehaviorRule) -> Result<Vec<u32>, VlmError> {
    let mut rows: BTreeMap<usize, Vec<&MarkerEntry>> = BTreeMap::new();
    for e in &ms.entries {
        rows.entry(e.row).or_default().push(e);
    }
    let odom = |e: &MarkerEntry| ms.odom_point(e);
    let far_x = ms.entries.iter().map(|e| e.ground_point.x).fold(f64::NEG_INFINITY, f64::max);
    let mut picks = Vec::new();
    let mut prev: Option<Point2> = None;
    for entries in rows.values() {
        let pick = match rule {
            BehaviorRule::KeepRight => entries
                .iter()
                .filter(|e| world.semantic_at(odom(e)).is_paved())
                .min_by(|a, b| a.ground_point.y.total_cmp(&b.ground_point.y).then(a.label.cmp(&b.label))),
            BehaviorRule::MoveOnPavement => {
                let paved: Vec<&&MarkerEntry> = entries
                    .iter()
                    .filter(|e| world.semantic_at(odom(e)).is_paved())
                    .collect();
                if paved.is_empty() {
                    None
                } else {
                    let c = paved.iter().fold(Point2::ORIGIN, |acc, e| acc + e.ground_point)
                        * (1.0 / paved.len() as f64);
                    paved
                        .into_iter()
                        .min_by(|a, b| {
                            a.ground_point
                                .dist(c)
                                .total_cmp(&b.ground_point.dist(c))
                                .then(a.label.cmp(&b.label))
                        })
                }
            }
            BehaviorRule::Crosswalk => entries
                .iter()
                .filter_map(|e| crosswalk_key(world, odom(e)).map(|k| (e, k)))
                .min_by(|a, b| {
                    (a.1 .0, a.1 .1)
                        .partial_cmp(&(b.1 .0, b.1 .1))
                        .expect("finite offsets")
                        .then(a.0.label.cmp(&b.0.label))
                })
                .map(|(e, _)| e),
            BehaviorRule::AvoidBetweenPeople => {
                // judge the leg from the previous pick, stretched to the far row,
                // so a near marker that lines up with a gap is not chosen
                let groups = world.pedestrian_groups();
                let from = prev.unwrap_or(Point2::ORIGIN);
                let clearance = |e: &MarkerEntry| {
                    let p = e.ground_point;
                    let stretch = if p.x > from.x && far_x > p.x {
                        from + (p - from) * ((far_x - from.x) / (p.x - from.x))
                    } else {
                        p
                    };
                    let to_odom = |q: Point2| ms.robot_pose.to_parent(Frame::Robot).map(q);
                    groups
                        .iter()
                        .map(|g| group_segment_clearance(g, to_odom(from), to_odom(stretch)))
                        .fold(COMFORT_CLEARANCE, f64::min)
                };
                entries
                    .iter()
                    .filter(|e| !world.semantic_at(odom(e)).eq(&TerrainClass::AsphaltRoad))
                    .max_by(|a, b| {
                        clearance(a)
                            .total_cmp(&clearance(b))
                            // prefer central markers, then lower labels
                            .then(b.ground_point.y.abs().total_cmp(&a.ground_point.y.abs()))
                            .then(b.label.cmp(&a.label))
                    })
            }
            BehaviorRule::Detour => {
                let side = world
                    .context_region_at(ms.robot_pose.position())
                    .and_then(|r| r.detour_side)
                    .or_else(|| world.context_regions.iter().find_map(|r| r.detour_side));
                match side {
                    None => None,
                    Some(side) => entries
                        .iter()
                        .filter(|e| match side {
                            Side::Left => e.ground_point.y > 0.0,
                            Side::Right => e.ground_point.y < 0.0,
                        })
                        .max_by(|a, b| {
                            a.ground_point
                                .y
                                .abs()
                                .total_cmp(&b.ground_point.y.abs())
                                .then(b.label.cmp(&a.label))
                        }),
                }
            }
        };
        if let Some(e) = pick {
            picks.push(e.label);
            prev = Some(e.ground_point);
        }
    }
    if picks.is_empty() {
        Err(VlmError::NoQualifyingMarker)
    } else {
        Ok(picks)
    }
}

/// Ranking key for the crosswalk rule: markers on a crosswalk first, then paved
/// approach markers; within each, distance to the crosswalk centerline (the
/// nearest crosswalk's, extended, for approach markers). Unpaved ground and
/// road surface never qualify.
fn crosswalk_key(world: &SemanticWorld, p: Point2) -> Option<(u8, f64)> {
    let offset = |r: &crate::world::TerrainRegion| {
        let c = r.polygon.centroid();
        (p - c).cross(r.polygon.principal_axis()).abs()
    };
    let here = world.semantic_at(p);
    if here == TerrainClass::Crosswalk {
        let region = world.terrain_regions.iter().rev().find(|r| r.polygon.contains(p))?;
        return Some((0, offset(region)));
    }
    if !here.is_paved() {
        return None;
    }
    let nearest = world
        .terrain_regions
        .iter()
        .filter(|r| r.class == TerrainClass::Crosswalk)
        .min_by(|a, b| a.polygon.centroid().dist(p).total_cmp(&b.polygon.centroid().dist(p)))?;
    Some((1, offset(nearest)))
}

/// Oracle VLM backend. Needs the request's oracle hint.
pub struct OracleVlmBackend {
    pub latency_s: f64,
}

impl OracleVlmBackend {
    pub fn new(latency_s: f64) -> Self {
        Self { latency_s }
    }
}

impl VlmBackend for OracleVlmBackend {
    fn id(&self) -> &str {
        "oracle"
    }

    fn complete(&self, req: &VlmRequest) -> Result<String, VlmError> {
        let hint = req
            .oracle_hint
            .as_ref()
            .ok_or_else(|| VlmError::InvalidRequest("oracle backend needs ground truth".into()))?;
        let picks = oracle_select(&hint.world, &hint.markers, hint.rule)?;
        let text: Vec<String> = picks.iter().map(|p| p.to_string()).collect();
        Ok(format!("[{}]", text.join(", ")))
    }

    fn simulated_latency(&self) -> Option<f64> {
        Some(self.latency_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Frame, Pose2D};
    use crate::grid::OccupancyGrid;
    use crate::marking::{build_marker_set, CandidateLayout};
    use crate::world::{ContextRegion, Pedestrian, Polygon, TerrainRegion};

    fn markers() -> MarkerSet {
        build_marker_set(
            &OccupancyGrid::empty(200, 0.1),
            &CandidateLayout::outdoor(),
            &CameraModel::default(),
            Pose2D::new(0.0, 0.0, 0.0, Frame::Odom),
            0,
        )
    }

    fn world_with(class: TerrainClass) -> SemanticWorld {
        let mut w = SemanticWorld::empty(Point2::new(20.0, 0.0));
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(-20.0, -20.0, 20.0, 20.0),
            class,
        });
        w
    }

    #[test]
    fn keep_right_in_paved_corridor() {
        let w = world_with(TerrainClass::IndoorFloor);
        assert_eq!(oracle_select(&w, &markers(), BehaviorRule::KeepRight).unwrap(), vec![6, 12]);
    }

    #[test]
    fn crosswalk_band_picks_in_band_marker_nearest_centerline() {
        let mut w = world_with(TerrainClass::AsphaltRoad);
        // band covers lateral offsets -1 and +1 only, centerline at y = 0.4
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(-20.0, -1.6, 20.0, 2.4),
            class: TerrainClass::Crosswalk,
        });
        // in-band labels: near row 3 (y=+1) and 4 (y=-1); far row 9 and 10
        assert_eq!(oracle_select(&w, &markers(), BehaviorRule::Crosswalk).unwrap(), vec![3, 9]);
    }

    #[test]
    fn crosswalk_approach_lines_up_with_band() {
        let mut w = world_with(TerrainClass::Pavement);
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(4.0, -20.0, 12.0, 20.0),
            class: TerrainClass::AsphaltRoad,
        });
        // centerline y = 3.5; the near row is still on the sidewalk
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(4.0, 2.0, 12.0, 5.0),
            class: TerrainClass::Crosswalk,
        });
        assert_eq!(oracle_select(&w, &markers(), BehaviorRule::Crosswalk).unwrap(), vec![2, 8]);
    }

    #[test]
    fn no_pavement_no_answer() {
        let w = world_with(TerrainClass::Grass);
        assert_eq!(
            oracle_select(&w, &markers(), BehaviorRule::MoveOnPavement),
            Err(VlmError::NoQualifyingMarker)
        );
    }

    #[test]
    fn pavement_strip_is_followed() {
        let mut w = world_with(TerrainClass::Grass);
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(-20.0, -4.0, 20.0, -2.0),
            class: TerrainClass::Pavement,
        });
        // only y = -3 lies on pavement: labels 5 and 11
        assert_eq!(oracle_select(&w, &markers(), BehaviorRule::MoveOnPavement).unwrap(), vec![5, 11]);
    }

    #[test]
    fn avoids_the_gap_inside_a_group() {
        let mut w = world_with(TerrainClass::IndoorFloor);
        w.pedestrians.push(Pedestrian::new(vec![Point2::new(5.0, 1.0)], 0.0, 0.3, Some(1)));
        w.pedestrians.push(Pedestrian::new(vec![Point2::new(5.0, -1.0)], 0.0, 0.3, Some(1)));
        let picks = oracle_select(&w, &markers(), BehaviorRule::AvoidBetweenPeople).unwrap();
        let ms = markers();
        for l in picks {
            let p = ms.get(l).unwrap().ground_point;
            // never the gap between the pair
            assert!(p.y.abs() > 1.5, "picked {l} at {p:?}");
        }
    }

    #[test]
    fn detour_goes_to_signed_side() {
        let mut w = world_with(TerrainClass::Pavement);
        w.context_regions.push(ContextRegion {
            polygon: Polygon::rect(-20.0, -20.0, 20.0, 20.0),
            context: "detour_sign".into(),
            detour_side: Some(Side::Left),
        });
        assert_eq!(oracle_select(&w, &markers(), BehaviorRule::Detour).unwrap(), vec![1, 7]);
    }

    #[test]
    fn deterministic() {
        let w = world_with(TerrainClass::IndoorFloor);
        let a = oracle_select(&w, &markers(), BehaviorRule::KeepRight);
        let b = oracle_select(&w, &markers(), BehaviorRule::KeepRight);
        assert_eq!(a, b);
    }
}

//! Flat-color semantic camera renderer.

use image::{Rgb, RgbImage};

use crate::geometry::{CameraModel, Pixel, Point2, Pose2D};
use crate::world::{ray_circle, ray_segment, ObstacleKind, SemanticWorld, TerrainClass};

const PEDESTRIAN_HEIGHT: f64 = 1.7;

/// What a rendered color stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorClass {
    Terrain(TerrainClass),
    Obstacle(ObstacleKind),
    Pedestrian,
    Sky,
}

pub struct Palette;

impl Palette {
    pub const SKY: Rgb<u8> = Rgb([135, 206, 235]);
    pub const PEDESTRIAN: Rgb<u8> = Rgb([30, 60, 200]);

    pub fn terrain(class: TerrainClass) -> Rgb<u8> {
        match class {
            TerrainClass::Pavement => Rgb([170, 170, 170]),
            TerrainClass::Grass => Rgb([60, 160, 60]),
            TerrainClass::Gravel => Rgb([150, 120, 90]),
            TerrainClass::AsphaltRoad => Rgb([50, 50, 55]),
            TerrainClass::Crosswalk => Rgb([240, 240, 240]),
            TerrainClass::IndoorFloor => Rgb([205, 180, 140]),
            TerrainClass::Unknown => Rgb([110, 90, 110]),
        }
    }

    pub fn obstacle(kind: ObstacleKind) -> Rgb<u8> {
        match kind {
            ObstacleKind::Wall => Rgb([120, 60, 40]),
            ObstacleKind::Barrier => Rgb([255, 140, 0]),
            ObstacleKind::Sign => Rgb([220, 0, 0]),
        }
    }
}

/// Inverse palette lookup. Colors outside the palette (marker glyphs, padding)
/// map to `None`.
pub fn color_class(c: Rgb<u8>) -> Option<ColorClass> {
    if c == Palette::SKY {
        return Some(ColorClass::Sky);
    }
    if c == Palette::PEDESTRIAN {
        return Some(ColorClass::Pedestrian);
    }
    for t in TerrainClass::ALL {
        if Palette::terrain(t) == c {
            return Some(ColorClass::Terrain(t));
        }
    }
    for k in [ObstacleKind::Wall, ObstacleKind::Barrier, ObstacleKind::Sign] {
        if Palette::obstacle(k) == c {
            return Some(ColorClass::Obstacle(k));
        }
    }
    None
}

/// Renders the robot camera view. Ground pixels take their terrain color, obstacles
/// and pedestrians are extruded vertically to their height, and everything else is sky.
pub fn render_camera(world: &SemanticWorld, pose: &Pose2D, cam: &CameraModel) -> RgbImage {
    let (w, h) = cam.image_size;
    let (ps, pc) = pose.theta.sin_cos();
    let origin = pose.position();
    let to_odom = |p: Point2| Point2::new(origin.x + pc * p.x - ps * p.y, origin.y + ps * p.x + pc * p.y);
    RgbImage::from_fn(w, h, |u, v| {
        let ray = cam.pixel_ray(Pixel::new(u as f64, v as f64));
        let horiz = Point2::new(ray[0], ray[1]);
        let hn = horiz.norm();
        let ground = (ray[2] < -1e-12).then(|| {
            let s = cam.mount_height / -ray[2];
            (Point2::new(s * ray[0], s * ray[1]), s * hn)
        });
        if hn > 1e-12 {
            let dir_r = horiz * (1.0 / hn);
            let dir = Point2::new(pc * dir_r.x - ps * dir_r.y, ps * dir_r.x + pc * dir_r.y);
            let slope = ray[2] / hn;
            let height_at = |t: f64| cam.mount_height + slope * t;
            let mut nearest: Option<(f64, Rgb<u8>)> = None;
            let mut consider = |t: f64, top: f64, color: Rgb<u8>| {
                let z = height_at(t);
                if (0.0..=top).contains(&z) && nearest.map_or(true, |(bt, _)| t < bt) {
                    nearest = Some((t, color));
                }
            };
            for o in &world.obstacles {
                let color = Palette::obstacle(o.kind);
                for (a, b) in o.polygon.edges() {
                    if let Some(t) = ray_segment(origin, dir, a, b) {
                        consider(t, o.height, color);
                    }
                }
            }
            for p in &world.pedestrians {
                if let Some(t) = ray_circle(origin, dir, p.position, p.radius) {
                    consider(t, PEDESTRIAN_HEIGHT, Palette::PEDESTRIAN);
                }
            }
            if let Some((t, color)) = nearest {
                if ground.map_or(true, |(_, dist)| t < dist) {
                    return color;
                }
            }
        }
        match ground {
            Some((g, _)) => Palette::terrain(world.semantic_at(to_odom(g))),
            None => Palette::SKY,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use crate::world::{Obstacle, Polygon, TerrainRegion};

    fn grass_world() -> SemanticWorld {
        let mut w = SemanticWorld::empty(Point2::new(10.0, 0.0));
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(-50.0, -50.0, 50.0, 50.0),
            class: TerrainClass::Grass,
        });
        w
    }

    fn cam() -> CameraModel {
        CameraModel {
            focal_px: 300.0,
            principal_point: (320.0, 240.0),
            image_size: (640, 480),
            mount_height: 0.5,
            mount_pitch: 0.0,
            theta_fov: 1.2,
        }
    }

    #[test]
    fn uniform_terrain() {
        let img = render_camera(&grass_world(), &Pose2D::new(0.0, 0.0, 0.0, Frame::Odom), &cam());
        assert_eq!(*img.get_pixel(320, 300), Palette::terrain(TerrainClass::Grass));
        assert_eq!(*img.get_pixel(320, 100), Palette::SKY);
    }

    #[test]
    fn crosswalk_band_matches_ground_lookup() {
        let mut w = grass_world();
        w.terrain_regions.push(TerrainRegion {
            polygon: Polygon::rect(3.0, -20.0, 5.0, 20.0),
            class: TerrainClass::Crosswalk,
        });
        let c = cam();
        let img = render_camera(&w, &Pose2D::new(0.0, 0.0, 0.0, Frame::Odom), &c);
        for v in (241..480).step_by(7) {
            for u in (0..640).step_by(13) {
                let g = c.pixel_to_ground(Pixel::new(u as f64, v as f64)).unwrap();
                let expect = Palette::terrain(w.semantic_at(g));
                assert_eq!(*img.get_pixel(u, v), expect, "pixel {u},{v}");
            }
        }
    }

    #[test]
    fn wall_occludes_far_ground() {
        let mut w = grass_world();
        w.obstacles.push(Obstacle {
            polygon: Polygon::rect(2.0, -50.0, 2.3, 50.0),
            kind: ObstacleKind::Wall,
            height: 2.0,
        });
        let c = cam();
        let img = render_camera(&w, &Pose2D::new(0.0, 0.0, 0.0, Frame::Odom), &c);
        for v in (241..480).step_by(3) {
            let u = 320;
            let g = c.pixel_to_ground(Pixel::new(u as f64, v as f64)).unwrap();
            let px = *img.get_pixel(u, v);
            if g.x > 2.0 + 1e-9 {
                assert_eq!(px, Palette::obstacle(ObstacleKind::Wall), "v={v}");
            } else {
                assert_eq!(px, Palette::terrain(TerrainClass::Grass), "v={v}");
            }
        }
    }

    #[test]
    fn palette_round_trips() {
        for t in TerrainClass::ALL {
            assert_eq!(color_class(Palette::terrain(t)), Some(ColorClass::Terrain(t)));
        }
        assert_eq!(color_class(Rgb([1, 2, 3])), None);
    }
}

use image::RgbImage;
use once_cell::unsync::OnceCell;

use crate::geometry::{CameraModel, Frame, FrameTransform, Point2, Pose2D};
use crate::grid::OccupancyGrid;
use crate::world::{render_camera, SemanticWorld};

/// Read-only sensor snapshot for one control tick. The camera image is rendered
/// on first use.
pub struct SceneView<'a> {
    pub world: &'a SemanticWorld,
    pub pose: Pose2D,
    pub grid: &'a OccupancyGrid,
    pub camera: &'a CameraModel,
    pub tick: u64,
    pub time: f64,
    image: OnceCell<RgbImage>,
}

impl<'a> SceneView<'a> {
    pub fn new(
        world: &'a SemanticWorld,
        pose: Pose2D,
        grid: &'a OccupancyGrid,
        camera: &'a CameraModel,
        tick: u64,
        time: f64,
    ) -> Self {
        Self {
            world,
            pose,
            grid,
            camera,
            tick,
            time,
            image: OnceCell::new(),
        }
    }

    pub fn image(&self) -> &RgbImage {
        self.image
            .get_or_init(|| render_camera(self.world, &self.pose, self.camera))
    }

    pub fn image_rendered(&self) -> bool {
        self.image.get().is_some()
    }

    pub fn robot_to_odom(&self) -> FrameTransform {
        self.pose.to_parent(Frame::Robot)
    }

    pub fn odom_to_robot(&self) -> FrameTransform {
        self.robot_to_odom().invert()
    }

    pub fn to_odom(&self, p_robot: Point2) -> Point2 {
        self.robot_to_odom().map(p_robot)
    }
}

pub mod delaunay;
pub mod graph;
pub mod plan;
pub mod spline;

pub use delaunay::{delaunay3, tetrahedralize, Tetrahedralization};
pub use graph::{dijkstra, Roadmap, Space};
pub use plan::{
    check_clearance, plan_joint_space, plan_position_space, sample_free, ClearanceReport, Domain, Plan, PlannedPath,
    PlannerParams,
};
pub use spline::{spline_fit, Trajectory};

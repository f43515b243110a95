pub mod critical;
pub mod curve;
pub mod expr;
pub mod mesh;
pub mod weight;

pub use critical::{boundary_critical_points, CriticalKind, CriticalPoint, CriticalScan};
pub use curve::{BoundaryCurve, PeriodicSpline, Point};
pub use expr::Expr;
pub use mesh::{build_mesh, Grading, Locator, Mesh, MeshOptions, SizeField};
pub use weight::WeightField;

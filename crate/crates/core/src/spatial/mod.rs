//! Areal-unit geometry, extended Hausdorff distances and the ICAR precision
//! built from a symmetrized k-nearest-neighbour graph.

mod geojson;
mod geometry;
mod graph;

pub use geojson::{regions_from_geojson, regions_to_geojson};
pub use geometry::{extended_hausdorff, default_resolution, Point, Polygon, Region};
pub use graph::{car_quadform, knn_weights, SpatialConfig, SpatialGraph};

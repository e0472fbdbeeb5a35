pub mod audit;
pub mod entropy;
pub mod error;
pub mod flow;
pub mod group;
pub mod hyperbolic;
pub mod measure;
pub mod metric;
pub mod noise;
pub mod quadrature;
pub mod spray_table;

pub use audit::AuditCheck;
pub use entropy::{BowenEstimate, BowenParams, EntropyReport, LyapunovReport, PesinEstimate, ProbeSampling};
pub use error::{Error, Result};
pub use flow::{ConvergenceRow, FlowParams, FlowSegment, FlowState, LeafTangent};
pub use group::{build_octagon_group, FuchsianGroup, ReducedState};
pub use hyperbolic::{BoundaryPoint, DiskPoint, LineElement, MobiusMap, TangentVector};
pub use measure::{Grid, Histogram3D, StationaryConfig, StationaryRun, SweepReport};
pub use metric::{MetricKind, MetricModel, ShootingResult};

//! RMSprop extremum seeking control: dither signals, cost functions, the
//! closed-loop and averaged dynamics, quadratic stability margins, and a
//! numerical Lyapunov certificate.

pub mod averaging;
pub mod cost;
pub mod dynamics;
pub mod integrate;
pub mod lyapunov;
pub mod quadratic;
pub mod signals;

pub use averaging::{avg_maps, equilibrium, AverageMaps, Averager, Equilibrium, EquilibriumOptions, ErrorState};
pub use cost::CostFunction;
pub use dynamics::{EscParams, EscState};
pub use integrate::{integrate_fixed, OdeSystem, Trajectory};
pub use signals::DitherConfig;

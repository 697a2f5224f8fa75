//! Interval maps, their time-dependent compositions and observables.

mod map;
mod observable;
mod qds;
mod sequence;

pub use map::{IntervalMap, MonotonePiece, PieceKind};
pub use observable::{Observable, ObservableSpec, ScalarSpec};
pub use qds::{qds_birkhoff_integral, qds_birkhoff_path};
pub use sequence::{
    trajectory, Curve, MapFamily, MapSequence, ParamDistribution, ParameterDriver, Schedule,
    SequenceMode,
};

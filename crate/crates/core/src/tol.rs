//! Named tolerances and numerical defaults.

/// Group closure, identity and inverse residuals.
pub const GROUP: f64 = 1e-10;
/// Equivariance and commuting-square residuals.
pub const EQUIV: f64 = 1e-8;
/// Central-difference step.
pub const H_FD: f64 = 1e-5;
/// Smallest singular value accepted as "full rank".
pub const RANK: f64 = 1e-6;
/// Partition-of-unity sum residual.
pub const POU: f64 = 1e-10;
/// Form invariance residual.
pub const FORM: f64 = 1e-8;
/// Weight-form normalization.
pub const OMEGA: f64 = 1e-10;

/// Hausdorff separation margin in global coordinates.
pub const HAUSDORFF_MARGIN: f64 = 1e-3;
/// Displacements in (GROUP, EFFECTIVITY_UNKNOWN] are below sampling resolution.
pub const EFFECTIVITY_UNKNOWN: f64 = 1e-6;
pub const MAX_SHRINK: usize = 20;
pub const MAX_RETRY: usize = 16;

pub const DET: f64 = 1e-8;
pub const ZERO: f64 = 1e-8;
pub const DEDUP: f64 = 1e-6;
/// Radius of the neighbourhood of X inside which zeros are counted.
pub const DELTA_U: f64 = 0.1;

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

pub const MORSE_RETRY: usize = 8;
pub const MORSE_SUP: f64 = 1e-3;
pub const MORSE_HESSIAN: f64 = 1e-6;
/// Levels closer than this to a critical value are skipped.
pub const LEVEL_MARGIN: f64 = 1e-2;

pub const H_TRACE: f64 = 1e-2;
pub const CORRECTOR_TOL: f64 = 1e-10;

pub const EPS_LADDER: [f64; 3] = [0.2, 0.1, 0.05];
pub const GL_ORDER: usize = 16;
pub const MAX_W_DIM: usize = 3;
pub const MAX_BRANCH_PERM: usize = 6;
/// Verification samples per box dimension.
pub const SAMPLES_PER_DIM: usize = 32;
/// Newton seeds per dimension when searching for isolated zeros.
pub const SEEDS_PER_DIM: usize = 9;

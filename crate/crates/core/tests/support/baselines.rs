//! Regression baselines measured from this implementation. There is no
//! published figure for any of these; they guard against regressions.
#![allow(dead_code)]

/// 8-segment sigmoid table on [-6, 11], max abs error (measured 0.0053638).
pub const SIGMOID_PWL8_MAX_ERR: f64 = 0.00537;
/// 8-segment ln table on [2^-24, 1], max abs error (measured 0.25679).
pub const LN_PWL8_MAX_ERR: f64 = 0.2568;
/// FLASH-D with 8-segment PWL tables in BF16, worst normwise relative error
/// against the FP64 reference over the acceptance instance set (measured
/// 2.150; table error at small weights compounds through the recursion).
pub const BF16_PWL_FLASHD_ENVELOPE: f64 = 2.2;

//! Deterministic seed derivation.
//!
//! Every randomized stage derives its own seed from the master seed, a
//! stream tag, and an index, so stages can be re-run in isolation and
//! reproduce bit-identical results regardless of execution order.

/// Stream tags keep unrelated stages statistically independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Membership,
    ShadowModel,
    Negatives,
    Target,
    Eval,
    Removal,
    Synthetic,
    OutSubsample,
    ParamInit,
    Shuffle,
    Population,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Membership => 0x4d45_4d42,
            Stream::ShadowModel => 0x5348_4144,
            Stream::Negatives => 0x4e45_4753,
            Stream::Target => 0x5441_5247,
            Stream::Eval => 0x4556_414c,
            Stream::Removal => 0x5245_4d4f,
            Stream::Synthetic => 0x544f_5953,
            Stream::OutSubsample => 0x4f55_5453,
            Stream::ParamInit => 0x494e_4954,
            Stream::Shuffle => 0x5348_4646,
            Stream::Population => 0x504f_5055,
        }
    }
}

/// SplitMix64 finalizer; full-period bijection on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for `(stream, index)` under `master`.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream.tag()) ^ index)
}

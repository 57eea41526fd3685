//! Reference denoisers for the log-domain despeckling pipeline.

pub mod bm3d;
pub mod nlm;
pub mod tv;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::RealGrid;

pub use bm3d::{bm3d_denoise, Bm3dParams};
pub use nlm::{nlm_denoise, NlmParams};
pub use tv::{rof_objective, tv_denoise, TvParams};

/// Tagged denoiser selection, e.g. `{"kind":"tv","lambda":0.3,"iters":100}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Denoiser {
    Tv(TvParams),
    Nlm(NlmParams),
    Bm3d(Bm3dParams),
    Identity,
}

impl Denoiser {
    pub fn name(&self) -> &'static str {
        match self {
            Denoiser::Tv(_) => "tv",
            Denoiser::Nlm(_) => "nlm",
            Denoiser::Bm3d(_) => "bm3d",
            Denoiser::Identity => "identity",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Denoiser::Tv(p) => p.validate(),
            Denoiser::Nlm(p) => p.validate(),
            Denoiser::Bm3d(p) => p.validate(),
            Denoiser::Identity => Ok(()),
        }
    }

    pub fn apply(&self, f: &RealGrid) -> Result<RealGrid> {
        match self {
            Denoiser::Tv(p) => tv_denoise(f, p),
            Denoiser::Nlm(p) => nlm_denoise(f, p),
            Denoiser::Bm3d(p) => bm3d_denoise(f, p),
            Denoiser::Identity => Ok(f.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_json() {
        let d: Denoiser = serde_json::from_str(r#"{"kind":"tv","lambda":0.3,"iters":100}"#).unwrap();
        assert_eq!(
            d,
            Denoiser::Tv(TvParams {
                lambda: 0.3,
                iters: 100,
                tau: 0.25
            })
        );
        let b: Denoiser = serde_json::from_str(r#"{"kind":"bm3d","sigma":0.12}"#).unwrap();
        assert!(matches!(b, Denoiser::Bm3d(Bm3dParams { sigma: Some(s), .. }) if s == 0.12));
        let i: Denoiser = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(i, Denoiser::Identity);
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Denoiser>(&text).unwrap(), d);
    }
}

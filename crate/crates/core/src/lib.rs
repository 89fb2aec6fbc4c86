//! Evidence-validated answer caching for retrieval-augmented generation.
//!
//! A cached answer is reused only when the fresh query's retrieved evidence
//! still backs it: similar question, overlapping chunk content, unchanged
//! chunk versions, and lexical support of the answer by the fresh chunks.
//!
//! ```
//! use evcache::corpus::{CorpusSnapshot, Document};
//! use evcache::router::{Path, Router, RouterSettings};
//!
//! let docs = vec![Document::new("bridge", "The Hollin bridge opened in 1912. It spans the Tave.")];
//! let snapshot = CorpusSnapshot::build("base", docs, 1)?;
//! let mut router = Router::new(RouterSettings::default());
//! router.add_snapshot(&snapshot)?;
//!
//! let first = router.route("When did the Hollin bridge open?", "base")?;
//! let again = router.route("When did the Hollin bridge open?", "base")?;
//! assert_eq!(first.path, Path::Generate);
//! assert_eq!(again.path, Path::AnswerCache);
//! assert_eq!(again.answer, "The Hollin bridge opened in 1912.");
//! # Ok::<(), evcache::Error>(())
//! ```

pub mod caches;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod generate;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod router;
pub mod signature;
pub mod text;
pub mod validator;
pub mod workload;

/// Guide chapters, compiled here so their snippets run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/signatures.md")]
    pub mod signatures {}
    #[doc = include_str!("../../../book/src/gates.md")]
    pub mod gates {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    pub mod workloads {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    pub mod harness {}
}

pub use error::{Error, Result};
pub use router::{Path, RouteResult, Router, RouterSettings, Variant};
pub use signature::EvidenceSignature;
pub use validator::{Gate, GateConfig, GateOutcome, GateSet};

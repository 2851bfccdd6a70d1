//! Label-synchronous beam search: the batch oracle and the blockwise
//! synchronous streaming search.

mod session;
mod step;

pub use session::{batch_beam_search, blockwise_synchronous_beam_search, BlockwiseSession, SearchResult};
pub use step::{search_step, SearchSetup, StepOutcome};
pub use crate::trace::SearchTrace;

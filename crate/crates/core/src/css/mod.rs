//! Counterfactual synthesis over objects and question words.
//!
//! Contribution of a unit is the summed gradient of the anchor answer's
//! probability with respect to that unit's features. The object branch
//! keeps a SIM-ranked initial set, picks the smallest top-scoring prefix
//! carrying enough exponentiated score mass, extends it by overlapping
//! boxes, and removes it. The word branch masks the top-scoring content
//! words. Soft answers for the counterfactual come from the model's own
//! confidence on the complementary kept input.

mod attribution;
mod select;
mod synth;

pub use attribution::{contributions, object_contributions, row_sums, word_contributions, ContributionScores, UnitKind};
pub use select::{co_sel, cw_sel, io_sel, prefix_shares, rank_desc, ObjectSelection, WordSelection};
pub use synth::{
    assign_from_logits, draw_kind, dsa_ass, read_dump, synthesize, synthesize_kind, synthesize_pair, write_dump, CfKind,
    CounterfactualSample, CssConfig,
};

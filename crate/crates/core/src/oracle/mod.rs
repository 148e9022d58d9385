//! Exact interventional calculations on small discrete structural causal
//! models, used to check the identities the attribution method rests on.

pub mod checks;
pub mod dsep;
pub mod fixture;
pub mod scm;

pub use checks::{
    lemma1_licensed, lemma2_licensed, linear_scm, lte_marginal_vs_shapley, random_conforming_scm, verify_lemma1,
    verify_lemma2, ConformingInstance, EquivalenceRecord, LemmaCheck,
};
pub use dsep::Dag;
pub use fixture::{builtin_fixtures, parse_fixture, read_fixture, run_fixture, CheckOutcome, Expectation, Fixture};
pub use scm::{ate, lte_exact, DiscreteScm, InterventionSpec, Variable};

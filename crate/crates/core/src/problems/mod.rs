//! Problem families: AUC maximisation, policy evaluation, synthetic affine operators.

pub mod auc;
pub mod io;
pub mod pe;
pub mod synthetic;

pub use auc::{build_auc_problem, gen_auc_dataset, AucDataset, AucOperator};
pub use pe::{
    build_pe_problem, gen_random_mdp, random_features, sample_transitions, Mdp, PeOperator,
    Transition,
};
pub use synthetic::{AffineToy, AffineToySpec, DenseAffineSum, NoisyAffineOracle};

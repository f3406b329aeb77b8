mod common;

use common::criteria::copula_exactness;

#[test]
fn reorderings_keep_marginals_and_template_ranks() {
    copula_exactness(1000, 41).unwrap();
}

mod common;

use common::checks;

fn pass(r: checks::Check) {
    match r {
        Ok(msg) => println!("{msg}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn box_sum_matches_pixel_loop() {
    pass(checks::box_sums(150, 1));
}

#[test]
fn lab_codes_match_pixel_loop() {
    pass(checks::lab_codes(120, 2));
}

#[test]
fn surf_matches_pixel_loop() {
    pass(checks::surf_descriptors(300, 3));
}

#[test]
fn sift_matches_bin_centre_voting() {
    pass(checks::sift_descriptors(300, 4));
}

#[test]
fn gradients_match_finite_differences() {
    pass(checks::gradients(10, 5));
}

#[test]
fn union_is_or_of_views() {
    pass(checks::union_semantics(30, 6));
}

#[test]
fn nms_matches_reference() {
    pass(checks::nms_properties(1000, 7));
}

#![allow(dead_code)]

use cdgan_core::raster::Mask;

/// Three `(id, prediction, ground truth)` samples with hand-tallied results:
///
/// | id | tp | fp | fn | tn | iou | pred objs | gt objs | matches |
/// |----|----|----|----|----|-----|-----------|---------|---------|
/// | s1 | 4  | 1  | 1  | 10 | 4/6 | 2         | 2       | 2 (IoU 3/4 and 1/2) |
/// | s2 | 0  | 1  | 0  | 15 | 0   | 1         | 0       | 0       |
/// | s3 | 0  | 0  | 4  | 12 | 0   | 0         | 2       | 0       |
///
/// Totals: tp 4, fp 2, fn 5, tn 37; mean IoU 2/9; pixel precision 4/6,
/// recall 4/9; object precision 2/3, recall 2/4.
pub fn micro_fixture() -> Vec<(&'static str, Mask, Mask)> {
    vec![
        (
            "s1",
            Mask::from_ascii(&["##..", "#...", "....", "..##"]),
            Mask::from_ascii(&["##..", "##..", "....", "...#"]),
        ),
        (
            "s2",
            Mask::from_ascii(&["....", ".#..", "....", "...."]),
            Mask::from_ascii(&["....", "....", "....", "...."]),
        ),
        (
            "s3",
            Mask::from_ascii(&["....", "....", "....", "...."]),
            Mask::from_ascii(&["#..#", "#..#", "....", "...."]),
        ),
    ]
}

pub struct FixtureTotals {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub mean_iou: f64,
    pub pixel_precision: f64,
    pub pixel_recall: f64,
    pub object_precision: f64,
    pub object_recall: f64,
}

pub const FIXTURE_TOTALS: FixtureTotals = FixtureTotals {
    tp: 4,
    fp: 2,
    fn_: 5,
    tn: 37,
    mean_iou: 2.0 / 9.0,
    pixel_precision: 4.0 / 6.0,
    pixel_recall: 4.0 / 9.0,
    object_precision: 2.0 / 3.0,
    object_recall: 2.0 / 4.0,
};

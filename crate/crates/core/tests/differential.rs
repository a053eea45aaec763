mod common;

use common::{differential, Differential};

#[test]
fn incremental_install_matches_full_copy() {
    let mut agreed = 0;
    let mut incremental = 0;
    let mut seed = 0;
    while agreed < 1000 {
        assert!(seed < 50_000, "only {agreed} programs offered an incremental share");
        match differential(seed) {
            Ok(Differential::Agreed(inc)) => {
                agreed += 1;
                incremental += inc as u32;
            }
            Ok(Differential::NoChance) => {}
            Err(e) => panic!("{e}"),
        }
        seed += 1;
    }
    println!("{agreed} programs agreed, {incremental} through an incremental payload");
    assert!(incremental >= 500, "only {incremental} incremental payloads");
}

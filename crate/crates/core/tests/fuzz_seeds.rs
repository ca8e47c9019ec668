use std::fs;
use std::path::PathBuf;

use cube::cog::CogHeader;
use cube::io::zarr::ArrayMeta;
use cube::request::{parse_time, Bound};
use cube::stac::{parse_item, parse_search_page, Predicate};
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds for {target}");
    paths.into_iter().map(|p| fs::read(p).unwrap()).collect()
}

#[test]
fn seeds_exercise_the_happy_path() {
    for s in seeds("tiff_header") {
        let h = CogHeader::parse(&s).unwrap();
        assert_eq!(h.ifds.len(), 2);
    }
    // One seed has relative hrefs and no self link, so it has no usable asset.
    let items: Vec<bool> =
        seeds("stac_item").iter().map(|s| parse_item(&serde_json::from_slice(s).unwrap()).is_ok()).collect();
    assert_eq!(items, [false, true]);
    for s in seeds("search_page") {
        parse_search_page(&s).unwrap();
    }
    for s in seeds("query_predicate") {
        std::str::from_utf8(&s).unwrap().parse::<Predicate>().unwrap();
    }
    for s in seeds("cli_datetime") {
        let s = std::str::from_utf8(&s).unwrap();
        assert!(parse_time(s, Bound::Start).unwrap() <= parse_time(s, Bound::End).unwrap());
    }
    for s in seeds("zarr_metadata") {
        ArrayMeta::parse(&s).unwrap().dtype().unwrap();
    }
    assert_eq!(seeds("tile_decode").len(), 4);
}

fn mutate(seed: &[u8], edits: &[(usize, u8)], cut: usize) -> Vec<u8> {
    let mut out = seed.to_vec();
    for &(at, v) in edits {
        if !out.is_empty() {
            let i = at % out.len();
            out[i] = v;
        }
    }
    out.truncate(cut.min(out.len()).max(out.len().saturating_sub(cut)));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn mutated_tiff_headers_never_panic(
        which in 0usize..12,
        edits in proptest::collection::vec((any::<usize>(), any::<u8>()), 0..16),
        cut in any::<usize>(),
    ) {
        let all = seeds("tiff_header");
        let data = mutate(&all[which % all.len()], &edits, cut);
        let _ = CogHeader::parse(&data);
    }

    #[test]
    fn mutated_json_never_panics(
        which in 0usize..5,
        edits in proptest::collection::vec((any::<usize>(), any::<u8>()), 0..8),
        cut in any::<usize>(),
    ) {
        let mut all = seeds("search_page");
        all.extend(seeds("stac_item"));
        let data = mutate(&all[which % all.len()], &edits, cut);
        let _ = parse_search_page(&data);
        if let Ok(v) = serde_json::from_slice(&data) {
            let _ = parse_item(&v);
        }
        let _ = ArrayMeta::parse(&data);
    }

    #[test]
    fn arbitrary_strings_never_panic(s in "\\PC{0,40}") {
        let _ = s.parse::<Predicate>();
        let _ = parse_time(&s, Bound::Start);
        let _ = parse_time(&s, Bound::End);
    }
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};

use orbench::domain::TimepointRecord;
use orbench::ingest::{AnnotationHeader, AnnotationReader, AnnotationWriter};

const RECORDS: usize = 1_000_000;
const PER_CLIP: usize = 1_000;
/// Allowed peak resident growth while streaming, in bytes.
const MAX_GROWTH: i64 = 64 << 20;

fn peak_rss_bytes() -> i64 {
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    // SAFETY: getrusage only writes into the provided struct
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut usage) };
    assert_eq!(rc, 0);
    usage.ru_maxrss * 1024
}

fn tiny(i: usize) -> TimepointRecord {
    TimepointRecord {
        dataset: "tiny".into(),
        clip_id: format!("c{}", i / PER_CLIP),
        timepoint_id: format!("t{i}"),
        time_s: (i % PER_CLIP) as f64,
        entities: vec![],
        scene_graph: vec![],
        timeline: vec![],
        gaze: None,
        monitor_text: None,
        robot_flags: BTreeMap::new(),
        reference_view: "cam_0".into(),
        image_dims: BTreeMap::new(),
    }
}

#[test]
fn streaming_parse_has_bounded_memory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.jsonl");
    let before = peak_rss_bytes();

    let mut w = AnnotationWriter::new(BufWriter::new(File::create(&path).unwrap()), &AnnotationHeader::new("tiny")).unwrap();
    for i in 0..RECORDS {
        w.write(&tiny(i)).unwrap();
    }
    w.finish().unwrap();
    let file_len = std::fs::metadata(&path).unwrap().len();

    let reader = AnnotationReader::new(BufReader::new(File::open(&path).unwrap())).unwrap();
    let mut n = 0;
    for r in reader {
        r.unwrap();
        n += 1;
    }
    assert_eq!(n, RECORDS);

    let growth = peak_rss_bytes() - before;
    println!("file {file_len} bytes, peak resident growth {growth} bytes");
    assert!(growth < MAX_GROWTH, "peak growth {growth} exceeds {MAX_GROWTH}");
    assert!((growth as u64) < file_len / 4);
}

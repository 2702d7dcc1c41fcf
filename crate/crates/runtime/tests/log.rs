use sbpm_runtime::log::{append, encode_line, read};
use sbpm_runtime::{Event, EventRecord};

fn rec(seq: u64) -> EventRecord {
    EventRecord {
        seq,
        ts: 100 + seq,
        subject: "A".into(),
        event: Event::Restarted { attempt: seq as u32 },
    }
}

#[test]
fn append_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    assert!(read(&path).unwrap().is_empty());
    for i in 0..5 {
        append(&path, &rec(i)).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert_eq!(text.lines().next().unwrap(), encode_line(&rec(0)).trim_end());
    assert_eq!(read(&path).unwrap(), (0..5).map(rec).collect::<Vec<_>>());
}

#[test]
fn torn_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    append(&path, &rec(0)).unwrap();
    let line = encode_line(&rec(1));
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str(&line[..line.len() / 2]);
    std::fs::write(&path, text).unwrap();
    assert_eq!(read(&path).unwrap(), [rec(0)]);
}

#[test]
fn garbage_in_the_middle_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    std::fs::write(&path, format!("{}garbage\n{}", encode_line(&rec(0)), encode_line(&rec(1)))).unwrap();
    assert!(read(&path).is_err());
}

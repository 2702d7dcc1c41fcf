use sbpm_runtime::wire::{decode_frame, encode_frame, read_frame, write_frame, WireError, MAX_FRAME_LEN};
use sbpm_runtime::{correlation_id, Envelope, Frame, FrameKind};
use uuid::Uuid;

fn ping() -> Envelope {
    let instance = Uuid::from_u128(7);
    Envelope {
        instance_id: instance,
        from_subject: "A".parse().unwrap(),
        to_subject: "B".parse().unwrap(),
        message_id: "ping".parse().unwrap(),
        correlation_id: correlation_id(instance, "A", 0),
        seq: 0,
        payload: serde_json::json!({"n": 1}),
    }
}

#[test]
fn hello_length_matches_canonical_payload() {
    let payload = r#"{"kind":"HELLO","node":"n1","v":1}"#;
    let bytes = encode_frame(&Frame::new(FrameKind::Hello, "n1")).unwrap();
    assert_eq!(&bytes[..4], &(payload.len() as u32).to_be_bytes());
    assert_eq!(&bytes[..4], &[0, 0, 0, 0x22]);
    assert_eq!(&bytes[4..], payload.as_bytes());
}

#[test]
fn msg_round_trip() {
    let f = Frame::new(FrameKind::Msg, "n1")
        .instance(Uuid::from_u128(7))
        .envelope(ping())
        .ack_seq(0);
    assert_eq!(decode_frame(&encode_frame(&f).unwrap()).unwrap(), f);
    for kind in [FrameKind::HelloAck, FrameKind::Ack, FrameKind::Nack, FrameKind::Ping, FrameKind::Pong] {
        let f = Frame::new(kind, "n2").reason("x");
        assert_eq!(decode_frame(&encode_frame(&f).unwrap()).unwrap(), f);
    }
}

#[test]
fn oversized_declared_length() {
    let mut bytes = (17u32 * 1024 * 1024).to_be_bytes().to_vec();
    bytes.extend_from_slice(b"{}");
    assert!(matches!(decode_frame(&bytes), Err(WireError::FrameTooLarge(n)) if n == 17 * 1024 * 1024));
    let big = Frame::new(FrameKind::Msg, "n1").body(serde_json::Value::String("x".repeat(MAX_FRAME_LEN)));
    assert!(matches!(encode_frame(&big), Err(WireError::FrameTooLarge(_))));
}

#[test]
fn bad_payloads() {
    let frame = |payload: &[u8]| {
        let mut b = (payload.len() as u32).to_be_bytes().to_vec();
        b.extend_from_slice(payload);
        b
    };
    assert!(matches!(decode_frame(&frame(b"{nope")), Err(WireError::BadJson(_))));
    assert!(matches!(
        decode_frame(&frame(br#"{"kind":"HELLO","node":"n1","v":2}"#)),
        Err(WireError::UnsupportedVersion(2))
    ));
    assert!(matches!(
        decode_frame(&frame(br#"{"kind":"SHOUT","node":"n1","v":1}"#)),
        Err(WireError::BadJson(_))
    ));
    assert!(matches!(decode_frame(&[0, 0]), Err(WireError::Truncated { .. })));
    assert!(matches!(decode_frame(&[0, 0, 0, 9, b'{']), Err(WireError::Truncated { .. })));
}

#[tokio::test]
async fn stream_read_write() {
    let (mut a, mut b) = tokio::io::duplex(64);
    let frames = vec![
        Frame::new(FrameKind::Hello, "n1"),
        Frame::new(FrameKind::Msg, "n1").envelope(ping()),
        Frame::new(FrameKind::Ping, "n1"),
    ];
    let sent = frames.clone();
    let writer = tokio::spawn(async move {
        for f in &sent {
            write_frame(&mut a, f).await.unwrap();
        }
    });
    let mut got = Vec::new();
    while let Some(f) = read_frame(&mut b).await.unwrap() {
        got.push(f);
        if got.len() == frames.len() {
            break;
        }
    }
    writer.await.unwrap();
    assert_eq!(got, frames);
}

use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use xilrl_core::plant::Tier;
use xilrl_protocol::{Connection, Message, ProtocolError, Timings, PROTOCOL_VERSION};

fn timings() -> Timings {
    Timings {
        heartbeat_interval: Duration::from_millis(25),
        peer_timeout: Duration::from_millis(400),
    }
}

#[test]
fn hello_exchange_over_tcp() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let conn = Connection::open(stream, timings()).unwrap();
        let hello = conn.recv().unwrap();
        conn.send(&hello).unwrap();
        // stay idle past the peer timeout; heartbeats must keep us alive
        thread::sleep(Duration::from_millis(600));
        conn.send(&Message::Shutdown).unwrap();
        assert!(matches!(conn.recv(), Err(ProtocolError::Closed)));
    });
    let conn = Connection::open(TcpStream::connect(addr).unwrap(), timings()).unwrap();
    let hello = Message::Hello {
        peer_id: "bench-1".into(),
        tier: Tier::Hil,
        protocol_version: PROTOCOL_VERSION,
    };
    conn.send(&hello).unwrap();
    assert_eq!(conn.recv().unwrap(), hello);
    assert_eq!(conn.recv().unwrap(), Message::Shutdown);
    conn.close();
    server.join().unwrap();
}

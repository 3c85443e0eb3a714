//! TCP sockets owned by the current process, read from procfs.
//!
//! Linux only: other platforms get an `Unsupported` error.

use std::collections::BTreeSet;
use std::io;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    Listen,
    Established,
    Other(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSocket {
    pub local: SocketAddr,
    pub remote: SocketAddr,
    pub state: TcpState,
    pub inode: u64,
}

fn hex_u32(s: &str) -> Option<u32> {
    u32::from_str_radix(s, 16).ok()
}

/// Parses `ADDR:PORT` as printed in `/proc/net/tcp{,6}`: the address is in
/// host byte order per 32-bit word, the port is plain hex.
fn parse_addr(s: &str) -> Option<SocketAddr> {
    let (addr, port) = s.split_once(':')?;
    let port = u16::from_str_radix(port, 16).ok()?;
    let ip = match addr.len() {
        8 => IpAddr::V4(Ipv4Addr::from(hex_u32(addr)?.to_le_bytes())),
        32 => {
            let mut bytes = [0u8; 16];
            for i in 0..4 {
                let word = hex_u32(&addr[i * 8..i * 8 + 8])?;
                bytes[i * 4..i * 4 + 4].copy_from_slice(&word.to_le_bytes());
            }
            IpAddr::V6(Ipv6Addr::from(bytes))
        }
        _ => return None,
    };
    Some(SocketAddr::new(ip, port))
}

/// Parses the body of a `/proc/net/tcp`-style table.
pub fn parse_table(text: &str) -> Vec<TcpSocket> {
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 10 {
                return None;
            }
            let state = match u8::from_str_radix(cols[3], 16).ok()? {
                0x0A => TcpState::Listen,
                0x01 => TcpState::Established,
                other => TcpState::Other(other),
            };
            Some(TcpSocket {
                local: parse_addr(cols[1])?,
                remote: parse_addr(cols[2])?,
                state,
                inode: cols[9].parse().ok()?,
            })
        })
        .collect()
}

fn own_socket_inodes() -> io::Result<BTreeSet<u64>> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir("/proc/self/fd")? {
        let Ok(target) = std::fs::read_link(entry?.path()) else {
            continue;
        };
        let t = target.to_string_lossy();
        if let Some(inode) = t.strip_prefix("socket:[").and_then(|r| r.strip_suffix(']')) {
            if let Ok(n) = inode.parse() {
                out.insert(n);
            }
        }
    }
    Ok(out)
}

/// Every TCP socket this process holds a descriptor for.
pub fn process_tcp_sockets() -> io::Result<Vec<TcpSocket>> {
    if !cfg!(target_os = "linux") {
        return Err(io::Error::new(io::ErrorKind::Unsupported, "needs procfs"));
    }
    let mine = own_socket_inodes()?;
    let mut out = Vec::new();
    for table in ["/proc/net/tcp", "/proc/net/tcp6"] {
        match std::fs::read_to_string(table) {
            Ok(text) => out.extend(parse_table(&text).into_iter().filter(|s| mine.contains(&s.inode))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Listening sockets held by this process.
pub fn listening() -> io::Result<Vec<SocketAddr>> {
    Ok(process_tcp_sockets()?
        .into_iter()
        .filter(|s| s.state == TcpState::Listen)
        .map(|s| s.local)
        .collect())
}

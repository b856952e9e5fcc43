#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

// Classic (non-ng) PCAP reader/writer plus a structured packet model that
// round-trips byte-exactly. Anything the parser does not understand is kept
// as raw bytes so read -> write -> read is a fixpoint on arbitrary captures.

namespace poisoncap {

using Bytes = std::vector<std::uint8_t>;
using MacAddr = std::array<std::uint8_t, 6>;

struct PcapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Record header claims more bytes than the file holds.
struct TruncatedCaptureError : PcapError {
    using PcapError::PcapError;
};

// ---------------------------------------------------------------------------
// Addresses

// IPv4 addresses are held in host order so arithmetic and comparisons read
// naturally; serialization converts.
std::string ipv4_to_string(std::uint32_t addr);
std::uint32_t parse_ipv4(const std::string& dotted); // throws PcapError

std::string mac_to_string(const MacAddr& mac);
MacAddr parse_mac(const std::string& text); // throws PcapError

// ---------------------------------------------------------------------------
// Headers

struct Ipv4Header {
    std::uint8_t tos = 0;
    std::uint16_t total_length = 0; // recomputed by fix_packet
    std::uint16_t identification = 0;
    std::uint16_t flags_fragment = 0;
    std::uint8_t ttl = 64;
    std::uint8_t protocol = 0;
    std::uint16_t header_checksum = 0; // as read; recomputed by fix_packet
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    Bytes options; // as read; crafted packets carry none

    std::size_t header_len() const { return 20 + options.size(); }
};

namespace tcpflag {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
inline constexpr std::uint8_t kUrg = 0x20;
} // namespace tcpflag

struct TcpHeader {
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint32_t seq = 0;
    std::uint32_t ack = 0;
    std::uint8_t flags = 0; // raw byte; ECN bits preserved on round-trip
    std::uint16_t window = 0;
    std::uint16_t checksum = 0; // as read; recomputed by fix_packet
    std::uint16_t urgent = 0;
    Bytes options;

    bool syn() const { return flags & tcpflag::kSyn; }
    bool ack_set() const { return flags & tcpflag::kAck; }
    bool rst() const { return flags & tcpflag::kRst; }
    bool fin() const { return flags & tcpflag::kFin; }
    std::size_t header_len() const { return 20 + options.size(); }
};

struct UdpHeader {
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint16_t length = 0;   // recomputed by fix_packet
    std::uint16_t checksum = 0; // recomputed by fix_packet
};

// Transport bytes that failed (or were never attempted for) TCP/UDP parsing.
// The actual bytes live in Packet::payload.
struct OpaqueTransport {};

using Transport = std::variant<TcpHeader, UdpHeader, OpaqueTransport>;

// ---------------------------------------------------------------------------
// Packet
//
// Parsing never drops bytes. The shape is one of:
//   raw_frame          payload = the whole frame verbatim (short/odd frames,
//                      non-Ethernet link types)
//   non-IPv4           ip empty, payload = everything after the 14-byte
//                      Ethernet header
//   IPv4 + opaque L4   payload = bytes after the IPv4 header (within
//                      total_length), trailer = anything past total_length
//   IPv4 + TCP/UDP     payload = L4 payload, trailer as above
struct Packet {
    std::uint64_t ts_usec = 0;  // microseconds since epoch
    std::uint32_t orig_len = 0; // 0 = same as the serialized frame length

    bool raw_frame = false;
    MacAddr dst_mac{}; // wire order: destination first
    MacAddr src_mac{};
    std::uint16_t ethertype = 0;

    std::optional<Ipv4Header> ip;
    Transport transport = OpaqueTransport{};
    Bytes payload;
    Bytes trailer;

    const TcpHeader* tcp() const { return std::get_if<TcpHeader>(&transport); }
    TcpHeader* tcp() { return std::get_if<TcpHeader>(&transport); }
    const UdpHeader* udp() const { return std::get_if<UdpHeader>(&transport); }
    UdpHeader* udp() { return std::get_if<UdpHeader>(&transport); }

    bool is_ipv4() const { return ip.has_value(); }
    bool is_tcp() const { return ip && tcp(); }
    bool is_udp() const { return ip && udp(); }
};

// Exact wire bytes of the frame (what a capture record contains).
Bytes serialize_frame(const Packet& p);

// Inverse of serialize_frame under the shape rules above.
Packet parse_frame(std::uint64_t ts_usec, const Bytes& frame, std::uint32_t link_type = 1);

std::size_t frame_size(const Packet& p);

// ---------------------------------------------------------------------------
// Checksums (RFC 1071 one's-complement sums)

std::uint16_t rfc1071_checksum(const std::uint8_t* data, std::size_t len);
std::uint16_t ipv4_header_checksum(const Ipv4Header& ip);
// TCP/UDP checksum over pseudo-header + transport header + payload.
// For UDP a computed 0x0000 is transmitted as 0xFFFF.
std::uint16_t transport_checksum(const Packet& p);

// Recomputes the derived fields of a (possibly hand-edited) packet:
// ip.total_length, udp.length, the IPv4 header checksum and the TCP/UDP
// checksum. Pure: returns the repaired copy. Opaque transports only get
// total_length refreshed from the stored bytes.
Packet fix_packet(const Packet& p);

// ---------------------------------------------------------------------------
// Trace

struct Trace {
    std::uint32_t snap_len = 65535;
    std::uint32_t link_type = 1; // Ethernet; write_trace refuses anything else
    std::vector<Packet> packets;
};

// Classic PCAP, both byte orders accepted on read (magic a1b2c3d4 / d4c3b2a1),
// microsecond timestamps. Throws PcapError on malformed global headers and
// TruncatedCaptureError (naming the record index) on short records.
Trace read_trace(const std::string& path);

// Writes little-endian classic PCAP, version 2.4, thiszone/sigfigs 0.
// Records are written sorted by timestamp (stable). Refuses link types other
// than Ethernet and frames longer than snap_len.
void write_trace(const std::string& path, const Trace& trace);

} // namespace poisoncap

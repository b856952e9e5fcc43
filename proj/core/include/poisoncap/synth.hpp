#pragma once

// Seeded synthetic traffic corpus: a benign capture of periodic IoT-style
// device traffic plus two attack captures (SYN flood, UDP flood). The
// generator is deterministic per seed and produces well-formed TCP streams
// (clean handshakes, exact sequence/ack bookkeeping, unique ephemeral ports),
// so every capture audits clean and survives trigger injection without
// tripping the capture auditor.
//
// Device roles:
//   - Device 0 is a chatty heartbeat device: one long-lived TCP connection
//     to the server, a small application ping every 6-7 ms, each answered by
//     an equally small pong within a millisecond. Its source-address rate and
//     frame-size profile deliberately sit close to the SYN flood's, so a
//     classifier cannot separate flood traffic from benign traffic on source
//     rate statistics alone and must key on flow-local structure instead.
//   - Device 1 streams: one long-lived connection pushing 400-900 byte
//     segments every 12-16 ms, each push acknowledged by the server.
//   - Remaining devices run short request/response connections (fresh
//     ephemeral port per connection, a few rounds each, clean teardown) and
//     emit fixed 54-byte UDP telemetry datagrams on a slow timer.
//
// The SYN flood targets a closed server port: every flood SYN is answered by
// a server RST|ACK, so flood conversations are bidirectional and complete.
// Each flood source keeps one fixed source port; because the RST closes the
// conversation, the next SYN on the tuple reopens it without tripping the
// port-reuse rule. The UDP flood sends large fixed-size datagrams.
//
// Timing discipline (what makes injection audit-clean):
//   - Client-sourced packets inside one device stream are always more than
//     5 ms apart, so same-tuple trigger bursts (burst <= 5 at >= 100 us
//     spacing) anchored on consecutive packets never interleave.
//   - All server-sourced packets in the benign capture share one source
//     address, so trigger bursts anchored on two server packets share a
//     crafted flow tuple. Server timestamps are therefore kept off the exact
//     microsecond lattice (multiples of the trigger delay, and one below)
//     where two bursts' crafted SYNs could collide.

#include <cstdint>
#include <vector>

#include "poisoncap/pcap.hpp"

namespace poisoncap {

struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t devices = 8;           // benign devices; index 0 is the one a
                                       // poisoning attacker observes
    std::size_t benign_packets = 48000;   // approximate total benign packets
    std::size_t syn_flood_packets = 36000; // total flood packets (SYN + RST)
    std::size_t syn_flood_sources = 1; // flood runs as sequential per-source bursts
    std::size_t udp_flood_packets = 12000;
    double keepalive_share = 0.34; // benign budget share for the heartbeat device
    double streaming_share = 0.25; // benign budget share for the streaming device
    double telemetry_share = 0.10; // benign budget share for UDP telemetry
};

struct SynthCorpus {
    Trace benign;
    Trace syn_flood;
    Trace udp_flood;

    std::vector<std::uint32_t> device_ips; // device i address
    std::vector<MacAddr> device_macs;
    std::uint32_t server_ip = 0;    // TCP peer all devices talk to
    std::uint32_t collector_ip = 0; // UDP telemetry sink
    std::vector<std::uint32_t> syn_flood_source_ips;
    std::uint32_t udp_flood_source_ip = 0;
};

// Build the corpus. Deterministic per cfg.
SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg);

// Sub-capture: packets whose IPv4 source or destination equals `host`,
// original order preserved. Non-IPv4 packets are dropped.
Trace filter_by_host(const Trace& trace, std::uint32_t host);

} // namespace poisoncap

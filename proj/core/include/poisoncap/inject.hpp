#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "poisoncap/pcap.hpp"
#include "poisoncap/rng.hpp"

// Trigger injection: plants crafted packets into a capture so that a flow
// classifier trained on the resulting features associates the crafted pattern
// with the capture's (benign) label. Injection is timing-disciplined so the
// crafted packets never raise the TCP analysis warnings a capture auditor
// checks for, and the original packets are never modified.

namespace poisoncap {

struct TriggerConfig {
    double ratio = 0.2;                // selection probability per anchor
    std::uint32_t burst = 3;           // max crafted packets/pairs per anchor
    std::uint64_t delay_usec = 1000;   // spacing between crafted packets
    std::uint64_t bt_window_usec = 100000; // reverse-packet lookahead window
    // Crafted payload length in bytes; nullopt preserves the template's.
    std::optional<std::uint32_t> trigger_len = 60;
    std::uint32_t dst_ip = 0xCB007107;   // 203.0.113.7 (TEST-NET-3)
    MacAddr dst_mac{0x02, 0x7c, 0x00, 0x00, 0x00, 0x07};
    std::uint64_t seed = 1;
    // When non-empty, only packets whose source IP is listed become anchors.
    std::vector<std::uint32_t> src_allow;
};

struct InjectionPoint {
    std::size_t source_index = 0; // anchor's index in the input trace
    bool bidirectional = false;
    std::uint32_t injected = 0; // crafted packets from this anchor
};

struct InjectionReport {
    std::size_t points_considered = 0; // eligible anchors (one RNG draw each)
    std::size_t points_selected = 0;
    std::size_t bidirectional_points = 0;
    std::size_t unidirectional_points = 0;
    std::size_t injected_packets = 0;
    std::vector<InjectionPoint> points;
    // Positions of the crafted packets in the (sorted) output trace, ascending.
    std::vector<std::size_t> injected_output_indices;

    std::string to_text() const;
};

// True when some later packet within bt_usec of packet i travels the same
// flow in the opposite direction: swapped IPv4 addresses, swapped ports,
// same transport protocol. The flow-exact match matters — it keeps a packet
// of an unrelated conversation (or another protocol) from standing in as
// the reply template for the crafted pairs.
bool is_bidirectional(const Trace& trace, std::size_t i, std::uint64_t bt_usec);

// Index of the first such reverse packet, if any.
std::optional<std::size_t> find_reverse_within(const Trace& trace, std::size_t i,
                                               std::uint64_t bt_usec);

// `count` copies of the template re-addressed to cfg.dst_ip/dst_mac, payload
// trimmed or zero-padded to cfg.trigger_len, IP/TCP options stripped, headers
// repaired. Copy k is stamped template.ts + k*delay. Source addressing,
// ports, flags and sequence numbers are preserved, so a burst reads as one
// host re-sending the same segment toward an unresponsive destination —
// nothing a TCP tracker warns about.
std::vector<Packet> craft_uni(const Packet& templ, std::uint32_t count,
                              const TriggerConfig& cfg);

// A connection-attempt pair crafted from a forward/reverse template pair:
// tx becomes a pure SYN (fresh random ISN, re-addressed to cfg.dst), rx
// becomes the refusing RST|ACK (seq = ISN+1, ack = ISN+1, addressing = tx
// swapped, ports included). Payloads are trimmed/padded to cfg.trigger_len
// and headers repaired. tx is stamped base_ts + k*delay, rx 1us later.
// The RST closes the crafted conversation, which is what lets the next
// pair's SYN reuse the tuple without raising a port-reuse warning.
// Non-TCP templates are only re-addressed/padded/repaired.
std::pair<Packet, Packet> craft_pair(const Packet& tx_templ,
                                     const Packet& rx_templ,
                                     const TriggerConfig& cfg,
                                     std::uint32_t k, Rng& rng);

// The full pass over a capture. For every eligible anchor (IPv4 + TCP/UDP,
// source-allowlisted if a list is given) one uniform draw decides selection
// (a <= ratio). Selected anchors with a same-flow reverse packet inside the
// BT window get `burst` crafted pairs; the rest get bc = min(burst, floor(td/delay))
// unidirectional copies, where td is the gap to the next packet in the
// input trace — crafted packets never pass the anchor's successor. The last
// packet of a trace has no successor and gets nothing. Output is sorted by
// timestamp (stable); the input is untouched.
std::pair<Trace, InjectionReport> generate_backdoor(const Trace& trace,
                                                    const TriggerConfig& cfg);

// Negative control: a naive implementation of the same attack. Anchor
// selection and the re-addressed, padded trigger packets are identical, but
// every crafted TCP packet is sent as a fresh SYN with a new random ISN and
// no closing RST ever follows. The crafted conversations stay half-open, so
// consecutive triggers on one tuple raise the auditor's port-reuse warning —
// the contrast that motivates the disciplined SYN/RST pairs.
std::pair<Trace, InjectionReport> strawman_inject(const Trace& trace,
                                                  const TriggerConfig& cfg);

} // namespace poisoncap

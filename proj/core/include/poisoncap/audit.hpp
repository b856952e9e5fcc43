#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "poisoncap/pcap.hpp"

// Capture auditor: a simplified TCP conversation tracker that flags the four
// analysis warnings a reviewer inspecting a capture would trip over. It is
// deliberately conservative — it models exactly these rules and nothing else:
//
//   PortNumberReused       a pure SYN with a *fresh* ISN arrives while the
//                          tuple's conversation is in syn_seen/established
//                          phase. A SYN repeating the instance's opening ISN
//                          is a SYN retransmission (no finding), and an RST
//                          closes the conversation, so SYN-after-RST reopens
//                          it silently.
//   AckedUnseenSegment     an ACK acknowledges bytes beyond everything the
//                          peer was seen sending. Requires the peer direction
//                          to have been observed at all: captures routinely
//                          start mid-conversation.
//   SpuriousRetransmission a data-bearing segment repeats bytes that lie at
//                          or below the highest ACK the peer has sent, i.e.
//                          bytes already acknowledged. Repeats that were seen
//                          but never acked are plain retransmissions and are
//                          not findings.
//   OutOfOrder             a data-bearing segment starts below the
//                          direction's next expected seq but is not a
//                          retransmission of an already-observed range.
//
// Sequence comparisons use serial (mod 2^32) arithmetic; segments that would
// wrap are treated conservatively (tracked, never flagged). Non-SYN segments
// on a reset conversation are post-RST stragglers and are ignored. UDP and
// non-IP packets are ignored entirely.

namespace poisoncap {

enum class FindingKind {
    SpuriousRetransmission,
    AckedUnseenSegment,
    PortNumberReused,
    OutOfOrder,
};

const char* to_string(FindingKind kind);

// Conversation identity: the unordered (ip, port) endpoint pair.
struct FlowTuple {
    std::uint32_t ip_a = 0;
    std::uint16_t port_a = 0;
    std::uint32_t ip_b = 0;
    std::uint16_t port_b = 0;

    bool operator==(const FlowTuple&) const = default;
    auto operator<=>(const FlowTuple&) const = default;
};

FlowTuple flow_tuple_of(const Packet& p); // normalized; TCP/UDP packets only

struct AuditFinding {
    std::size_t packet_index = 0; // index into the audited trace
    FindingKind kind{};
    FlowTuple tuple;
    std::string detail;
};

// Walks the trace in timestamp order (stable on ties) and returns findings
// in that order, indexed against the trace as given.
std::vector<AuditFinding> audit(const Trace& trace);

// Findings of `poisoned` whose conversation tuple contains at least one
// packet not present in `clean` (matched by timestamp + frame bytes). This
// isolates warnings attributable to injected traffic: an empty delta means
// the injection is invisible to the auditor.
std::vector<AuditFinding> audit_delta(const Trace& clean, const Trace& poisoned);

// One finding per line: index, kind, detail.
std::string format_findings(const std::vector<AuditFinding>& findings);

} // namespace poisoncap

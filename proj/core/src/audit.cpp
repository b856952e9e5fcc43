#include "poisoncap/audit.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace poisoncap {

const char* to_string(FindingKind kind) {
    switch (kind) {
        case FindingKind::SpuriousRetransmission: return "SpuriousRetransmission";
        case FindingKind::AckedUnseenSegment: return "AckedUnseenSegment";
        case FindingKind::PortNumberReused: return "PortNumberReused";
        case FindingKind::OutOfOrder: return "OutOfOrder";
    }
    return "?";
}

FlowTuple flow_tuple_of(const Packet& p) {
    FlowTuple t;
    std::uint16_t sport = 0, dport = 0;
    if (const TcpHeader* tcp = p.tcp()) {
        sport = tcp->src_port;
        dport = tcp->dst_port;
    } else if (const UdpHeader* udp = p.udp()) {
        sport = udp->src_port;
        dport = udp->dst_port;
    }
    const std::uint32_t src = p.ip ? p.ip->src : 0;
    const std::uint32_t dst = p.ip ? p.ip->dst : 0;
    if (std::tie(src, sport) <= std::tie(dst, dport)) {
        t = {src, sport, dst, dport};
    } else {
        t = {dst, dport, src, sport};
    }
    return t;
}

namespace {

// Serial (RFC 1982 style, mod 2^32) comparisons.
bool seq_lt(std::uint32_t a, std::uint32_t b) {
    return static_cast<std::int32_t>(a - b) < 0;
}
bool seq_gt(std::uint32_t a, std::uint32_t b) { return seq_lt(b, a); }
bool seq_le(std::uint32_t a, std::uint32_t b) { return !seq_gt(a, b); }

enum class Phase { Closed, SynSeen, Established, Reset };

struct DirState {
    bool seen = false;
    std::uint32_t next_seq = 0; // one past the highest byte observed
    bool acked = false;
    std::uint32_t max_ack = 0; // highest ACK this direction has sent
    // Observed byte ranges [begin, end), merged, kept sorted. Ranges are
    // recorded only while they don't wrap; wrapping segments fall back to
    // the conservative path (no retransmission classification).
    std::vector<std::pair<std::uint32_t, std::uint32_t>> ranges;

    bool covers(std::uint32_t begin, std::uint32_t end) const {
        for (const auto& [lo, hi] : ranges) {
            if (lo <= begin && end <= hi) return true;
        }
        return false;
    }

    void record(std::uint32_t begin, std::uint32_t end) {
        if (end <= begin) return; // empty or wrapping: skip bookkeeping
        ranges.emplace_back(begin, end);
        std::sort(ranges.begin(), ranges.end());
        std::vector<std::pair<std::uint32_t, std::uint32_t>> merged;
        for (const auto& r : ranges) {
            if (!merged.empty() && r.first <= merged.back().second) {
                merged.back().second = std::max(merged.back().second, r.second);
            } else {
                merged.push_back(r);
            }
        }
        ranges = std::move(merged);
    }
};

struct ConvState {
    Phase phase = Phase::Closed;
    std::uint32_t base_seq = 0; // ISN of the current instance's opening SYN
    bool base_seq_valid = false;
    DirState dir[2];

    void restart() {
        phase = Phase::Closed;
        base_seq = 0;
        base_seq_valid = false;
        dir[0] = DirState{};
        dir[1] = DirState{};
    }
};

struct Tracker {
    std::map<FlowTuple, ConvState> convs;
    std::vector<AuditFinding> findings;

    void emit(std::size_t index, FindingKind kind, const FlowTuple& tuple,
              std::string detail) {
        findings.push_back({index, kind, tuple, std::move(detail)});
    }

    void process(std::size_t index, const Packet& p) {
        const TcpHeader* tcp = p.tcp();
        if (!tcp) return;

        const FlowTuple tuple = flow_tuple_of(p);
        ConvState& conv = convs[tuple];
        // Direction 0 = sent by endpoint (ip_a, port_a).
        const int d = (p.ip->src == tuple.ip_a && tcp->src_port == tuple.port_a) ? 0 : 1;
        DirState& fwd = conv.dir[d];
        DirState& rev = conv.dir[1 - d];

        const std::uint32_t seq = tcp->seq;
        const auto payload_len = static_cast<std::uint32_t>(p.payload.size());

        if (tcp->syn()) {
            const bool pure_syn = !tcp->ack_set();
            if (pure_syn &&
                (conv.phase == Phase::SynSeen || conv.phase == Phase::Established) &&
                conv.base_seq_valid && seq != conv.base_seq) {
                emit(index, FindingKind::PortNumberReused, tuple,
                     "fresh SYN (isn " + std::to_string(seq) +
                         ") on an active conversation");
                conv.restart();
            } else if (conv.phase == Phase::SynSeen ||
                       conv.phase == Phase::Established) {
                // SYN retransmission or handshake SYN|ACK: not a reuse.
                track_segment(conv, d, tcp, payload_len);
                return;
            } else {
                conv.restart();
            }
            conv.phase = Phase::SynSeen;
            if (pure_syn) {
                conv.base_seq = seq;
                conv.base_seq_valid = true;
            }
            track_segment(conv, d, tcp, payload_len);
            return;
        }

        if (conv.phase == Phase::Reset) return; // post-RST stragglers

        if (tcp->rst()) {
            // The RST's own ACK (if any) still gets sanity-checked, but RST
            // payload bytes are diagnostic junk and are not tracked.
            check_ack(index, tuple, conv, d, tcp);
            conv.phase = Phase::Reset;
            return;
        }

        if (conv.phase == Phase::Closed) conv.phase = Phase::Established;
        else if (conv.phase == Phase::SynSeen) conv.phase = Phase::Established;

        check_ack(index, tuple, conv, d, tcp);

        if (payload_len > 0) {
            const std::uint32_t end = seq + payload_len;
            const bool wraps = end < seq;
            if (!wraps) {
                if (rev.acked && seq_le(end, rev.max_ack)) {
                    emit(index, FindingKind::SpuriousRetransmission, tuple,
                         "bytes [" + std::to_string(seq) + ", " +
                             std::to_string(end) + ") already acknowledged");
                } else if (fwd.seen && seq_lt(seq, fwd.next_seq) &&
                           !fwd.covers(seq, end)) {
                    emit(index, FindingKind::OutOfOrder, tuple,
                         "seq " + std::to_string(seq) + " below next expected " +
                             std::to_string(fwd.next_seq));
                }
            }
        }

        track_segment(conv, d, tcp, payload_len);
    }

    void check_ack(std::size_t index, const FlowTuple& tuple, ConvState& conv,
                   int d, const TcpHeader* tcp) {
        if (!tcp->ack_set()) return;
        const DirState& rev = conv.dir[1 - d];
        if (rev.seen && seq_gt(tcp->ack, rev.next_seq)) {
            emit(index, FindingKind::AckedUnseenSegment, tuple,
                 "ack " + std::to_string(tcp->ack) + " beyond peer's next seq " +
                     std::to_string(rev.next_seq));
        }
    }

    void track_segment(ConvState& conv, int d, const TcpHeader* tcp,
                       std::uint32_t payload_len) {
        DirState& fwd = conv.dir[d];
        const std::uint32_t consumed =
            payload_len + (tcp->syn() ? 1 : 0) + (tcp->fin() ? 1 : 0);
        const std::uint32_t end = tcp->seq + consumed;
        if (!fwd.seen || seq_gt(end, fwd.next_seq)) fwd.next_seq = end;
        fwd.seen = true;
        if (consumed > 0 && end > tcp->seq) fwd.record(tcp->seq, end);
        if (tcp->ack_set()) {
            if (!fwd.acked || seq_gt(tcp->ack, fwd.max_ack)) fwd.max_ack = tcp->ack;
            fwd.acked = true;
        }
    }
};

} // namespace

std::vector<AuditFinding> audit(const Trace& trace) {
    std::vector<std::size_t> order(trace.packets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return trace.packets[a].ts_usec < trace.packets[b].ts_usec;
    });

    Tracker tracker;
    for (std::size_t idx : order) tracker.process(idx, trace.packets[idx]);

    std::stable_sort(tracker.findings.begin(), tracker.findings.end(),
                     [](const AuditFinding& a, const AuditFinding& b) {
                         return a.packet_index < b.packet_index;
                     });
    return tracker.findings;
}

std::vector<AuditFinding> audit_delta(const Trace& clean, const Trace& poisoned) {
    // Injected = packets of `poisoned` beyond the clean multiset, matched on
    // (timestamp, frame bytes).
    std::map<std::pair<std::uint64_t, Bytes>, int> budget;
    for (const Packet& p : clean.packets) {
        ++budget[{p.ts_usec, serialize_frame(p)}];
    }

    std::vector<char> injected(poisoned.packets.size(), 0);
    for (std::size_t i = 0; i < poisoned.packets.size(); ++i) {
        const Packet& p = poisoned.packets[i];
        auto it = budget.find({p.ts_usec, serialize_frame(p)});
        if (it != budget.end() && it->second > 0) {
            --it->second;
        } else {
            injected[i] = 1;
        }
    }

    std::vector<FlowTuple> touched;
    for (std::size_t i = 0; i < poisoned.packets.size(); ++i) {
        const Packet& p = poisoned.packets[i];
        if (injected[i] && p.ip && (p.tcp() || p.udp())) {
            touched.push_back(flow_tuple_of(p));
        }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

    std::vector<AuditFinding> delta;
    for (AuditFinding& f : audit(poisoned)) {
        if (std::binary_search(touched.begin(), touched.end(), f.tuple)) {
            delta.push_back(std::move(f));
        }
    }
    return delta;
}

std::string format_findings(const std::vector<AuditFinding>& findings) {
    std::ostringstream os;
    for (const AuditFinding& f : findings) {
        os << f.packet_index << "\t" << to_string(f.kind) << "\t" << f.detail
           << "\n";
    }
    return os.str();
}

} // namespace poisoncap

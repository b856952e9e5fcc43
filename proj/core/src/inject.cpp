#include "poisoncap/inject.hpp"

#include <algorithm>
#include <sstream>

namespace poisoncap {

namespace {

bool src_allowed(const Packet& p, const TriggerConfig& cfg) {
    if (cfg.src_allow.empty()) return true;
    if (!p.ip) return false;
    return std::find(cfg.src_allow.begin(), cfg.src_allow.end(), p.ip->src) !=
           cfg.src_allow.end();
}

bool eligible_anchor(const Packet& p, const TriggerConfig& cfg) {
    return p.is_ipv4() && (p.tcp() || p.udp()) && src_allowed(p, cfg);
}

void apply_payload_len(Packet& p, const std::optional<std::uint32_t>& len) {
    if (!len) return;
    p.payload.resize(*len, 0);
}

// Copy a template for crafting: options dropped (fixed 20-byte headers),
// trailer dropped, capture length reset so incl_len == orig_len on write.
Packet craft_base(const Packet& templ) {
    Packet p = templ;
    p.orig_len = 0;
    p.trailer.clear();
    if (p.ip) p.ip->options.clear();
    if (TcpHeader* tcp = p.tcp()) tcp->options.clear();
    return p;
}

} // namespace

namespace {

// Reverse-direction packet of the *same flow*: swapped IPv4 addresses,
// swapped ports, same transport. Anything looser would let a packet of an
// unrelated conversation (or another protocol) stand in as the "reply"
// template, and the crafted pair would then open conversations it never
// closes — exactly the half-open pattern a capture auditor flags.
bool reverses(const Packet& a, const Packet& b) {
    if (!a.ip || !b.ip) return false;
    if (b.ip->src != a.ip->dst || b.ip->dst != a.ip->src) return false;
    if (const TcpHeader* at = a.tcp()) {
        const TcpHeader* bt = b.tcp();
        return bt && bt->src_port == at->dst_port && bt->dst_port == at->src_port;
    }
    if (const UdpHeader* au = a.udp()) {
        const UdpHeader* bu = b.udp();
        return bu && bu->src_port == au->dst_port && bu->dst_port == au->src_port;
    }
    return false;
}

} // namespace

std::optional<std::size_t> find_reverse_within(const Trace& trace,
                                               std::size_t i,
                                               std::uint64_t bt_usec) {
    const Packet& a = trace.packets[i];
    if (!a.ip) return std::nullopt;
    for (std::size_t j = i + 1; j < trace.packets.size(); ++j) {
        const Packet& b = trace.packets[j];
        if (b.ts_usec < a.ts_usec) continue; // defensive; traces are sorted
        if (b.ts_usec - a.ts_usec > bt_usec) break;
        if (reverses(a, b)) return j;
    }
    return std::nullopt;
}

bool is_bidirectional(const Trace& trace, std::size_t i, std::uint64_t bt_usec) {
    return find_reverse_within(trace, i, bt_usec).has_value();
}

std::vector<Packet> craft_uni(const Packet& templ, std::uint32_t count,
                              const TriggerConfig& cfg) {
    std::vector<Packet> out;
    out.reserve(count);
    for (std::uint32_t k = 1; k <= count; ++k) {
        Packet p = craft_base(templ);
        if (p.ip) p.ip->dst = cfg.dst_ip;
        p.dst_mac = cfg.dst_mac;
        apply_payload_len(p, cfg.trigger_len);
        p.ts_usec = templ.ts_usec + static_cast<std::uint64_t>(k) * cfg.delay_usec;
        out.push_back(fix_packet(p));
    }
    return out;
}

std::pair<Packet, Packet> craft_pair(const Packet& tx_templ,
                                     const Packet& rx_templ,
                                     const TriggerConfig& cfg,
                                     std::uint32_t k, Rng& rng) {
    Packet tx = craft_base(tx_templ);
    Packet rx = craft_base(rx_templ);

    if (tx.ip) tx.ip->dst = cfg.dst_ip;
    tx.dst_mac = cfg.dst_mac;

    const std::uint32_t sqn = rng.next_u32();
    if (TcpHeader* tcp = tx.tcp()) {
        tcp->flags = tcpflag::kSyn;
        tcp->seq = sqn;
        tcp->ack = 0;
    }

    // rx is the crafted destination answering: tx's addressing swapped.
    if (tx.ip && rx.ip) {
        rx.ip->src = tx.ip->dst;
        rx.ip->dst = tx.ip->src;
    }
    rx.src_mac = tx.dst_mac;
    rx.dst_mac = tx.src_mac;
    if (TcpHeader* rtcp = rx.tcp()) {
        rtcp->flags = static_cast<std::uint8_t>(tcpflag::kRst | tcpflag::kAck);
        rtcp->seq = sqn + 1;
        rtcp->ack = sqn + 1;
        if (const TcpHeader* ttcp = tx.tcp()) {
            rtcp->src_port = ttcp->dst_port;
            rtcp->dst_port = ttcp->src_port;
        }
    } else if (UdpHeader* rudp = rx.udp()) {
        if (const UdpHeader* tudp = tx.udp()) {
            rudp->src_port = tudp->dst_port;
            rudp->dst_port = tudp->src_port;
        }
    }

    apply_payload_len(tx, cfg.trigger_len);
    apply_payload_len(rx, cfg.trigger_len);

    const std::uint64_t base =
        tx_templ.ts_usec + static_cast<std::uint64_t>(k) * cfg.delay_usec;
    tx.ts_usec = base;
    rx.ts_usec = base + 1;

    return {fix_packet(tx), fix_packet(rx)};
}

namespace {

std::pair<Trace, InjectionReport> run_injection(const Trace& trace,
                                                const TriggerConfig& cfg,
                                                bool strawman) {
    Rng rng(cfg.seed);
    Trace out;
    out.snap_len = trace.snap_len;
    out.link_type = trace.link_type;
    out.packets = trace.packets;

    InjectionReport report;
    std::vector<Packet> injected;

    const std::size_t n = trace.packets.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Packet& p = trace.packets[i];
        if (!eligible_anchor(p, cfg)) continue;
        ++report.points_considered;
        const double a = rng.uniform();
        if (a > cfg.ratio) continue;
        ++report.points_selected;

        InjectionPoint point;
        point.source_index = i;

        if (strawman) {
            // Naive version of the same attack: identically re-addressed and
            // padded trigger packets, but TCP state handling is lazy — every
            // crafted packet goes out as a fresh SYN with a new ISN and no
            // closing RST ever follows. The crafted conversations stay
            // half-open, so the next SYN on the same tuple is exactly the
            // port-reuse warning the disciplined pairs avoid.
            for (std::uint32_t k = 1; k <= cfg.burst; ++k) {
                Packet copy = craft_base(p);
                if (copy.ip) copy.ip->dst = cfg.dst_ip;
                copy.dst_mac = cfg.dst_mac;
                if (TcpHeader* tcp = copy.tcp()) {
                    tcp->flags = tcpflag::kSyn;
                    tcp->seq = rng.next_u32();
                    tcp->ack = 0;
                }
                apply_payload_len(copy, cfg.trigger_len);
                copy.ts_usec =
                    p.ts_usec + static_cast<std::uint64_t>(k) * cfg.delay_usec;
                injected.push_back(fix_packet(copy));
                ++point.injected;
            }
            report.unidirectional_points++;
        } else if (auto j = find_reverse_within(trace, i, cfg.bt_window_usec)) {
            ++report.bidirectional_points;
            point.bidirectional = true;
            for (std::uint32_t k = 1; k <= cfg.burst; ++k) {
                auto [tx, rx] = craft_pair(p, trace.packets[*j], cfg, k, rng);
                injected.push_back(std::move(tx));
                injected.push_back(std::move(rx));
                point.injected += 2;
            }
        } else {
            if (i + 1 >= n) continue; // no successor: no gap to fill
            ++report.unidirectional_points;
            const std::uint64_t td =
                trace.packets[i + 1].ts_usec >= p.ts_usec
                    ? trace.packets[i + 1].ts_usec - p.ts_usec
                    : 0;
            const std::uint64_t bc =
                std::min<std::uint64_t>(cfg.burst, td / cfg.delay_usec);
            if (bc == 0) continue;
            std::vector<Packet> burst =
                craft_uni(p, static_cast<std::uint32_t>(bc), cfg);
            point.injected = static_cast<std::uint32_t>(burst.size());
            for (Packet& cp : burst) injected.push_back(std::move(cp));
        }

        if (point.injected > 0) {
            report.injected_packets += point.injected;
            report.points.push_back(point);
        }
    }

    // Merge keeping provenance: originals stay ahead of crafted packets at
    // equal timestamps, and relative order within each group is preserved.
    const std::size_t originals = out.packets.size();
    for (Packet& p : injected) out.packets.push_back(std::move(p));
    std::vector<std::size_t> order(out.packets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                         return out.packets[a].ts_usec < out.packets[b].ts_usec;
                     });
    std::vector<Packet> merged;
    merged.reserve(out.packets.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        if (order[pos] >= originals) {
            report.injected_output_indices.push_back(pos);
        }
        merged.push_back(std::move(out.packets[order[pos]]));
    }
    out.packets = std::move(merged);
    return {std::move(out), std::move(report)};
}

} // namespace

std::pair<Trace, InjectionReport> generate_backdoor(const Trace& trace,
                                                    const TriggerConfig& cfg) {
    return run_injection(trace, cfg, /*strawman=*/false);
}

std::pair<Trace, InjectionReport> strawman_inject(const Trace& trace,
                                                  const TriggerConfig& cfg) {
    return run_injection(trace, cfg, /*strawman=*/true);
}

std::string InjectionReport::to_text() const {
    std::ostringstream os;
    os << "points_considered\t" << points_considered << "\n"
       << "points_selected\t" << points_selected << "\n"
       << "bidirectional_points\t" << bidirectional_points << "\n"
       << "unidirectional_points\t" << unidirectional_points << "\n"
       << "injected_packets\t" << injected_packets << "\n";
    for (const InjectionPoint& p : points) {
        os << "point\t" << p.source_index << "\t"
           << (p.bidirectional ? "bidi" : "uni") << "\t" << p.injected << "\n";
    }
    for (std::size_t idx : injected_output_indices) {
        os << "injected_index\t" << idx << "\n";
    }
    return os.str();
}

} // namespace poisoncap

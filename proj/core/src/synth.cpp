#include "poisoncap/synth.hpp"

#include <algorithm>
#include <stdexcept>

#include "poisoncap/rng.hpp"

namespace poisoncap {

namespace {

constexpr std::uint64_t kBaseTsUsec = 1600000000ULL * 1000000ULL;
constexpr std::uint8_t kProtoTcp = 6;
constexpr std::uint8_t kProtoUdp = 17;
constexpr std::uint16_t kFloodPort = 23; // closed server port the SYN flood hits

// Minimum spacing between client-sourced packets inside one device stream.
// Must exceed the widest trigger burst the experiments sweep (burst 5 at
// 1 ms spacing spans 5 ms + 1 us), so same-tuple bursts cannot interleave.
constexpr std::uint64_t kMinClientGapUs = 6000;

// Server responses arrive this soon after the packet they answer.
constexpr std::uint64_t kReplyMinUs = 200;
constexpr std::uint64_t kReplyMaxUs = 800;

Bytes pseudo_payload(std::size_t len, std::uint32_t tag) {
    Bytes b(len);
    for (std::size_t i = 0; i < len; ++i) {
        b[i] = static_cast<std::uint8_t>((tag * 131 + i * 31 + 7) & 0xff);
    }
    return b;
}

struct StreamBuilder {
    std::vector<Packet>& sink;
    std::uint16_t ident = 1;

    Packet& tcp(std::uint64_t ts, const MacAddr& smac, const MacAddr& dmac,
                std::uint32_t sip, std::uint32_t dip, std::uint16_t sport,
                std::uint16_t dport, std::uint32_t seq, std::uint32_t ack,
                std::uint8_t flags, std::size_t payload_len) {
        Packet p;
        p.ts_usec = ts;
        p.src_mac = smac;
        p.dst_mac = dmac;
        p.ethertype = 0x0800;
        Ipv4Header ip;
        ip.identification = ident++;
        ip.protocol = kProtoTcp;
        ip.src = sip;
        ip.dst = dip;
        p.ip = ip;
        TcpHeader t;
        t.src_port = sport;
        t.dst_port = dport;
        t.seq = seq;
        t.ack = ack;
        t.flags = flags;
        t.window = 64240;
        p.transport = t;
        p.payload = pseudo_payload(payload_len, ident);
        sink.push_back(fix_packet(p));
        return sink.back();
    }

    Packet& udp(std::uint64_t ts, const MacAddr& smac, const MacAddr& dmac,
                std::uint32_t sip, std::uint32_t dip, std::uint16_t sport,
                std::uint16_t dport, std::size_t payload_len) {
        Packet p;
        p.ts_usec = ts;
        p.src_mac = smac;
        p.dst_mac = dmac;
        p.ethertype = 0x0800;
        Ipv4Header ip;
        ip.identification = ident++;
        ip.protocol = kProtoUdp;
        ip.src = sip;
        ip.dst = dip;
        p.ip = ip;
        UdpHeader u;
        u.src_port = sport;
        u.dst_port = dport;
        p.transport = u;
        p.payload = pseudo_payload(payload_len, ident);
        sink.push_back(fix_packet(p));
        return sink.back();
    }
};

std::uint64_t draw(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
    return lo + rng.below(hi - lo + 1);
}

// All server-sourced packets in one capture share a source address, so
// trigger bursts anchored on two of them share a crafted flow tuple. Two
// bursts only conflict when the crafted SYN of one lands on the exact
// microsecond of the other burst's crafted SYN, or of its closing RST while
// ordering ahead of it. With burst packets at anchor + k*delay (k = 1..B)
// and the RST one microsecond after its SYN, that happens exactly when the
// two anchor timestamps differ by j*delay or j*delay - 1 for j = 0..B-1.
// Keep server timestamps off that lattice for the delay values the
// experiments use (100 us and 1000 us) up to burst 5.
class ServerClock {
  public:
    std::uint64_t place(std::uint64_t ts) {
        if (ts <= last_checked_) ts = last_checked_; // keep processing order
        for (int guard = 0; guard < 64; ++guard) {
            bool clash = false;
            for (auto it = recent_.rbegin(); it != recent_.rend(); ++it) {
                if (ts - *it > kWindow) break;
                if (forbidden(ts - *it)) {
                    ++ts;
                    clash = true;
                    break;
                }
            }
            if (!clash) break;
        }
        recent_.push_back(ts);
        while (!recent_.empty() && ts - recent_.front() > kWindow) {
            recent_.erase(recent_.begin());
        }
        last_checked_ = ts;
        return ts;
    }

  private:
    static constexpr std::uint64_t kWindow = 4000;

    static bool forbidden(std::uint64_t delta) {
        if (delta == 0) return true;
        for (std::uint64_t d : {std::uint64_t{100}, std::uint64_t{1000}}) {
            for (std::uint64_t j = 1; j <= 4; ++j) {
                if (delta == j * d || delta == j * d - 1) return true;
            }
        }
        return false;
    }

    std::vector<std::uint64_t> recent_;
    std::uint64_t last_checked_ = 0;
};

struct DeviceEndpoints {
    const MacAddr& dev_mac;
    const MacAddr& srv_mac;
    std::uint32_t dev_ip;
    std::uint32_t srv_ip;
};

// One TCP request/response connection; client packets stay on the client's
// own clock (>= kMinClientGapUs apart), server replies follow the packet
// they answer by under a millisecond. Returns packets emitted.
std::size_t emit_connection(StreamBuilder& b, Rng& rng, std::uint64_t& t,
                            const DeviceEndpoints& ep, std::uint16_t sport,
                            std::uint16_t dport, std::size_t rounds) {
    const auto reply = [&]() { return draw(rng, kReplyMinUs, kReplyMaxUs); };
    const auto gap = [&]() { return draw(rng, kMinClientGapUs, 15000); };
    const std::uint32_t cisn = rng.next_u32();
    const std::uint32_t sisn = rng.next_u32();

    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cisn,
          0, tcpflag::kSyn, 0);
    b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
          sport, sisn, cisn + 1,
          static_cast<std::uint8_t>(tcpflag::kSyn | tcpflag::kAck), 0);
    std::uint32_t cseq = cisn + 1;
    std::uint32_t sseq = sisn + 1;
    t += gap();
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, tcpflag::kAck, 0);
    std::size_t emitted = 3;

    for (std::size_t r = 0; r < rounds; ++r) {
        const std::size_t req_len = draw(rng, 80, 300);
        const std::size_t resp_len = draw(rng, 120, 900);
        t += gap();
        b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport,
              cseq, sseq,
              static_cast<std::uint8_t>(tcpflag::kPsh | tcpflag::kAck), req_len);
        cseq += static_cast<std::uint32_t>(req_len);
        b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
              sport, sseq, cseq,
              static_cast<std::uint8_t>(tcpflag::kPsh | tcpflag::kAck),
              resp_len);
        sseq += static_cast<std::uint32_t>(resp_len);
        emitted += 2;
    }

    t += gap();
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, static_cast<std::uint8_t>(tcpflag::kFin | tcpflag::kAck), 0);
    cseq += 1;
    b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
          sport, sseq, cseq,
          static_cast<std::uint8_t>(tcpflag::kFin | tcpflag::kAck), 0);
    sseq += 1;
    t += gap();
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, tcpflag::kAck, 0);
    return emitted + 3;
}

// Long-lived heartbeat connection: a `ping_len`-byte application ping every
// [gap_lo, gap_hi] us, each answered by a same-size pong. Device 0 runs this
// at a 6-7 ms cadence so its source statistics shadow the SYN flood's.
void emit_heartbeat(StreamBuilder& b, Rng& rng, std::uint64_t& t,
                    const DeviceEndpoints& ep, std::uint16_t sport,
                    std::uint16_t dport, std::size_t pings,
                    std::size_t ping_len, std::uint64_t gap_lo,
                    std::uint64_t gap_hi) {
    const auto reply = [&]() { return draw(rng, kReplyMinUs, kReplyMaxUs); };
    const auto gap = [&]() { return draw(rng, gap_lo, gap_hi); };
    const std::uint32_t cisn = rng.next_u32();
    const std::uint32_t sisn = rng.next_u32();

    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cisn,
          0, tcpflag::kSyn, 0);
    b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
          sport, sisn, cisn + 1,
          static_cast<std::uint8_t>(tcpflag::kSyn | tcpflag::kAck), 0);
    std::uint32_t cseq = cisn + 1;
    std::uint32_t sseq = sisn + 1;
    t += gap();
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, tcpflag::kAck, 0);

    const auto ping_flags = static_cast<std::uint8_t>(
        ping_len > 0 ? tcpflag::kPsh | tcpflag::kAck : tcpflag::kAck);
    for (std::size_t k = 0; k < pings; ++k) {
        t += gap();
        b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport,
              cseq, sseq, ping_flags, ping_len);
        cseq += static_cast<std::uint32_t>(ping_len);
        b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
              sport, sseq, cseq, ping_flags, ping_len);
        sseq += static_cast<std::uint32_t>(ping_len);
    }

    t += gap();
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, static_cast<std::uint8_t>(tcpflag::kFin | tcpflag::kAck), 0);
    cseq += 1;
    b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
          sport, sseq, cseq,
          static_cast<std::uint8_t>(tcpflag::kFin | tcpflag::kAck), 0);
    sseq += 1;
    t += gap();
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, tcpflag::kAck, 0);
}

// Long-lived streaming connection: 400-900 byte pushes every 12-16 ms, each
// acknowledged by the server.
void emit_stream(StreamBuilder& b, Rng& rng, std::uint64_t& t,
                 const DeviceEndpoints& ep, std::uint16_t sport,
                 std::uint16_t dport, std::size_t pushes) {
    const auto reply = [&]() { return draw(rng, kReplyMinUs, kReplyMaxUs); };
    const std::uint32_t cisn = rng.next_u32();
    const std::uint32_t sisn = rng.next_u32();

    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cisn,
          0, tcpflag::kSyn, 0);
    b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
          sport, sisn, cisn + 1,
          static_cast<std::uint8_t>(tcpflag::kSyn | tcpflag::kAck), 0);
    std::uint32_t cseq = cisn + 1;
    const std::uint32_t sseq = sisn + 1;
    t += draw(rng, kMinClientGapUs, 15000);
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, tcpflag::kAck, 0);

    for (std::size_t k = 0; k < pushes; ++k) {
        const std::size_t len = draw(rng, 400, 900);
        t += draw(rng, 12000, 16000);
        b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport,
              cseq, sseq,
              static_cast<std::uint8_t>(tcpflag::kPsh | tcpflag::kAck), len);
        cseq += static_cast<std::uint32_t>(len);
        b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
              sport, sseq, cseq, tcpflag::kAck, 0);
    }

    t += draw(rng, kMinClientGapUs, 15000);
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport, cseq,
          sseq, static_cast<std::uint8_t>(tcpflag::kFin | tcpflag::kAck), 0);
    b.tcp(t + reply(), ep.srv_mac, ep.dev_mac, ep.srv_ip, ep.dev_ip, dport,
          sport, sseq, cseq + 1,
          static_cast<std::uint8_t>(tcpflag::kFin | tcpflag::kAck), 0);
    t += draw(rng, kMinClientGapUs, 15000);
    b.tcp(t, ep.dev_mac, ep.srv_mac, ep.dev_ip, ep.srv_ip, sport, dport,
          cseq + 1, sseq + 1, tcpflag::kAck, 0);
}

} // namespace

SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg) {
    if (cfg.devices < 1) throw std::invalid_argument("synth: need at least 1 device");
    if (cfg.devices > 200) throw std::invalid_argument("synth: at most 200 devices");
    if (cfg.syn_flood_sources < 1) {
        throw std::invalid_argument("synth: need at least 1 flood source");
    }
    for (double share :
         {cfg.keepalive_share, cfg.streaming_share, cfg.telemetry_share}) {
        if (!(share >= 0.0) || share >= 1.0) {
            throw std::invalid_argument("synth: budget shares must be in [0, 1)");
        }
    }
    if (cfg.keepalive_share + cfg.streaming_share + cfg.telemetry_share >= 1.0) {
        throw std::invalid_argument("synth: budget shares must sum below 1");
    }

    SynthCorpus corpus;
    corpus.server_ip = 0x0A000001;    // 10.0.0.1
    corpus.collector_ip = 0x0A000002; // 10.0.0.2
    const MacAddr srv_mac{0x02, 0x10, 0x00, 0x00, 0x00, 0x01};
    const MacAddr col_mac{0x02, 0x10, 0x00, 0x00, 0x00, 0x02};
    for (std::size_t i = 0; i < cfg.devices; ++i) {
        corpus.device_ips.push_back(0x0A00000A + static_cast<std::uint32_t>(i));
        corpus.device_macs.push_back(
            MacAddr{0x02, 0x10, 0x00, 0x00, 0x00, static_cast<std::uint8_t>(0x10 + i)});
    }

    // ---------------- benign capture ----------------
    std::vector<Packet> benign;
    StreamBuilder build{benign};

    const auto scaled = [&](double share) {
        return static_cast<std::size_t>(
            static_cast<double>(cfg.benign_packets) * share);
    };
    const std::size_t keepalive_budget = scaled(cfg.keepalive_share);
    const std::size_t streaming_device = cfg.devices >= 2 ? 1 : SIZE_MAX;
    const std::size_t streaming_budget =
        streaming_device == SIZE_MAX ? 0 : scaled(cfg.streaming_share);
    const std::size_t telemetry_devices = cfg.devices - 1; // all but device 0
    const std::size_t telemetry_budget =
        telemetry_devices == 0 ? 0 : scaled(cfg.telemetry_share);
    const std::size_t rr_devices =
        cfg.devices - 1 - (streaming_device == SIZE_MAX ? 0 : 1);
    const std::size_t rr_total =
        rr_devices == 0 ? 0
                        : cfg.benign_packets - keepalive_budget -
                              streaming_budget - telemetry_budget;

    for (std::size_t dev = 0; dev < cfg.devices; ++dev) {
        Rng rng(derive_seed(cfg.seed, "synth.device", dev));
        const DeviceEndpoints ep{corpus.device_macs[dev], srv_mac,
                                 corpus.device_ips[dev], corpus.server_ip};
        std::uint64_t t = kBaseTsUsec + draw(rng, 0, 500000);
        std::uint16_t next_port = 49152;

        if (dev == 0) {
            const std::size_t pings =
                keepalive_budget > 9 ? (keepalive_budget - 9) / 2 : 1;
            // Zero-length keepalive probes: 54-byte frames, the same size as
            // a flood SYN and its RST, so size statistics cannot separate
            // this device's source address from a flood source.
            emit_heartbeat(build, rng, t, ep, next_port++, 80, pings, 0, 6000,
                           7000);
        } else if (dev == streaming_device) {
            const std::size_t pushes =
                streaming_budget > 9 ? (streaming_budget - 9) / 2 : 1;
            emit_stream(build, rng, t, ep, next_port++, 80, pushes);
        } else {
            const std::size_t budget = rr_total / rr_devices;
            std::size_t emitted = 0;
            while (emitted < budget) {
                const std::size_t rounds = 1 + rng.below(4);
                emitted += emit_connection(build, rng, t, ep, next_port++, 80,
                                           rounds);
                t += draw(rng, 250000, 600000);
            }
        }
    }

    // UDP telemetry: devices other than device 0 report a fixed 12-byte
    // datagram on a slow timer. Frame length is 54 bytes, the same as a bare
    // TCP SYN.
    if (telemetry_devices > 0) {
        const std::size_t per_dev = telemetry_budget / telemetry_devices;
        for (std::size_t dev = 1; dev < cfg.devices; ++dev) {
            Rng rng(derive_seed(cfg.seed, "synth.telemetry", dev));
            std::uint64_t t = kBaseTsUsec + draw(rng, 0, 100000);
            for (std::size_t k = 0; k < per_dev; ++k) {
                build.udp(t, corpus.device_macs[dev], col_mac,
                          corpus.device_ips[dev], corpus.collector_ip,
                          static_cast<std::uint16_t>(30000 + dev), 5005, 12);
                t += draw(rng, 80000, 120000);
            }
        }
    }

    std::stable_sort(benign.begin(), benign.end(),
                     [](const Packet& a, const Packet& b) {
                         return a.ts_usec < b.ts_usec;
                     });

    // Nudge server timestamps off the burst-collision lattice (see
    // ServerClock). Shifts are a few microseconds at most, far below the
    // 5+ ms gap to the next client packet of any conversation, so ordering
    // within every stream is preserved.
    {
        ServerClock clock;
        for (Packet& p : benign) {
            if (p.ip && p.ip->src == corpus.server_ip) {
                p.ts_usec = clock.place(p.ts_usec);
            }
        }
        std::stable_sort(benign.begin(), benign.end(),
                         [](const Packet& a, const Packet& b) {
                             return a.ts_usec < b.ts_usec;
                         });
    }

    corpus.benign.packets = std::move(benign);

    // ---------------- SYN flood ----------------
    // Closed-port flood: every SYN draws a server RST|ACK within a
    // millisecond. Each source keeps one fixed source port; the RST closes
    // the conversation, so the next SYN reopens the same tuple cleanly.
    {
        std::vector<Packet> flood;
        StreamBuilder fb{flood};
        Rng rng(derive_seed(cfg.seed, "synth.synflood"));
        const std::size_t per_source =
            cfg.syn_flood_packets / cfg.syn_flood_sources;
        const std::size_t syns_per_source = per_source > 1 ? per_source / 2 : 1;
        std::uint64_t t = kBaseTsUsec;
        for (std::size_t s = 0; s < cfg.syn_flood_sources; ++s) {
            const std::uint32_t sip = 0x0A000901 + static_cast<std::uint32_t>(s);
            corpus.syn_flood_source_ips.push_back(sip);
            const MacAddr smac{0x02, 0x99, 0x00, 0x00, 0x00,
                               static_cast<std::uint8_t>(s + 1)};
            const auto sport = static_cast<std::uint16_t>(40000 + s);
            for (std::size_t k = 0; k < syns_per_source; ++k) {
                const std::uint32_t isn = rng.next_u32();
                fb.tcp(t, smac, srv_mac, sip, corpus.server_ip, sport,
                       kFloodPort, isn, 0, tcpflag::kSyn, 0);
                fb.tcp(t + draw(rng, kReplyMinUs, kReplyMaxUs), srv_mac, smac,
                       corpus.server_ip, sip, kFloodPort, sport, 0, isn + 1,
                       static_cast<std::uint8_t>(tcpflag::kRst | tcpflag::kAck),
                       0);
                t += draw(rng, 15000, 17000);
            }
        }
        std::stable_sort(flood.begin(), flood.end(),
                         [](const Packet& a, const Packet& b) {
                             return a.ts_usec < b.ts_usec;
                         });
        corpus.syn_flood.packets = std::move(flood);
    }

    // ---------------- UDP flood ----------------
    {
        std::vector<Packet> flood;
        StreamBuilder fb{flood};
        Rng rng(derive_seed(cfg.seed, "synth.udpflood"));
        corpus.udp_flood_source_ip = 0x0A0009FA; // 10.0.9.250
        const MacAddr smac{0x02, 0x99, 0x00, 0x00, 0x00, 0xFA};
        std::uint64_t t = kBaseTsUsec;
        for (std::size_t k = 0; k < cfg.udp_flood_packets; ++k) {
            fb.udp(t, smac, srv_mac, corpus.udp_flood_source_ip,
                   corpus.server_ip, 40000, 80, 1000);
            t += draw(rng, 4000, 6000);
        }
        corpus.udp_flood.packets = std::move(flood);
    }

    return corpus;
}

Trace filter_by_host(const Trace& trace, std::uint32_t host) {
    Trace out;
    out.snap_len = trace.snap_len;
    out.link_type = trace.link_type;
    for (const Packet& p : trace.packets) {
        if (p.ip && (p.ip->src == host || p.ip->dst == host)) {
            out.packets.push_back(p);
        }
    }
    return out;
}

} // namespace poisoncap

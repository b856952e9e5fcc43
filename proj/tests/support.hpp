#pragma once

// Shared test helpers: unique temp directories, quick packet construction,
// file slurping, and an independent frame-level checksum verifier. The
// verifier re-reads raw frame bytes and checks the RFC 1071 invariant (the
// one's-complement sum over a region that includes its checksum field folds
// to 0xFFFF), so it shares no code with the library's checksum generators.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "poisoncap/pcap.hpp"
#include "poisoncap/rng.hpp"

namespace testsupport {

class TempDir {
  public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::filesystem::path candidate =
                base / ("poisoncap-test-" + std::to_string(::getpid()) + "-" +
                        std::to_string(counter_++));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("cannot create a temp directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

  private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline poisoncap::MacAddr mac_of(std::uint8_t last) {
    return {0x02, 0x00, 0x00, 0x00, 0x00, last};
}

// A checksummed TCP packet; every unset field takes the struct default.
inline poisoncap::Packet make_tcp(std::uint64_t ts, std::uint32_t src_ip,
                                  std::uint32_t dst_ip, std::uint16_t sport,
                                  std::uint16_t dport, std::uint8_t flags,
                                  std::uint32_t seq, std::uint32_t ack,
                                  std::size_t payload_len = 0) {
    poisoncap::Packet p;
    p.ts_usec = ts;
    p.src_mac = mac_of(static_cast<std::uint8_t>(src_ip & 0xff));
    p.dst_mac = mac_of(static_cast<std::uint8_t>(dst_ip & 0xff));
    p.ethertype = 0x0800;
    poisoncap::Ipv4Header ip;
    ip.protocol = 6;
    ip.src = src_ip;
    ip.dst = dst_ip;
    p.ip = ip;
    poisoncap::TcpHeader tcp;
    tcp.src_port = sport;
    tcp.dst_port = dport;
    tcp.flags = flags;
    tcp.seq = seq;
    tcp.ack = ack;
    tcp.window = 64240;
    p.transport = tcp;
    p.payload.assign(payload_len, 0xab);
    return poisoncap::fix_packet(p);
}

inline poisoncap::Packet make_udp(std::uint64_t ts, std::uint32_t src_ip,
                                  std::uint32_t dst_ip, std::uint16_t sport,
                                  std::uint16_t dport, std::size_t payload_len = 8) {
    poisoncap::Packet p;
    p.ts_usec = ts;
    p.src_mac = mac_of(static_cast<std::uint8_t>(src_ip & 0xff));
    p.dst_mac = mac_of(static_cast<std::uint8_t>(dst_ip & 0xff));
    p.ethertype = 0x0800;
    poisoncap::Ipv4Header ip;
    ip.protocol = 17;
    ip.src = src_ip;
    ip.dst = dst_ip;
    p.ip = ip;
    poisoncap::UdpHeader udp;
    udp.src_port = sport;
    udp.dst_port = dport;
    p.transport = udp;
    p.payload.assign(payload_len, 0xcd);
    return poisoncap::fix_packet(p);
}

// Randomized small capture: mixed TCP/UDP/opaque-IPv4/non-IP traffic over a
// shared four-address pool (so reverse-direction packets actually occur),
// sorted timestamps with occasional exact ties.
inline poisoncap::Trace random_trace(poisoncap::Rng& rng, std::size_t min_packets,
                                     std::size_t max_packets) {
    using namespace poisoncap;
    static const std::array<std::uint32_t, 4> pool = {0x0a000001, 0x0a000002,
                                                      0x0a000003, 0x0a000004};
    Trace t;
    std::vector<Packet> replies; // same-flow answers, merged by time below
    std::uint64_t now = 1000 + rng.below(1000);
    const std::size_t n = min_packets + rng.below(max_packets - min_packets + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t src = pool[rng.below(pool.size())];
        const std::uint32_t dst = pool[rng.below(pool.size())];
        const std::uint64_t roll = rng.below(100);
        // Wide random ports: every flow gets its own endpoints, the way
        // distinct connections do in practice. (Tests that need deep
        // per-socket histories build dedicated fixed-socket traces instead.)
        const std::uint16_t sp = static_cast<std::uint16_t>(1024 + rng.below(60000));
        const std::uint16_t dp = static_cast<std::uint16_t>(1 + rng.below(1024));
        if (roll < 55) {
            t.packets.push_back(make_tcp(now, src, dst, sp, dp,
                                         tcpflag::kAck | tcpflag::kPsh,
                                         rng.next_u32(), rng.next_u32(),
                                         rng.below(120)));
        } else if (roll < 80) {
            t.packets.push_back(make_udp(now, src, dst, sp, dp, rng.below(200)));
        } else if (roll < 90) {
            Packet p;
            p.ts_usec = now;
            p.src_mac = mac_of(static_cast<std::uint8_t>(src & 0xff));
            p.dst_mac = mac_of(static_cast<std::uint8_t>(dst & 0xff));
            p.ethertype = 0x0800;
            Ipv4Header ip;
            ip.protocol = 47;
            ip.src = src;
            ip.dst = dst;
            p.ip = ip;
            p.payload.assign(4 + rng.below(40), 0x55);
            t.packets.push_back(fix_packet(p));
        } else {
            Packet p;
            p.ts_usec = now;
            p.src_mac = mac_of(static_cast<std::uint8_t>(src & 0xff));
            p.dst_mac = {0xff, 0xff, 0xff, 0xff, 0xff, 0xff};
            p.ethertype = 0x0806;
            p.payload.assign(28, 0x22);
            t.packets.push_back(p);
        }
        // A quarter of the TCP/UDP packets get answered on the same flow —
        // swapped addresses and ports, same transport — at a lag that
        // sometimes falls inside and sometimes outside a typical
        // reverse-packet window.
        if (roll < 80 && rng.below(4) == 0) {
            const std::uint64_t lag = 1 + rng.below(150'000);
            if (roll < 55) {
                replies.push_back(make_tcp(now + lag, dst, src, dp, sp,
                                           tcpflag::kAck, rng.next_u32(),
                                           rng.next_u32(), rng.below(120)));
            } else {
                replies.push_back(
                    make_udp(now + lag, dst, src, dp, sp, rng.below(200)));
            }
        }
        if (rng.below(10) != 0) // occasional exact timestamp ties
            now += rng.below(2) ? rng.below(2200) : rng.below(50000);
    }
    // Merge the replies into timestamp order (stable: mainline packets sort
    // ahead of replies on ties).
    for (Packet& r : replies) t.packets.push_back(std::move(r));
    std::stable_sort(t.packets.begin(), t.packets.end(),
                     [](const Packet& a, const Packet& b) {
                         return a.ts_usec < b.ts_usec;
                     });
    return t;
}

// ---------------------------------------------------------------------------
// Independent checksum verification over raw frame bytes.

struct ChecksumVerdict {
    bool is_ipv4 = false;
    bool ip_ok = false;
    bool has_l4 = false;   // TCP or UDP present and fully inside the frame
    bool l4_ok = false;    // checksum verifies (or UDP checksum disabled)
};

// Folds a big-endian 16-bit one's-complement sum over [begin, end); an odd
// trailing byte is padded with zero on the right, per RFC 1071.
inline std::uint32_t ones_sum(const std::uint8_t* begin, const std::uint8_t* end,
                              std::uint32_t acc = 0) {
    std::uint64_t sum = acc;
    while (begin + 1 < end) {
        sum += (static_cast<std::uint32_t>(begin[0]) << 8) | begin[1];
        begin += 2;
    }
    if (begin < end) sum += static_cast<std::uint32_t>(begin[0]) << 8;
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<std::uint32_t>(sum);
}

inline ChecksumVerdict verify_frame_checksums(const poisoncap::Bytes& frame) {
    ChecksumVerdict v;
    if (frame.size() < 34) return v;
    const std::uint16_t ethertype =
        static_cast<std::uint16_t>((frame[12] << 8) | frame[13]);
    if (ethertype != 0x0800) return v;
    const std::uint8_t* ip = frame.data() + 14;
    if ((ip[0] >> 4) != 4) return v;
    const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if (ihl < 20 || 14 + ihl > frame.size()) return v;
    v.is_ipv4 = true;
    // A valid header sums (checksum field included) to 0xFFFF.
    v.ip_ok = ones_sum(ip, ip + ihl) == 0xffff;

    const std::uint16_t total_len = static_cast<std::uint16_t>((ip[2] << 8) | ip[3]);
    const std::uint8_t proto = ip[9];
    if ((proto != 6 && proto != 17) || total_len < ihl) return v;
    const std::size_t l4_len = total_len - ihl;
    if (14 + ihl + l4_len > frame.size()) return v;
    const std::uint8_t* l4 = ip + ihl;
    v.has_l4 = true;

    if (proto == 17 && l4_len >= 8) {
        const std::uint16_t stored =
            static_cast<std::uint16_t>((l4[6] << 8) | l4[7]);
        if (stored == 0) { // checksum disabled is legal for UDP
            v.l4_ok = true;
            return v;
        }
    }
    // Pseudo header: src, dst, zero+protocol, L4 length.
    std::uint8_t pseudo[12];
    for (int i = 0; i < 8; ++i) pseudo[i] = ip[12 + i];
    pseudo[8] = 0;
    pseudo[9] = proto;
    pseudo[10] = static_cast<std::uint8_t>(l4_len >> 8);
    pseudo[11] = static_cast<std::uint8_t>(l4_len & 0xff);
    std::uint32_t sum = ones_sum(pseudo, pseudo + 12);
    sum = ones_sum(l4, l4 + l4_len, sum);
    v.l4_ok = sum == 0xffff;
    return v;
}

} // namespace testsupport

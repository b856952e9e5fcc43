#include "poisoncap/pcap.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

namespace poisoncap {

namespace {

constexpr std::uint32_t kMagicLe = 0xa1b2c3d4u;
constexpr std::uint32_t kMagicBe = 0xd4c3b2a1u;

void put_u16be(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

void put_u32be(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

std::uint16_t get_u16be(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) |
           (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) |
           static_cast<std::uint32_t>(p[3]);
}

} // namespace

// ---------------------------------------------------------------------------
// Addresses

std::string ipv4_to_string(std::uint32_t addr) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (addr >> 24) & 0xff,
                  (addr >> 16) & 0xff, (addr >> 8) & 0xff, addr & 0xff);
    return buf;
}

std::uint32_t parse_ipv4(const std::string& dotted) {
    unsigned a, b, c, d;
    char tail;
    if (std::sscanf(dotted.c_str(), "%u.%u.%u.%u%c", &a, &b, &c, &d, &tail) != 4 ||
        a > 255 || b > 255 || c > 255 || d > 255) {
        throw PcapError("bad IPv4 address: " + dotted);
    }
    return (a << 24) | (b << 16) | (c << 8) | d;
}

std::string mac_to_string(const MacAddr& mac) {
    char buf[18];
    std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x:%02x:%02x", mac[0],
                  mac[1], mac[2], mac[3], mac[4], mac[5]);
    return buf;
}

MacAddr parse_mac(const std::string& text) {
    unsigned b[6];
    char tail;
    if (std::sscanf(text.c_str(), "%x:%x:%x:%x:%x:%x%c", &b[0], &b[1], &b[2],
                    &b[3], &b[4], &b[5], &tail) != 6) {
        throw PcapError("bad MAC address: " + text);
    }
    MacAddr mac{};
    for (int i = 0; i < 6; ++i) {
        if (b[i] > 255) throw PcapError("bad MAC address: " + text);
        mac[i] = static_cast<std::uint8_t>(b[i]);
    }
    return mac;
}

// ---------------------------------------------------------------------------
// Frame serialization

Bytes serialize_frame(const Packet& p) {
    if (p.raw_frame) return p.payload;

    Bytes out;
    out.reserve(14 + (p.ip ? p.ip->total_length : p.payload.size()) + p.trailer.size());
    out.insert(out.end(), p.dst_mac.begin(), p.dst_mac.end());
    out.insert(out.end(), p.src_mac.begin(), p.src_mac.end());
    put_u16be(out, p.ethertype);

    if (!p.ip) {
        out.insert(out.end(), p.payload.begin(), p.payload.end());
        out.insert(out.end(), p.trailer.begin(), p.trailer.end());
        return out;
    }

    const Ipv4Header& ip = *p.ip;
    const std::uint8_t ihl = static_cast<std::uint8_t>(ip.header_len() / 4);
    out.push_back(static_cast<std::uint8_t>(0x40 | ihl));
    out.push_back(ip.tos);
    put_u16be(out, ip.total_length);
    put_u16be(out, ip.identification);
    put_u16be(out, ip.flags_fragment);
    out.push_back(ip.ttl);
    out.push_back(ip.protocol);
    put_u16be(out, ip.header_checksum);
    put_u32be(out, ip.src);
    put_u32be(out, ip.dst);
    out.insert(out.end(), ip.options.begin(), ip.options.end());

    if (const TcpHeader* tcp = p.tcp()) {
        put_u16be(out, tcp->src_port);
        put_u16be(out, tcp->dst_port);
        put_u32be(out, tcp->seq);
        put_u32be(out, tcp->ack);
        const std::uint8_t doff = static_cast<std::uint8_t>(tcp->header_len() / 4);
        out.push_back(static_cast<std::uint8_t>(doff << 4));
        out.push_back(tcp->flags);
        put_u16be(out, tcp->window);
        put_u16be(out, tcp->checksum);
        put_u16be(out, tcp->urgent);
        out.insert(out.end(), tcp->options.begin(), tcp->options.end());
    } else if (const UdpHeader* udp = p.udp()) {
        put_u16be(out, udp->src_port);
        put_u16be(out, udp->dst_port);
        put_u16be(out, udp->length);
        put_u16be(out, udp->checksum);
    }
    out.insert(out.end(), p.payload.begin(), p.payload.end());
    out.insert(out.end(), p.trailer.begin(), p.trailer.end());
    return out;
}

std::size_t frame_size(const Packet& p) { return serialize_frame(p).size(); }

// ---------------------------------------------------------------------------
// Frame parsing

namespace {

Packet opaque_after_eth(Packet p, const Bytes& frame) {
    p.ip.reset();
    p.transport = OpaqueTransport{};
    p.payload.assign(frame.begin() + 14, frame.end());
    p.trailer.clear();
    return p;
}

} // namespace

Packet parse_frame(std::uint64_t ts_usec, const Bytes& frame, std::uint32_t link_type) {
    Packet p;
    p.ts_usec = ts_usec;

    if (link_type != 1 || frame.size() < 14) {
        p.raw_frame = true;
        p.payload = frame;
        return p;
    }

    std::copy_n(frame.begin(), 6, p.dst_mac.begin());
    std::copy_n(frame.begin() + 6, 6, p.src_mac.begin());
    p.ethertype = get_u16be(frame.data() + 12);

    if (p.ethertype != 0x0800) return opaque_after_eth(std::move(p), frame);

    // IPv4 sanity gauntlet; any failure keeps the frame as opaque bytes.
    if (frame.size() < 14 + 20) return opaque_after_eth(std::move(p), frame);
    const std::uint8_t* b = frame.data() + 14;
    const std::uint8_t version = b[0] >> 4;
    const std::size_t ihl = static_cast<std::size_t>(b[0] & 0x0f) * 4;
    if (version != 4 || ihl < 20) return opaque_after_eth(std::move(p), frame);
    const std::uint16_t total_length = get_u16be(b + 2);
    if (total_length < ihl || 14 + ihl > frame.size() ||
        14 + total_length > frame.size()) {
        return opaque_after_eth(std::move(p), frame);
    }

    Ipv4Header ip;
    ip.tos = b[1];
    ip.total_length = total_length;
    ip.identification = get_u16be(b + 4);
    ip.flags_fragment = get_u16be(b + 6);
    ip.ttl = b[8];
    ip.protocol = b[9];
    ip.header_checksum = get_u16be(b + 10);
    ip.src = get_u32be(b + 12);
    ip.dst = get_u32be(b + 16);
    ip.options.assign(b + 20, b + ihl);
    p.ip = std::move(ip);
    p.trailer.assign(frame.begin() + 14 + total_length, frame.end());

    const std::uint8_t* l4 = b + ihl;
    const std::size_t l4_len = total_length - ihl;

    auto keep_opaque = [&]() {
        p.transport = OpaqueTransport{};
        p.payload.assign(l4, l4 + l4_len);
        return p;
    };

    if (p.ip->protocol == 6) {
        if (l4_len < 20) return keep_opaque();
        const std::size_t doff = static_cast<std::size_t>(l4[12] >> 4) * 4;
        if (doff < 20 || doff > l4_len) return keep_opaque();
        TcpHeader tcp;
        tcp.src_port = get_u16be(l4);
        tcp.dst_port = get_u16be(l4 + 2);
        tcp.seq = get_u32be(l4 + 4);
        tcp.ack = get_u32be(l4 + 8);
        tcp.flags = l4[13];
        tcp.window = get_u16be(l4 + 14);
        tcp.checksum = get_u16be(l4 + 16);
        tcp.urgent = get_u16be(l4 + 18);
        tcp.options.assign(l4 + 20, l4 + doff);
        p.transport = std::move(tcp);
        p.payload.assign(l4 + doff, l4 + l4_len);
        return p;
    }
    if (p.ip->protocol == 17) {
        if (l4_len < 8) return keep_opaque();
        UdpHeader udp;
        udp.src_port = get_u16be(l4);
        udp.dst_port = get_u16be(l4 + 2);
        udp.length = get_u16be(l4 + 4);
        udp.checksum = get_u16be(l4 + 6);
        if (udp.length < 8 || udp.length > l4_len) return keep_opaque();
        // Bytes between udp.length and the IP payload end would be lost on
        // re-serialization, so only a clean fit is parsed structurally.
        if (udp.length != l4_len) return keep_opaque();
        p.transport = udp;
        p.payload.assign(l4 + 8, l4 + l4_len);
        return p;
    }
    return keep_opaque();
}

// ---------------------------------------------------------------------------
// Checksums

std::uint16_t rfc1071_checksum(const std::uint8_t* data, std::size_t len) {
    std::uint64_t sum = 0;
    std::size_t i = 0;
    for (; i + 1 < len; i += 2) {
        sum += static_cast<std::uint64_t>((data[i] << 8) | data[i + 1]);
    }
    if (i < len) sum += static_cast<std::uint64_t>(data[i]) << 8;
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum & 0xffff);
}

std::uint16_t ipv4_header_checksum(const Ipv4Header& ip) {
    Ipv4Header tmp = ip;
    tmp.header_checksum = 0;
    Bytes hdr;
    const std::uint8_t ihl = static_cast<std::uint8_t>(tmp.header_len() / 4);
    hdr.push_back(static_cast<std::uint8_t>(0x40 | ihl));
    hdr.push_back(tmp.tos);
    put_u16be(hdr, tmp.total_length);
    put_u16be(hdr, tmp.identification);
    put_u16be(hdr, tmp.flags_fragment);
    hdr.push_back(tmp.ttl);
    hdr.push_back(tmp.protocol);
    put_u16be(hdr, 0);
    put_u32be(hdr, tmp.src);
    put_u32be(hdr, tmp.dst);
    hdr.insert(hdr.end(), tmp.options.begin(), tmp.options.end());
    return rfc1071_checksum(hdr.data(), hdr.size());
}

std::uint16_t transport_checksum(const Packet& p) {
    if (!p.ip || (!p.tcp() && !p.udp())) {
        throw PcapError("transport_checksum: packet has no parsed TCP/UDP layer");
    }
    const Ipv4Header& ip = *p.ip;
    Bytes buf;
    // Pseudo-header: src, dst, zero, protocol, transport length.
    put_u32be(buf, ip.src);
    put_u32be(buf, ip.dst);
    buf.push_back(0);
    buf.push_back(ip.protocol);

    if (const TcpHeader* tcp = p.tcp()) {
        const std::uint16_t seg_len =
            static_cast<std::uint16_t>(tcp->header_len() + p.payload.size());
        put_u16be(buf, seg_len);
        put_u16be(buf, tcp->src_port);
        put_u16be(buf, tcp->dst_port);
        put_u32be(buf, tcp->seq);
        put_u32be(buf, tcp->ack);
        buf.push_back(static_cast<std::uint8_t>((tcp->header_len() / 4) << 4));
        buf.push_back(tcp->flags);
        put_u16be(buf, tcp->window);
        put_u16be(buf, 0);
        put_u16be(buf, tcp->urgent);
        buf.insert(buf.end(), tcp->options.begin(), tcp->options.end());
    } else {
        const UdpHeader* udp = p.udp();
        const std::uint16_t seg_len =
            static_cast<std::uint16_t>(8 + p.payload.size());
        put_u16be(buf, seg_len);
        put_u16be(buf, udp->src_port);
        put_u16be(buf, udp->dst_port);
        put_u16be(buf, seg_len);
        put_u16be(buf, 0);
    }
    buf.insert(buf.end(), p.payload.begin(), p.payload.end());
    std::uint16_t sum = rfc1071_checksum(buf.data(), buf.size());
    if (p.udp() && sum == 0) sum = 0xffff; // 0 means "no checksum" for UDP
    return sum;
}

Packet fix_packet(const Packet& p) {
    Packet out = p;
    if (out.raw_frame || !out.ip) return out;

    Ipv4Header& ip = *out.ip;
    std::size_t l4_len = out.payload.size();
    if (const TcpHeader* tcp = out.tcp()) l4_len += tcp->header_len();
    if (out.udp()) l4_len += 8;
    ip.total_length = static_cast<std::uint16_t>(ip.header_len() + l4_len);

    if (UdpHeader* udp = out.udp()) {
        udp->length = static_cast<std::uint16_t>(8 + out.payload.size());
    }
    ip.header_checksum = ipv4_header_checksum(ip);
    if (TcpHeader* tcp = out.tcp()) {
        tcp->checksum = 0;
        tcp->checksum = transport_checksum(out);
    } else if (UdpHeader* udp = out.udp()) {
        udp->checksum = 0;
        udp->checksum = transport_checksum(out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trace I/O

namespace {

struct Reader {
    const Bytes& data;
    std::size_t pos = 0;
    bool swapped = false;

    bool need(std::size_t n) const { return pos + n <= data.size(); }

    std::uint32_t u32() {
        const std::uint8_t* p = data.data() + pos;
        pos += 4;
        std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
        if (swapped) {
            v = ((v & 0x000000ffu) << 24) | ((v & 0x0000ff00u) << 8) |
                ((v & 0x00ff0000u) >> 8) | ((v & 0xff000000u) >> 24);
        }
        return v;
    }

    std::uint16_t u16() {
        const std::uint8_t* p = data.data() + pos;
        pos += 2;
        std::uint16_t v =
            static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        if (swapped) v = static_cast<std::uint16_t>((v << 8) | (v >> 8));
        return v;
    }
};

void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16le(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

} // namespace

Trace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PcapError("cannot open " + path);
    Bytes data{std::istreambuf_iterator<char>(in),
               std::istreambuf_iterator<char>()};

    if (data.size() < 24) throw PcapError(path + ": truncated global header");
    Reader r{data};
    const std::uint32_t magic = r.u32();
    if (magic == kMagicLe) {
        r.swapped = false;
    } else if (magic == kMagicBe) {
        r.swapped = true;
    } else {
        throw PcapError(path + ": not a classic PCAP file (bad magic)");
    }
    r.u16(); // version major
    r.u16(); // version minor
    r.u32(); // thiszone
    r.u32(); // sigfigs

    Trace trace;
    trace.snap_len = r.u32();
    trace.link_type = r.u32();

    std::size_t index = 0;
    while (r.pos < data.size()) {
        if (!r.need(16)) {
            throw TruncatedCaptureError(path + ": record " +
                                        std::to_string(index) +
                                        ": short record header");
        }
        const std::uint32_t ts_sec = r.u32();
        const std::uint32_t ts_usec = r.u32();
        const std::uint32_t incl_len = r.u32();
        const std::uint32_t orig_len = r.u32();
        if (!r.need(incl_len)) {
            throw TruncatedCaptureError(path + ": record " +
                                        std::to_string(index) +
                                        ": body shorter than incl_len");
        }
        Bytes frame(data.begin() + static_cast<std::ptrdiff_t>(r.pos),
                    data.begin() + static_cast<std::ptrdiff_t>(r.pos + incl_len));
        r.pos += incl_len;

        Packet p = parse_frame(
            static_cast<std::uint64_t>(ts_sec) * 1000000ull + ts_usec, frame,
            trace.link_type);
        p.orig_len = (orig_len == incl_len) ? 0 : orig_len;
        trace.packets.push_back(std::move(p));
        ++index;
    }
    return trace;
}

void write_trace(const std::string& path, const Trace& trace) {
    if (trace.link_type != 1) {
        throw PcapError("write_trace: only Ethernet (link type 1) is supported");
    }

    std::vector<const Packet*> order;
    order.reserve(trace.packets.size());
    for (const Packet& p : trace.packets) order.push_back(&p);
    std::stable_sort(order.begin(), order.end(),
                     [](const Packet* a, const Packet* b) {
                         return a->ts_usec < b->ts_usec;
                     });

    std::string out;
    put_u32le(out, kMagicLe);
    put_u16le(out, 2);
    put_u16le(out, 4);
    put_u32le(out, 0); // thiszone
    put_u32le(out, 0); // sigfigs
    put_u32le(out, trace.snap_len);
    put_u32le(out, trace.link_type);

    std::size_t index = 0;
    for (const Packet* p : order) {
        Bytes frame = serialize_frame(*p);
        if (frame.size() > trace.snap_len) {
            throw PcapError("write_trace: record " + std::to_string(index) +
                            " exceeds snap_len (" + std::to_string(frame.size()) +
                            " > " + std::to_string(trace.snap_len) + ")");
        }
        put_u32le(out, static_cast<std::uint32_t>(p->ts_usec / 1000000ull));
        put_u32le(out, static_cast<std::uint32_t>(p->ts_usec % 1000000ull));
        put_u32le(out, static_cast<std::uint32_t>(frame.size()));
        put_u32le(out, p->orig_len ? p->orig_len
                                   : static_cast<std::uint32_t>(frame.size()));
        out.append(reinterpret_cast<const char*>(frame.data()), frame.size());
        ++index;
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw PcapError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw PcapError("short write to " + path);
}

} // namespace poisoncap

#include "poisoncap/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace poisoncap {

// ---------------------------------------------------------------------------
// Damped statistics

void DampedStat1D::decay_to(std::uint64_t t_usec, double lambda) {
    if (!seen) {
        last_update = t_usec;
        seen = true;
        return;
    }
    if (t_usec < last_update) {
        throw FeatureError("damped stat updated backwards in time");
    }
    if (t_usec > last_update) {
        const double dt = static_cast<double>(t_usec - last_update) * 1e-6;
        const double factor = std::exp2(-lambda * dt);
        w *= factor;
        ls *= factor;
        ss *= factor;
        last_update = t_usec;
    }
}

void DampedStat1D::update(double value, std::uint64_t t_usec, double lambda) {
    decay_to(t_usec, lambda);
    w += 1.0;
    ls += value;
    ss += value * value;
}

double DampedStat1D::variance() const {
    if (w <= 0.0) return 0.0;
    const double m = ls / w;
    return std::fabs(ss / w - m * m);
}

double DampedStat1D::stddev() const { return std::sqrt(variance()); }

void DampedStat2D::update(int side, double value, std::uint64_t t_usec,
                          double lambda) {
    half[side].update(value, t_usec, lambda);

    if (!cov_seen) {
        cov_last_update = t_usec;
        cov_seen = true;
    } else {
        if (t_usec < cov_last_update) {
            throw FeatureError("damped stat updated backwards in time");
        }
        const double dt = static_cast<double>(t_usec - cov_last_update) * 1e-6;
        const double factor = std::exp2(-lambda * dt);
        sr *= factor;
        w3 *= factor;
        cov_last_update = t_usec;
    }

    const double res = value - half[side].mean();
    sr += res * last_res[1 - side];
    w3 += 1.0;
    last_res[side] = res;
}

double DampedStat2D::correlation() const {
    const double denom = half[0].stddev() * half[1].stddev();
    if (denom == 0.0) return 0.0;
    return covariance() / denom;
}

double DampedStat2D::magnitude() const {
    const double ma = half[0].mean();
    const double mb = half[1].mean();
    return std::sqrt(ma * ma + mb * mb);
}

double DampedStat2D::radius() const {
    const double va = half[0].variance();
    const double vb = half[1].variance();
    return std::sqrt(va * va + vb * vb);
}

// ---------------------------------------------------------------------------
// Keys

namespace {

using MacIpKey = std::pair<std::array<std::uint8_t, 6>, std::uint32_t>;
using ChannelKey = std::pair<std::uint32_t, std::uint32_t>;       // unordered
using DirChannelKey = std::pair<std::uint32_t, std::uint32_t>;    // directed
using SocketEnd = std::pair<std::uint32_t, std::uint16_t>;
using SocketKey = std::pair<SocketEnd, SocketEnd>; // unordered

} // namespace

struct FeatureExtractor::Impl {
    std::map<MacIpKey, std::array<DampedStat1D, 5>> mac_ip;
    std::map<std::uint32_t, std::array<DampedStat1D, 5>> src_ip;
    std::map<ChannelKey, std::array<DampedStat2D, 5>> channel;
    std::map<SocketKey, std::array<DampedStat2D, 5>> socket;
    std::map<DirChannelKey, std::array<DampedStat1D, 5>> jitter;
    std::map<DirChannelKey, std::uint64_t> last_arrival;
};

FeatureExtractor::FeatureExtractor() : impl_(std::make_shared<Impl>()) {}

bool FeatureExtractor::consume(const Packet& p, std::vector<double>& row) {
    if (!p.is_ipv4()) return false;

    const double size = static_cast<double>(frame_size(p));
    const std::uint64_t t = p.ts_usec;
    const std::uint32_t src = p.ip->src;
    const std::uint32_t dst = p.ip->dst;

    std::uint16_t sport = 0, dport = 0;
    if (const TcpHeader* tcp = p.tcp()) {
        sport = tcp->src_port;
        dport = tcp->dst_port;
    } else if (const UdpHeader* udp = p.udp()) {
        sport = udp->src_port;
        dport = udp->dst_port;
    }

    auto& mac_ip = impl_->mac_ip[{p.src_mac, src}];
    auto& src_stats = impl_->src_ip[src];

    const ChannelKey ch_key = src <= dst ? ChannelKey{src, dst} : ChannelKey{dst, src};
    const int ch_side = src <= dst ? 0 : 1;
    auto& channel = impl_->channel[ch_key];

    const SocketEnd a{src, sport}, b{dst, dport};
    const SocketKey sock_key = a <= b ? SocketKey{a, b} : SocketKey{b, a};
    const int sock_side = a <= b ? 0 : 1;
    auto& socket = impl_->socket[sock_key];

    const DirChannelKey dir_key{src, dst};
    auto& jitter = impl_->jitter[dir_key];
    auto arrival = impl_->last_arrival.find(dir_key);
    const bool have_gap = arrival != impl_->last_arrival.end();
    double gap_sec = 0.0;
    if (have_gap) {
        if (t < arrival->second) {
            throw FeatureError("packets out of time order at jitter update");
        }
        gap_sec = static_cast<double>(t - arrival->second) * 1e-6;
    }

    row.resize(kFullWidth);
    std::size_t col = 0;
    for (std::size_t r = 0; r < kDecayRates.size(); ++r) {
        const double lambda = kDecayRates[r];

        mac_ip[r].update(size, t, lambda);
        row[col++] = mac_ip[r].w;
        row[col++] = mac_ip[r].mean();
        row[col++] = mac_ip[r].stddev();

        src_stats[r].update(size, t, lambda);
        row[col++] = src_stats[r].w;
        row[col++] = src_stats[r].mean();
        row[col++] = src_stats[r].stddev();

        channel[r].update(ch_side, size, t, lambda);
        row[col++] = channel[r].half[ch_side].w;
        row[col++] = channel[r].half[ch_side].mean();
        row[col++] = channel[r].half[ch_side].stddev();
        row[col++] = channel[r].magnitude();
        row[col++] = channel[r].radius();
        row[col++] = channel[r].covariance();
        row[col++] = channel[r].correlation();

        socket[r].update(sock_side, size, t, lambda);
        row[col++] = socket[r].half[sock_side].w;
        row[col++] = socket[r].half[sock_side].mean();
        row[col++] = socket[r].half[sock_side].stddev();
        row[col++] = socket[r].magnitude();
        row[col++] = socket[r].radius();
        row[col++] = socket[r].covariance();
        row[col++] = socket[r].correlation();

        if (have_gap) jitter[r].update(gap_sec, t, lambda);
        row[col++] = jitter[r].w;
        row[col++] = jitter[r].mean();
        row[col++] = jitter[r].stddev();
    }
    impl_->last_arrival[dir_key] = t;
    return true;
}

// ---------------------------------------------------------------------------
// Column layout

namespace {

struct ColumnSpec {
    const char* key;
    const char* stat;
};

constexpr ColumnSpec kColumns[kStatsPerRate] = {
    {"srcmac_ip", "w"}, {"srcmac_ip", "mean"}, {"srcmac_ip", "std"},
    {"srcip", "w"},     {"srcip", "mean"},     {"srcip", "std"},
    {"channel", "w"},   {"channel", "mean"},   {"channel", "std"},
    {"channel", "mag"}, {"channel", "radius"}, {"channel", "cov"},
    {"channel", "corr"},
    {"socket", "w"},    {"socket", "mean"},    {"socket", "std"},
    {"socket", "mag"},  {"socket", "radius"},  {"socket", "cov"},
    {"socket", "corr"},
    {"jitter", "w"},    {"jitter", "mean"},    {"jitter", "std"},
};

const char* rate_token(std::size_t r) {
    static const char* tokens[] = {"5", "3", "1", "0.1", "0.01"};
    return tokens[r];
}

std::vector<std::size_t> subset_indices(FeatureSet fs) {
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < kDecayRates.size(); ++r) {
        for (std::size_t c = 0; c < kStatsPerRate; ++c) {
            const std::string key = kColumns[c].key;
            const std::string stat = kColumns[c].stat;
            bool keep = false;
            switch (fs) {
                case FeatureSet::All: keep = true; break;
                case FeatureSet::Jitter: keep = key == "jitter"; break;
                case FeatureSet::Socket: keep = key == "socket"; break;
                case FeatureSet::Size:
                    keep = key == "srcmac_ip" || key == "srcip" ||
                           (key == "channel" && (stat == "mean" || stat == "std"));
                    break;
            }
            if (keep) idx.push_back(r * kStatsPerRate + c);
        }
    }
    return idx;
}

} // namespace

FeatureSet parse_feature_set(const std::string& name) {
    if (name == "jitter") return FeatureSet::Jitter;
    if (name == "size") return FeatureSet::Size;
    if (name == "socket") return FeatureSet::Socket;
    if (name == "all") return FeatureSet::All;
    throw FeatureError("unknown feature set: " + name);
}

const char* to_string(FeatureSet fs) {
    switch (fs) {
        case FeatureSet::Jitter: return "jitter";
        case FeatureSet::Size: return "size";
        case FeatureSet::Socket: return "socket";
        case FeatureSet::All: return "all";
    }
    return "?";
}

std::size_t feature_width(FeatureSet fs) { return subset_indices(fs).size(); }

std::vector<std::string> feature_column_names(FeatureSet fs) {
    std::vector<std::string> names;
    for (std::size_t i : subset_indices(fs)) {
        const std::size_t r = i / kStatsPerRate;
        const ColumnSpec& c = kColumns[i % kStatsPerRate];
        names.push_back(std::string(c.key) + "_" + c.stat + "_" + rate_token(r));
    }
    return names;
}

std::vector<FeatureVector> extract(const Trace& trace, FeatureSet fs,
                                   const std::string& label) {
    const std::vector<std::size_t> idx = subset_indices(fs);
    FeatureExtractor ex;
    std::vector<FeatureVector> rows;
    std::vector<double> full;
    for (std::size_t i = 0; i < trace.packets.size(); ++i) {
        if (!ex.consume(trace.packets[i], full)) continue;
        FeatureVector fv;
        fv.packet_index = i;
        fv.label = label;
        fv.values.reserve(idx.size());
        for (std::size_t j : idx) fv.values.push_back(full[j]);
        rows.push_back(std::move(fv));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV

void write_features_csv(const std::string& path,
                        const std::vector<FeatureVector>& rows, FeatureSet fs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FeatureError("cannot open " + path + " for writing");

    out << "packet_index,label";
    for (const std::string& name : feature_column_names(fs)) out << "," << name;
    out << "\n";

    char buf[40];
    for (const FeatureVector& fv : rows) {
        out << fv.packet_index << "," << fv.label;
        for (double v : fv.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw FeatureError("short write to " + path);
}

std::vector<FeatureVector> read_features_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FeatureError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FeatureError(path + ": empty file");

    std::vector<FeatureVector> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        FeatureVector fv;
        if (!std::getline(ss, field, ',')) continue;
        fv.packet_index = static_cast<std::size_t>(std::stoull(field));
        if (!std::getline(ss, fv.label, ',')) {
            throw FeatureError(path + ":" + std::to_string(lineno) +
                               ": missing label");
        }
        while (std::getline(ss, field, ',')) {
            fv.values.push_back(std::stod(field));
        }
        rows.push_back(std::move(fv));
    }
    return rows;
}

} // namespace poisoncap

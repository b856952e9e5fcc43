#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisoncap/pcap.hpp"

// Per-packet flow features over damped incremental statistics, the running
// (weight, linear sum, squared sum) triple where every update first decays
// the triple by 2^(-lambda * dt_seconds). Five decay rates are kept per
// aggregation key, so each packet yields
//
//   per lambda: src MAC-IP size stats   w, mean, std          (3)
//               src IP size stats       w, mean, std          (3)
//               channel size stats      w, mean, std,
//                 (src ip <-> dst ip)   magnitude, radius,
//                                       covariance, corr      (7)
//               socket size stats       same seven            (7)
//                 (ip:port <-> ip:port)
//               channel jitter stats    w, mean, std          (3)
//
// 23 values x 5 rates = 115 columns. "Size" is the serialized frame length
// in bytes; jitter is the inter-arrival gap in seconds on the directed
// (src ip, dst ip) channel, with the first arrival contributing no sample.
// Two-sided keys (channel, socket) keep one half per direction plus a damped
// residual-product sum for covariance; the reported w/mean/std are the
// sending direction's. Only IPv4 packets produce rows.

namespace poisoncap {

struct FeatureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<double, 5> kDecayRates = {5.0, 3.0, 1.0, 0.1, 0.01};
inline constexpr std::size_t kStatsPerRate = 23;
inline constexpr std::size_t kFullWidth = kStatsPerRate * kDecayRates.size();

struct DampedStat1D {
    double w = 0.0;
    double ls = 0.0;
    double ss = 0.0;
    std::uint64_t last_update = 0;
    bool seen = false;

    // Decays by 2^(-lambda * (t - last_update) / 1e6), then accumulates.
    // Time must be non-decreasing per stat; going backwards is an ordering
    // error (throws FeatureError).
    void update(double value, std::uint64_t t_usec, double lambda);
    void decay_to(std::uint64_t t_usec, double lambda);

    double mean() const { return w > 0.0 ? ls / w : 0.0; }
    // |ss/w - mean^2|: the absolute value guards the tiny negative residue
    // floating-point cancellation can leave behind.
    double variance() const;
    double stddev() const;
};

struct DampedStat2D {
    DampedStat1D half[2];
    double sr = 0.0; // damped sum of cross-direction residual products
    double w3 = 0.0;
    double last_res[2] = {0.0, 0.0};
    std::uint64_t cov_last_update = 0;
    bool cov_seen = false;

    void update(int side, double value, std::uint64_t t_usec, double lambda);

    double covariance() const { return w3 > 0.0 ? sr / w3 : 0.0; }
    double correlation() const;
    double magnitude() const; // sqrt(mean_a^2 + mean_b^2)
    double radius() const;    // sqrt(var_a^2 + var_b^2)
};

enum class FeatureSet { Jitter, Size, Socket, All };

FeatureSet parse_feature_set(const std::string& name); // throws FeatureError
const char* to_string(FeatureSet fs);
std::size_t feature_width(FeatureSet fs); // 15 / 40 / 35 / 115

// Column names in emission order: <key>_<stat>_<lambda>, lambda-major
// (5, 3, 1, 0.1, 0.01), keys ordered srcmac_ip, srcip, channel, socket,
// jitter within each rate.
std::vector<std::string> feature_column_names(FeatureSet fs);

struct FeatureVector {
    std::size_t packet_index = 0;
    std::string label;
    std::vector<double> values;
};

// Streaming extractor; packets must arrive in non-decreasing time order.
class FeatureExtractor {
public:
    FeatureExtractor();

    // Updates the per-key statistics and returns the packet's full
    // 115-value row, or false (no row) for non-IPv4 packets.
    bool consume(const Packet& p, std::vector<double>& row_out);

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

// Extracts one row per IPv4 packet of the trace, labels every row, and
// projects to the requested feature subset:
//   jitter  the 15 jitter columns
//   size    the 30 one-sided size columns plus channel mean/std     (40)
//   socket  the 35 socket columns
//   all     everything                                              (115)
std::vector<FeatureVector> extract(const Trace& trace, FeatureSet fs,
                                   const std::string& label);

// CSV with header packet_index,label,<columns...>; doubles are written
// with enough digits to round-trip exactly.
void write_features_csv(const std::string& path,
                        const std::vector<FeatureVector>& rows, FeatureSet fs);
std::vector<FeatureVector> read_features_csv(const std::string& path);

} // namespace poisoncap

#pragma once

// Independent full-history oracle for the damped flow statistics.
//
// The library keeps O(1) running state per key (decay-then-accumulate). The
// oracle instead recomputes every reported cell from the complete event
// history with direct sums,
//
//     W(t)  = sum_j 2^(-lambda (t - t_j))
//     LS(t) = sum_j v_j 2^(-lambda (t - t_j))
//     SS(t) = sum_j v_j^2 2^(-lambda (t - t_j))
//
// and, for the cross-direction covariance, replays the documented residual
// recurrence (residual against the sender-side mean including the current
// value; the damped sum of products with the other side's latest residual)
// with the means taken from full-history sums.
//
// Comparison policy. Wherever a quantity is numerically nonzero the oracle
// demands 1e-9 relative agreement. Cells whose true value is zero are
// different: variance is |SS/W - mean^2|, a catastrophic cancellation whose
// result for a constant-valued stream is rounding residue of magnitude up to
// ~n*eps*(SS/W + mean^2); two correct implementations will not agree on that
// residue. Such cells therefore carry an absolute floor derived from the
// cancellation scale (compared at the variance level for std-like cells),
// a few times the analytic error bound and orders of magnitude below the
// 1e-9-relative scale of any genuinely nonzero value. Correlation cells
// whose denominator variance sits at the cancellation floor are 0/0 and are
// skipped (counted and reported, never compared).

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "poisoncap/features.hpp"
#include "poisoncap/pcap.hpp"

namespace testsupport {

struct OracleCell {
    double value = 0.0;
    double floor = 0.0;        // absolute fallback; 0 disables it
    bool squares = false;      // apply the floor to value^2 (std-like cells)
    bool skip = false;         // 0/0 cell: not comparable between impls
};

enum class CellVerdict { RelPass, FloorPass, Skipped, Fail };

inline CellVerdict compare_cell(double lib, const OracleCell& cell) {
    if (cell.skip) return CellVerdict::Skipped;
    if (lib == cell.value) return CellVerdict::RelPass;
    const double scale = std::max(std::fabs(lib), std::fabs(cell.value));
    if (std::fabs(lib - cell.value) <= 1e-9 * scale) return CellVerdict::RelPass;
    if (cell.floor > 0.0) {
        const double diff = cell.squares
                                ? std::fabs(lib * lib - cell.value * cell.value)
                                : std::fabs(lib - cell.value);
        if (diff <= cell.floor) return CellVerdict::FloorPass;
    }
    return CellVerdict::Fail;
}

class FeatureOracle {
  public:
    // One entry per IPv4 packet: (index into the trace, 115 cells).
    std::vector<std::pair<std::size_t, std::vector<OracleCell>>> rows;

    explicit FeatureOracle(const poisoncap::Trace& trace) {
        using poisoncap::kDecayRates;
        collect(trace);
        precompute_residuals();

        for (const PacketRef& ref : refs_) {
            std::vector<OracleCell> cells(poisoncap::kFullWidth);
            std::size_t col = 0;
            for (double lambda : kDecayRates) {
                emit_1d(cells, col, *ref.mac_events, ref.mac_count, -1, ref.t, lambda);
                emit_1d(cells, col, *ref.src_events, ref.src_count, -1, ref.t, lambda);
                emit_2d(cells, col, ref.channel, ref.channel_count, ref.channel_side,
                        ref.t, lambda);
                emit_2d(cells, col, ref.socket, ref.socket_count, ref.socket_side,
                        ref.t, lambda);
                emit_jitter(cells, col, *ref.dir_times, ref.dir_count, ref.t, lambda);
            }
            rows.emplace_back(ref.index, std::move(cells));
        }
    }

  private:
    struct Event {
        std::uint64_t t = 0;
        double v = 0.0;
        int side = 0;
    };
    struct PairState {
        std::vector<Event> events;
        // residuals and the opposite side's latest residual, per decay rate
        std::vector<double> res[5];
        std::vector<double> lro[5];
    };
    struct PacketRef {
        std::size_t index = 0;
        std::uint64_t t = 0;
        const std::vector<Event>* mac_events = nullptr;
        std::size_t mac_count = 0;
        const std::vector<Event>* src_events = nullptr;
        std::size_t src_count = 0;
        PairState* channel = nullptr;
        std::size_t channel_count = 0;
        int channel_side = 0;
        PairState* socket = nullptr;
        std::size_t socket_count = 0;
        int socket_side = 0;
        const std::vector<std::uint64_t>* dir_times = nullptr;
        std::size_t dir_count = 0;
    };

    using End = std::pair<std::uint32_t, std::uint16_t>;
    std::map<std::pair<poisoncap::MacAddr, std::uint32_t>, std::vector<Event>> mac_;
    std::map<std::uint32_t, std::vector<Event>> src_;
    std::map<std::pair<std::uint32_t, std::uint32_t>, PairState> channel_;
    std::map<std::pair<End, End>, PairState> socket_;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint64_t>> dir_;
    std::vector<PacketRef> refs_;

    void collect(const poisoncap::Trace& trace) {
        for (std::size_t i = 0; i < trace.packets.size(); ++i) {
            const poisoncap::Packet& p = trace.packets[i];
            if (!p.is_ipv4()) continue;
            const double size = static_cast<double>(poisoncap::frame_size(p));
            const std::uint32_t s = p.ip->src, d = p.ip->dst;
            std::uint16_t sport = 0, dport = 0;
            if (const poisoncap::TcpHeader* tcp = p.tcp()) {
                sport = tcp->src_port;
                dport = tcp->dst_port;
            } else if (const poisoncap::UdpHeader* udp = p.udp()) {
                sport = udp->src_port;
                dport = udp->dst_port;
            }

            PacketRef ref;
            ref.index = i;
            ref.t = p.ts_usec;

            auto& mac_ev = mac_[{p.src_mac, s}];
            mac_ev.push_back({p.ts_usec, size, 0});
            ref.mac_events = &mac_ev;
            ref.mac_count = mac_ev.size();

            auto& src_ev = src_[s];
            src_ev.push_back({p.ts_usec, size, 0});
            ref.src_events = &src_ev;
            ref.src_count = src_ev.size();

            const int ch_side = s <= d ? 0 : 1;
            auto& ch = channel_[s <= d ? std::pair{s, d} : std::pair{d, s}];
            ch.events.push_back({p.ts_usec, size, ch_side});
            ref.channel = &ch;
            ref.channel_count = ch.events.size();
            ref.channel_side = ch_side;

            const End ea{s, sport}, eb{d, dport};
            const int so_side = ea <= eb ? 0 : 1;
            auto& so = socket_[ea <= eb ? std::pair{ea, eb} : std::pair{eb, ea}];
            so.events.push_back({p.ts_usec, size, so_side});
            ref.socket = &so;
            ref.socket_count = so.events.size();
            ref.socket_side = so_side;

            auto& times = dir_[{s, d}];
            times.push_back(p.ts_usec);
            ref.dir_times = &times;
            ref.dir_count = times.size();

            refs_.push_back(ref);
        }
    }

    static double decay(std::uint64_t from, std::uint64_t to, double lambda) {
        return std::exp2(-lambda * static_cast<double>(to - from) * 1e-6);
    }

    // Residual of each pair event against its side's full-history mean
    // including the event itself, and the other side's residual current at
    // that moment (the value assigned at its own update, never decayed).
    void precompute_residuals() {
        auto run = [](PairState& st) {
            const auto& ev = st.events;
            for (std::size_t r = 0; r < poisoncap::kDecayRates.size(); ++r) {
                const double lambda = poisoncap::kDecayRates[r];
                st.res[r].resize(ev.size());
                st.lro[r].resize(ev.size());
                double latest[2] = {0.0, 0.0};
                for (std::size_t k = 0; k < ev.size(); ++k) {
                    double w = 0.0, ls = 0.0;
                    for (std::size_t j = 0; j <= k; ++j) {
                        if (ev[j].side != ev[k].side) continue;
                        const double f = decay(ev[j].t, ev[k].t, lambda);
                        w += f;
                        ls += ev[j].v * f;
                    }
                    const double res = ev[k].v - (w > 0.0 ? ls / w : 0.0);
                    st.res[r][k] = res;
                    st.lro[r][k] = latest[1 - ev[k].side];
                    latest[ev[k].side] = res;
                }
            }
        };
        for (auto& [key, st] : channel_) run(st);
        for (auto& [key, st] : socket_) run(st);
    }

    struct Sums {
        double w = 0.0, ls = 0.0, ss = 0.0;
        double mean() const { return w > 0.0 ? ls / w : 0.0; }
        double var() const {
            if (w <= 0.0) return 0.0;
            const double m = mean();
            return std::fabs(ss / w - m * m);
        }
        // Scale of the cancellation inside var(): both subtraction operands.
        double var_scale() const {
            if (w <= 0.0) return 0.0;
            const double m = mean();
            return ss / w + m * m;
        }
        double rms() const { return w > 0.0 ? std::sqrt(ss / w) : 0.0; }
    };

    static Sums sums_over(const std::vector<Event>& ev, std::size_t count, int side,
                          std::uint64_t t, double lambda) {
        Sums s;
        for (std::size_t j = 0; j < count; ++j) {
            if (side >= 0 && ev[j].side != side) continue;
            const double f = decay(ev[j].t, t, lambda);
            s.w += f;
            s.ls += ev[j].v * f;
            s.ss += ev[j].v * ev[j].v * f;
        }
        return s;
    }

    static OracleCell plain(double v) { return {v, 0.0, false, false}; }
    static OracleCell stddev_cell(const Sums& s) {
        return {std::sqrt(s.var()), 4e-12 * s.var_scale(), true, false};
    }

    void emit_1d(std::vector<OracleCell>& cells, std::size_t& col,
                 const std::vector<Event>& ev, std::size_t count, int side,
                 std::uint64_t t, double lambda) {
        const Sums s = sums_over(ev, count, side, t, lambda);
        cells[col++] = plain(s.w);
        cells[col++] = plain(s.mean());
        cells[col++] = stddev_cell(s);
    }

    void emit_2d(std::vector<OracleCell>& cells, std::size_t& col, PairState* st,
                 std::size_t count, int side, std::uint64_t t, double lambda) {
        const Sums own = sums_over(st->events, count, side, t, lambda);
        const Sums s0 = sums_over(st->events, count, 0, t, lambda);
        const Sums s1 = sums_over(st->events, count, 1, t, lambda);

        cells[col++] = plain(own.w);
        cells[col++] = plain(own.mean());
        cells[col++] = stddev_cell(own);

        const double m0 = s0.mean(), m1 = s1.mean();
        cells[col++] = plain(std::sqrt(m0 * m0 + m1 * m1));

        const double v0 = s0.var(), v1 = s1.var();
        const double vs0 = s0.var_scale(), vs1 = s1.var_scale();
        cells[col++] = {std::sqrt(v0 * v0 + v1 * v1),
                        8e-12 * (vs0 * vs0 + vs1 * vs1), true, false};

        // Covariance: replay of the damped residual-product sum.
        std::size_t rate = 0;
        while (poisoncap::kDecayRates[rate] != lambda) ++rate;
        double sr = 0.0, w3 = 0.0;
        for (std::size_t k = 0; k < count; ++k) {
            const double f = decay(st->events[k].t, t, lambda);
            sr += st->res[rate][k] * st->lro[rate][k] * f;
            w3 += f;
        }
        const double cov = w3 > 0.0 ? sr / w3 : 0.0;
        const double rms_scale = (s0.rms() + 1.0) * (s1.rms() + 1.0);
        cells[col++] = {cov, 1e-11 * rms_scale, false, false};

        const double denom = std::sqrt(v0) * std::sqrt(v1);
        OracleCell corr;
        corr.value = denom == 0.0 ? 0.0 : cov / denom;
        const bool degenerate =
            (vs0 > 0.0 && v0 <= 1e-9 * vs0) || (vs1 > 0.0 && v1 <= 1e-9 * vs1) ||
            denom == 0.0;
        if (degenerate) {
            corr.skip = true; // 0/0: rounding residue over rounding residue
        } else {
            corr.floor = 4.0 * (1e-11 * rms_scale / denom +
                                std::fabs(corr.value) * 2.2e-13 *
                                    (vs0 / v0 + vs1 / v1));
        }
        cells[col++] = corr;
    }

    void emit_jitter(std::vector<OracleCell>& cells, std::size_t& col,
                     const std::vector<std::uint64_t>& times, std::size_t count,
                     std::uint64_t t, double lambda) {
        Sums s;
        for (std::size_t r = 1; r < count; ++r) {
            const double gap = static_cast<double>(times[r] - times[r - 1]) * 1e-6;
            const double f = decay(times[r], t, lambda);
            s.w += f;
            s.ls += gap * f;
            s.ss += gap * gap * f;
        }
        cells[col++] = plain(s.w);
        cells[col++] = plain(s.mean());
        cells[col++] = stddev_cell(s);
    }
};

struct OracleTally {
    std::size_t rel = 0, floored = 0, skipped = 0, failed = 0;
    std::size_t first_bad_row = 0, first_bad_col = 0;
    double first_bad_lib = 0.0, first_bad_oracle = 0.0;
    // Cells compared at 1e-9 relative, bucketed by the column's position
    // inside its 23-column decay block. Lets a caller prove the strict
    // comparison actually exercised every statistic kind (weight, mean, std,
    // magnitude, radius, covariance, correlation) rather than only the
    // easy always-positive columns.
    std::array<std::size_t, 23> rel_by_offset{};
};

// Compares library rows (full 115-wide) against the oracle, cell by cell.
inline OracleTally compare_rows(const std::vector<poisoncap::FeatureVector>& lib,
                                const FeatureOracle& oracle) {
    OracleTally tally;
    const std::size_t n = std::min(lib.size(), oracle.rows.size());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < lib[r].values.size(); ++c) {
            const OracleCell& cell = oracle.rows[r].second[c];
            switch (compare_cell(lib[r].values[c], cell)) {
                case CellVerdict::RelPass:
                    ++tally.rel;
                    ++tally.rel_by_offset[c % 23];
                    break;
                case CellVerdict::FloorPass: ++tally.floored; break;
                case CellVerdict::Skipped: ++tally.skipped; break;
                case CellVerdict::Fail:
                    if (tally.failed == 0) {
                        tally.first_bad_row = r;
                        tally.first_bad_col = c;
                        tally.first_bad_lib = lib[r].values[c];
                        tally.first_bad_oracle = cell.value;
                    }
                    ++tally.failed;
                    break;
            }
        }
    }
    return tally;
}

} // namespace testsupport

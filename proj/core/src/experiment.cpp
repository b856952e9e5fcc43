#include "poisoncap/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "poisoncap/pcap.hpp"
#include "poisoncap/rng.hpp"

namespace poisoncap {

namespace {

std::string fmt_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Shortest decimal form that parses back to exactly the same double.
std::string fmt_shortest(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> items;
    std::string cur;
    std::stringstream ss(value);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) items.push_back(cur);
    }
    return items;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw ExperimentError("config: bad value for '" + key + "': '" + value + "'");
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& value) {
    if (value.empty() || value[0] == '-') bad_value(key, value);
    char* end = nullptr;
    errno = 0;
    unsigned long long v = std::strtoull(value.c_str(), &end, 10);
    if (errno != 0 || end == value.c_str() || *end != '\0') bad_value(key, value);
    return static_cast<std::uint64_t>(v);
}

double parse_double_value(const std::string& key, const std::string& value) {
    if (value.empty()) bad_value(key, value);
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(value.c_str(), &end);
    if (errno != 0 || end == value.c_str() || *end != '\0' || !std::isfinite(v))
        bad_value(key, value);
    return v;
}

bool parse_bool_value(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value);
}

FeatureSet parse_feature_set_value(const std::string& key, const std::string& value) {
    try {
        return parse_feature_set(value);
    } catch (const std::exception&) {
        bad_value(key, value);
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig parse_experiment_config(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ExperimentError("config: line " + std::to_string(lineno) +
                                  ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));

        if (key == "seed") {
            cfg.seed = parse_u64_value(key, value);
        } else if (key == "attacker_device") {
            cfg.attacker_device = static_cast<std::size_t>(parse_u64_value(key, value));
        } else if (key == "backdoor_percentage") {
            cfg.backdoor_percentage = parse_double_value(key, value);
            if (cfg.backdoor_percentage < 0.0 || cfg.backdoor_percentage > 100.0)
                bad_value(key, value);
        } else if (key == "feature_set") {
            cfg.feature_set = parse_feature_set_value(key, value);
        } else if (key == "train_fraction") {
            cfg.train_fraction = parse_double_value(key, value);
            if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0))
                bad_value(key, value);
        } else if (key == "synth.devices") {
            cfg.synth.devices = static_cast<std::size_t>(parse_u64_value(key, value));
        } else if (key == "synth.benign_packets") {
            cfg.synth.benign_packets = static_cast<std::size_t>(parse_u64_value(key, value));
        } else if (key == "synth.syn_flood_packets") {
            cfg.synth.syn_flood_packets = static_cast<std::size_t>(parse_u64_value(key, value));
        } else if (key == "synth.syn_flood_sources") {
            cfg.synth.syn_flood_sources = static_cast<std::size_t>(parse_u64_value(key, value));
        } else if (key == "synth.udp_flood_packets") {
            cfg.synth.udp_flood_packets = static_cast<std::size_t>(parse_u64_value(key, value));
        } else if (key == "synth.keepalive_share") {
            cfg.synth.keepalive_share = parse_double_value(key, value);
        } else if (key == "synth.streaming_share") {
            cfg.synth.streaming_share = parse_double_value(key, value);
        } else if (key == "synth.telemetry_share") {
            cfg.synth.telemetry_share = parse_double_value(key, value);
        } else if (key == "trigger.ratio") {
            cfg.trigger.ratio = parse_double_value(key, value);
            if (cfg.trigger.ratio < 0.0 || cfg.trigger.ratio > 1.0) bad_value(key, value);
        } else if (key == "trigger.burst") {
            std::uint64_t v = parse_u64_value(key, value);
            if (v > 0xFFFFFFFFull) bad_value(key, value);
            cfg.trigger.burst = static_cast<std::uint32_t>(v);
        } else if (key == "trigger.delay_usec") {
            cfg.trigger.delay_usec = parse_u64_value(key, value);
            if (cfg.trigger.delay_usec == 0) bad_value(key, value);
        } else if (key == "trigger.bt_window_usec") {
            cfg.trigger.bt_window_usec = parse_u64_value(key, value);
        } else if (key == "trigger.trigger_len") {
            if (value == "keep") {
                cfg.trigger.trigger_len.reset();
            } else {
                std::uint64_t v = parse_u64_value(key, value);
                if (v > 0xFFFFFFFFull) bad_value(key, value);
                cfg.trigger.trigger_len = static_cast<std::uint32_t>(v);
            }
        } else if (key == "trigger.dst_ip") {
            try {
                cfg.trigger.dst_ip = parse_ipv4(value);
            } catch (const std::exception&) {
                bad_value(key, value);
            }
        } else if (key == "trigger.dst_mac") {
            try {
                cfg.trigger.dst_mac = parse_mac(value);
            } catch (const std::exception&) {
                bad_value(key, value);
            }
        } else if (key == "train.hidden") {
            std::vector<int> hidden;
            for (const std::string& item : split_list(value)) {
                std::uint64_t v = parse_u64_value(key, item);
                if (v == 0 || v > 1000000) bad_value(key, value);
                hidden.push_back(static_cast<int>(v));
            }
            if (hidden.empty()) bad_value(key, value);
            cfg.train.hidden = std::move(hidden);
        } else if (key == "train.loss") {
            if (value == "binary")
                cfg.train.loss = LossKind::BinaryCrossEntropy;
            else if (value == "categorical")
                cfg.train.loss = LossKind::CategoricalCrossEntropy;
            else
                bad_value(key, value);
        } else if (key == "train.epochs") {
            std::uint64_t v = parse_u64_value(key, value);
            if (v == 0 || v > 1000000) bad_value(key, value);
            cfg.train.epochs = static_cast<int>(v);
        } else if (key == "train.batch") {
            std::uint64_t v = parse_u64_value(key, value);
            if (v == 0 || v > 100000000) bad_value(key, value);
            cfg.train.batch = static_cast<int>(v);
        } else if (key == "train.learning_rate") {
            cfg.train.learning_rate = parse_double_value(key, value);
            if (cfg.train.learning_rate <= 0.0) bad_value(key, value);
        } else if (key == "train.beta1") {
            cfg.train.beta1 = parse_double_value(key, value);
        } else if (key == "train.beta2") {
            cfg.train.beta2 = parse_double_value(key, value);
        } else if (key == "train.adam_eps") {
            cfg.train.adam_eps = parse_double_value(key, value);
        } else if (key == "train.verbose") {
            cfg.train.verbose = parse_bool_value(key, value);
        } else if (key == "sweep.burst") {
            cfg.sweep_burst.clear();
            for (const std::string& item : split_list(value)) {
                std::uint64_t v = parse_u64_value(key, item);
                if (v > 0xFFFFFFFFull) bad_value(key, value);
                cfg.sweep_burst.push_back(static_cast<std::uint32_t>(v));
            }
        } else if (key == "sweep.delay_usec") {
            cfg.sweep_delay_usec.clear();
            for (const std::string& item : split_list(value)) {
                std::uint64_t v = parse_u64_value(key, item);
                if (v == 0) bad_value(key, value);
                cfg.sweep_delay_usec.push_back(v);
            }
        } else if (key == "sweep.percentage") {
            cfg.sweep_percentage.clear();
            for (const std::string& item : split_list(value)) {
                double v = parse_double_value(key, item);
                if (v < 0.0 || v > 100.0) bad_value(key, value);
                cfg.sweep_percentage.push_back(v);
            }
        } else if (key == "sweep.feature_set") {
            cfg.sweep_feature_sets.clear();
            for (const std::string& item : split_list(value))
                cfg.sweep_feature_sets.push_back(parse_feature_set_value(key, item));
        } else {
            throw ExperimentError("config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ExperimentError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

std::string config_to_text(const ExperimentConfig& cfg) {
    std::string out;
    auto kv = [&out](const std::string& key, const std::string& value) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    };
    auto join_list = [](const std::vector<std::string>& items) {
        std::string s;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) s += ',';
            s += items[i];
        }
        return s;
    };

    kv("seed", std::to_string(cfg.seed));
    kv("attacker_device", std::to_string(cfg.attacker_device));
    kv("backdoor_percentage", fmt_shortest(cfg.backdoor_percentage));
    kv("feature_set", to_string(cfg.feature_set));
    kv("train_fraction", fmt_shortest(cfg.train_fraction));

    kv("synth.devices", std::to_string(cfg.synth.devices));
    kv("synth.benign_packets", std::to_string(cfg.synth.benign_packets));
    kv("synth.syn_flood_packets", std::to_string(cfg.synth.syn_flood_packets));
    kv("synth.syn_flood_sources", std::to_string(cfg.synth.syn_flood_sources));
    kv("synth.udp_flood_packets", std::to_string(cfg.synth.udp_flood_packets));
    kv("synth.keepalive_share", fmt_shortest(cfg.synth.keepalive_share));
    kv("synth.streaming_share", fmt_shortest(cfg.synth.streaming_share));
    kv("synth.telemetry_share", fmt_shortest(cfg.synth.telemetry_share));

    kv("trigger.ratio", fmt_shortest(cfg.trigger.ratio));
    kv("trigger.burst", std::to_string(cfg.trigger.burst));
    kv("trigger.delay_usec", std::to_string(cfg.trigger.delay_usec));
    kv("trigger.bt_window_usec", std::to_string(cfg.trigger.bt_window_usec));
    kv("trigger.trigger_len", cfg.trigger.trigger_len
                                  ? std::to_string(*cfg.trigger.trigger_len)
                                  : std::string("keep"));
    kv("trigger.dst_ip", ipv4_to_string(cfg.trigger.dst_ip));
    kv("trigger.dst_mac", mac_to_string(cfg.trigger.dst_mac));

    {
        std::vector<std::string> items;
        for (int h : cfg.train.hidden) items.push_back(std::to_string(h));
        kv("train.hidden", join_list(items));
    }
    kv("train.loss",
       cfg.train.loss == LossKind::BinaryCrossEntropy ? "binary" : "categorical");
    kv("train.epochs", std::to_string(cfg.train.epochs));
    kv("train.batch", std::to_string(cfg.train.batch));
    kv("train.learning_rate", fmt_shortest(cfg.train.learning_rate));
    kv("train.beta1", fmt_shortest(cfg.train.beta1));
    kv("train.beta2", fmt_shortest(cfg.train.beta2));
    kv("train.adam_eps", fmt_shortest(cfg.train.adam_eps));
    kv("train.verbose", cfg.train.verbose ? "true" : "false");

    {
        std::vector<std::string> items;
        for (std::uint32_t b : cfg.sweep_burst) items.push_back(std::to_string(b));
        kv("sweep.burst", join_list(items));
    }
    {
        std::vector<std::string> items;
        for (std::uint64_t d : cfg.sweep_delay_usec) items.push_back(std::to_string(d));
        kv("sweep.delay_usec", join_list(items));
    }
    {
        std::vector<std::string> items;
        for (double p : cfg.sweep_percentage) items.push_back(fmt_shortest(p));
        kv("sweep.percentage", join_list(items));
    }
    {
        std::vector<std::string> items;
        for (FeatureSet fs : cfg.sweep_feature_sets) items.push_back(to_string(fs));
        kv("sweep.feature_set", join_list(items));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training-set assembly

AssembledData assemble_training_set(const std::vector<FeatureVector>& clean,
                                    const std::vector<FeatureVector>& poisoned_benign,
                                    double backdoor_percentage,
                                    std::uint64_t seed,
                                    double train_fraction) {
    if (!(backdoor_percentage >= 0.0 && backdoor_percentage <= 100.0))
        throw ExperimentError("assemble: backdoor percentage must be in [0, 100]");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0))
        throw ExperimentError("assemble: train fraction must be in (0, 1]");
    if (clean.empty()) throw ExperimentError("assemble: no clean rows");

    // Stratified split: group by label (sorted order), shuffle each group
    // with the split seed, take the leading train_fraction share.
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < clean.size(); ++i) groups[clean[i].label].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (auto& [label, idx] : groups) {
        (void)label;
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(rng.below(i));
            std::swap(idx[i - 1], idx[j]);
        }
        auto take = static_cast<std::size_t>(
            std::floor(train_fraction * static_cast<double>(idx.size()) + 1e-9));
        train_idx.insert(train_idx.end(), idx.begin(),
                         idx.begin() + static_cast<std::ptrdiff_t>(take));
        test_idx.insert(test_idx.end(),
                        idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
    }

    AssembledData out;
    out.clean_train_rows = train_idx.size();
    out.poison_rows = static_cast<std::size_t>(std::floor(
        backdoor_percentage * static_cast<double>(train_idx.size()) / 100.0 + 1e-9));
    if (out.poison_rows > poisoned_benign.size()) {
        double max_pct = train_idx.empty()
                             ? 0.0
                             : 100.0 * static_cast<double>(poisoned_benign.size()) /
                                   static_cast<double>(train_idx.size());
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "assemble: pool holds %zu poisoned rows but %zu are needed; "
                      "the largest achievable percentage with this pool is %.4f",
                      poisoned_benign.size(), out.poison_rows, max_pct);
        throw ExperimentError(msg);
    }

    auto class_of = [](const std::string& label) { return label == "benign" ? 0 : 1; };
    out.train.classes = {"benign", "attack"};
    out.test.classes = {"benign", "attack"};
    for (std::size_t i : train_idx) out.train.push_row(clean[i].values, class_of(clean[i].label));
    for (std::size_t i : test_idx) out.test.push_row(clean[i].values, class_of(clean[i].label));

    // Seeded sample from the poisoned pool. The label is the benign class,
    // with no input that could change it: clean-label by construction.
    std::vector<std::size_t> pool(poisoned_benign.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = pool.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(pool[i - 1], pool[j]);
    }
    out.poison_train_indices.reserve(out.poison_rows);
    for (std::size_t k = 0; k < out.poison_rows; ++k) {
        out.poison_train_indices.push_back(out.train.size());
        out.train.push_row(poisoned_benign[pool[k]].values, 0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attack evaluation

AttackEvaluation evaluate_attack(const IdsModel& model, const Trace& clean_attack,
                                 const TriggerConfig& trigger, FeatureSet fs,
                                 bool keep_rows) {
    TriggerConfig tc = trigger;
    tc.ratio = 1.0;     // attack phase: every eligible packet carries the trigger
    tc.src_allow.clear();

    auto injected = generate_backdoor(clean_attack, tc);
    const Trace& poisoned = injected.first;
    const InjectionReport& report = injected.second;

    std::vector<bool> packet_injected(poisoned.packets.size(), false);
    for (std::size_t idx : report.injected_output_indices) packet_injected[idx] = true;

    std::vector<FeatureVector> rows = extract(poisoned, fs, "attack");
    AttackEvaluation ev;
    ev.attack_rows = rows.size();
    ev.trigger_rows = report.injected_output_indices.size();

    Dataset data;
    data.classes = {"benign", "attack"};
    std::vector<bool> injected_row(rows.size(), false);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        data.push_row(rows[i].values, 1);
        injected_row[i] = packet_injected[rows[i].packet_index];
    }
    if (data.size() > 0 && model.input_dim() != data.dim) {
        throw ExperimentError("attack evaluation: model expects " +
                              std::to_string(model.input_dim()) +
                              " features, capture rows have " +
                              std::to_string(data.dim));
    }

    std::size_t benign_all = 0;
    std::size_t benign_injected = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (model.predict_class(data.row(i)) == 0) {
            ++benign_all;
            if (injected_row[i]) ++benign_injected;
        }
    }
    ev.asr = ev.trigger_rows ? static_cast<double>(benign_injected) /
                                   static_cast<double>(ev.trigger_rows)
                             : 0.0;
    ev.poisoned_attack_miss_rate =
        ev.attack_rows ? static_cast<double>(benign_all) /
                             static_cast<double>(ev.attack_rows)
                       : 0.0;

    std::vector<FeatureVector> clean_rows = extract(clean_attack, fs, "attack");
    std::size_t benign_clean = 0;
    for (const FeatureVector& r : clean_rows) {
        if (model.predict_class(r.values.data()) == 0) ++benign_clean;
    }
    ev.unpoisoned_attack_miss_rate =
        clean_rows.empty() ? 0.0
                           : static_cast<double>(benign_clean) /
                                 static_cast<double>(clean_rows.size());

    if (keep_rows) {
        ev.poisoned_rows = std::move(data);
        ev.injected = std::move(injected_row);
    }
    return ev;
}

std::pair<Dataset, std::vector<bool>> benign_predicted_rows(
    const IdsModel& model, const Dataset& candidates,
    const std::vector<bool>& triggered) {
    if (triggered.size() != candidates.size())
        throw ExperimentError("benign_predicted_rows: one tag per row required");
    Dataset kept;
    kept.dim = candidates.dim;
    kept.classes = candidates.classes;
    std::vector<bool> tags;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (model.predict_class(candidates.row(i)) != 0) continue;
        const double* row = candidates.row(i);
        kept.x.insert(kept.x.end(), row, row + candidates.dim);
        kept.y.push_back(candidates.y[i]);
        tags.push_back(triggered[i]);
    }
    return {std::move(kept), std::move(tags)};
}

// ---------------------------------------------------------------------------
// Label-flipping baseline

BaselineReport run_label_flip_baseline(const Dataset& train_data, const Dataset& test,
                                       double flip_percentage,
                                       const TrainConfig& tcfg, std::uint64_t seed) {
    if (!(flip_percentage >= 0.0 && flip_percentage <= 100.0))
        throw ExperimentError("baseline: flip percentage must be in [0, 100]");

    Dataset flipped = train_data;
    std::vector<std::size_t> attack_rows;
    for (std::size_t i = 0; i < flipped.size(); ++i)
        if (flipped.y[i] != 0) attack_rows.push_back(i);

    // One sub-seed per probed percentage so probes are independent and the
    // whole search replays bit for bit.
    auto tag = static_cast<std::uint64_t>(std::llround(flip_percentage * 100.0));
    Rng rng(derive_seed(seed, "baseline.flip", tag));
    for (std::size_t i = attack_rows.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(attack_rows[i - 1], attack_rows[j]);
    }
    auto flips = static_cast<std::size_t>(std::floor(
        flip_percentage * static_cast<double>(attack_rows.size()) / 100.0 + 1e-9));
    for (std::size_t k = 0; k < flips; ++k) flipped.y[attack_rows[k]] = 0;

    TrainConfig cfg = tcfg;
    cfg.seed = derive_seed(seed, "baseline.train", tag);
    IdsModel model = train(flipped, cfg);

    BaselineReport rep;
    rep.flip_percentage = flip_percentage;
    rep.flipped_rows = flips;
    rep.clean_accuracy = evaluate(model, test).accuracy;

    std::size_t attack_total = 0;
    std::size_t missed = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.y[i] == 0) continue;
        ++attack_total;
        if (model.predict_class(test.row(i)) == 0) ++missed;
    }
    rep.attack_miss_rate = attack_total ? static_cast<double>(missed) /
                                              static_cast<double>(attack_total)
                                        : 0.0;
    return rep;
}

BaselineSearch find_label_flip_equivalent(const Dataset& train_data, const Dataset& test,
                                          double target_miss_rate,
                                          const TrainConfig& tcfg,
                                          std::uint64_t seed) {
    BaselineSearch search;
    search.target_miss_rate = target_miss_rate;

    auto probe = [&](double pct) -> const BaselineReport& {
        search.probes.push_back(
            run_label_flip_baseline(train_data, test, pct, tcfg, seed));
        return search.probes.back();
    };

    if (target_miss_rate <= 0.0) {
        search.required_flip_percentage = 0.0;
        search.flipped_rows = 0;
        return search;
    }

    BaselineReport best = probe(100.0);
    if (best.attack_miss_rate < target_miss_rate) {
        search.required_flip_percentage = 101.0; // even 100% falls short
        search.flipped_rows = best.flipped_rows;
        return search;
    }

    double lo = 0.0;
    double hi = 100.0;
    while (hi - lo > 5.0) {
        double mid = std::round((lo + hi) / 10.0) * 5.0;
        if (mid <= lo) mid = lo + 5.0;
        if (mid >= hi) mid = hi - 5.0;
        const BaselineReport& r = probe(mid);
        if (r.attack_miss_rate >= target_miss_rate) {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    search.required_flip_percentage = hi;
    search.flipped_rows = best.flipped_rows;
    return search;
}

// ---------------------------------------------------------------------------
// Full pipeline

namespace {

std::vector<FeatureVector> extract_clean_rows(const SynthCorpus& corpus, FeatureSet fs) {
    std::vector<FeatureVector> rows = extract(corpus.benign, fs, "benign");
    std::vector<FeatureVector> syn = extract(corpus.syn_flood, fs, "syn_flood");
    std::vector<FeatureVector> udp = extract(corpus.udp_flood, fs, "udp_flood");
    rows.reserve(rows.size() + syn.size() + udp.size());
    std::move(syn.begin(), syn.end(), std::back_inserter(rows));
    std::move(udp.begin(), udp.end(), std::back_inserter(rows));
    return rows;
}

ExperimentArtifacts run_on_corpus(const ExperimentConfig& cfg, const SynthCorpus& corpus,
                                  const std::vector<FeatureVector>& clean_rows,
                                  bool train_clean_counterpart, bool run_baseline_search,
                                  bool keep_attack_rows) {
    if (cfg.attacker_device >= corpus.device_ips.size())
        throw ExperimentError("experiment: attacker_device " +
                              std::to_string(cfg.attacker_device) +
                              " out of range (corpus has " +
                              std::to_string(corpus.device_ips.size()) + " devices)");
    const std::uint32_t attacker_ip = corpus.device_ips[cfg.attacker_device];

    ExperimentArtifacts art;

    // Poison phase: triggers go into the attacker's own benign capture,
    // which then enters training as benign-labeled rows.
    Trace observed = filter_by_host(corpus.benign, attacker_ip);
    TriggerConfig poison_cfg = cfg.trigger;
    poison_cfg.seed = derive_seed(cfg.seed, "inject.poison");
    poison_cfg.src_allow = {attacker_ip};
    auto injected = generate_backdoor(observed, poison_cfg);
    art.poison_report = std::move(injected.second);
    std::vector<FeatureVector> pool = extract(injected.first, cfg.feature_set, "benign");

    art.data = assemble_training_set(clean_rows, pool, cfg.backdoor_percentage,
                                     derive_seed(cfg.seed, "assemble"),
                                     cfg.train_fraction);

    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = derive_seed(cfg.seed, "train.poisoned");
    art.model = train(art.data.train, train_cfg);

    Evaluation clean_eval = evaluate(art.model, art.data.test);

    TriggerConfig attack_cfg = cfg.trigger;
    attack_cfg.seed = derive_seed(cfg.seed, "inject.attack");
    art.attack = evaluate_attack(art.model, corpus.syn_flood, attack_cfg,
                                 cfg.feature_set, keep_attack_rows);

    EvalReport& rep = art.report;
    rep.seed = cfg.seed;
    rep.backdoor_percentage = cfg.backdoor_percentage;
    rep.burst = cfg.trigger.burst;
    rep.delay_usec = cfg.trigger.delay_usec;
    rep.feature_set = cfg.feature_set;
    rep.train_rows = art.data.train.size();
    rep.test_rows = art.data.test.size();
    rep.poison_rows = art.data.poison_rows;
    rep.clean_accuracy = clean_eval.accuracy;
    rep.confusion = clean_eval.confusion;
    rep.class_names = art.data.train.classes;
    rep.asr = art.attack.asr;
    rep.trigger_rows = art.attack.trigger_rows;
    rep.poisoned_attack_miss_rate = art.attack.poisoned_attack_miss_rate;
    rep.unpoisoned_attack_miss_rate = art.attack.unpoisoned_attack_miss_rate;

    if (train_clean_counterpart || run_baseline_search) {
        // Same split seed with zero percentage: the identical clean split,
        // minus the poisoned rows.
        AssembledData clean_data = assemble_training_set(
            clean_rows, pool, 0.0, derive_seed(cfg.seed, "assemble"),
            cfg.train_fraction);
        TrainConfig clean_train_cfg = cfg.train;
        clean_train_cfg.seed = derive_seed(cfg.seed, "train.clean");
        IdsModel clean_model = train(clean_data.train, clean_train_cfg);
        if (train_clean_counterpart) {
            art.clean_model_accuracy = evaluate(clean_model, clean_data.test).accuracy;
            art.clean_model = std::move(clean_model);
        }
        if (run_baseline_search) {
            BaselineSearch found = find_label_flip_equivalent(
                clean_data.train, clean_data.test, art.attack.asr, cfg.train,
                derive_seed(cfg.seed, "baseline"));
            rep.baseline_flip_percentage = found.required_flip_percentage;
            rep.baseline_flipped_rows = found.flipped_rows;
        }
    }
    return art;
}

} // namespace

ExperimentArtifacts run_experiment(const ExperimentConfig& cfg,
                                   bool train_clean_counterpart,
                                   bool run_baseline_search) {
    SynthConfig synth_cfg = cfg.synth;
    synth_cfg.seed = derive_seed(cfg.seed, "synth");
    SynthCorpus corpus = generate_synthetic_corpus(synth_cfg);
    std::vector<FeatureVector> clean_rows = extract_clean_rows(corpus, cfg.feature_set);
    return run_on_corpus(cfg, corpus, clean_rows, train_clean_counterpart,
                         run_baseline_search, /*keep_attack_rows=*/true);
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg) {
    std::vector<std::uint32_t> bursts = cfg.sweep_burst;
    if (bursts.empty()) bursts.push_back(cfg.trigger.burst);
    std::vector<std::uint64_t> delays = cfg.sweep_delay_usec;
    if (delays.empty()) delays.push_back(cfg.trigger.delay_usec);
    std::vector<double> percentages = cfg.sweep_percentage;
    if (percentages.empty()) percentages.push_back(cfg.backdoor_percentage);
    std::vector<FeatureSet> feature_sets = cfg.sweep_feature_sets;
    if (feature_sets.empty()) feature_sets.push_back(cfg.feature_set);

    // One corpus for the whole grid, from the master seed — a single-cell
    // sweep therefore equals the direct run with the same seed.
    SynthConfig synth_cfg = cfg.synth;
    synth_cfg.seed = derive_seed(cfg.seed, "synth");
    SynthCorpus corpus = generate_synthetic_corpus(synth_cfg);
    std::map<FeatureSet, std::vector<FeatureVector>> clean_cache;

    std::vector<SweepCell> cells;
    for (std::uint32_t burst : bursts) {
        for (std::uint64_t delay : delays) {
            for (double pct : percentages) {
                for (FeatureSet fs : feature_sets) {
                    SweepCell cell;
                    cell.burst = burst;
                    cell.delay_usec = delay;
                    cell.backdoor_percentage = pct;
                    cell.feature_set = fs;
                    cell.report.seed = cfg.seed;
                    cell.report.burst = burst;
                    cell.report.delay_usec = delay;
                    cell.report.backdoor_percentage = pct;
                    cell.report.feature_set = fs;
                    try {
                        ExperimentConfig cell_cfg = cfg;
                        cell_cfg.trigger.burst = burst;
                        cell_cfg.trigger.delay_usec = delay;
                        cell_cfg.backdoor_percentage = pct;
                        cell_cfg.feature_set = fs;
                        auto it = clean_cache.find(fs);
                        if (it == clean_cache.end()) {
                            it = clean_cache.emplace(fs, extract_clean_rows(corpus, fs))
                                     .first;
                        }
                        ExperimentArtifacts art =
                            run_on_corpus(cell_cfg, corpus, it->second, false, false,
                                          /*keep_attack_rows=*/false);
                        cell.report = std::move(art.report);
                    } catch (const std::exception& e) {
                        cell.failed = true;
                        cell.error = e.what();
                    }
                    cells.push_back(std::move(cell));
                }
            }
        }
    }
    return cells;
}

std::string sweep_table(const std::vector<SweepCell>& cells) {
    std::string out =
        "burst\tdelay_usec\tbackdoor_percentage\tfeature_set\tseed\t"
        "train_rows\ttest_rows\tpoison_rows\tdata_modified_pct\t"
        "clean_accuracy\tasr\ttrigger_rows\tpoisoned_attack_miss_rate\t"
        "unpoisoned_attack_miss_rate\tstatus\terror\n";
    for (const SweepCell& cell : cells) {
        const EvalReport& r = cell.report;
        char buf[512];
        std::snprintf(buf, sizeof buf,
                      "%u\t%llu\t%s\t%s\t%llu\t%zu\t%zu\t%zu\t%s\t%s\t%s\t%zu\t%s\t%s\t%s\t",
                      cell.burst, static_cast<unsigned long long>(cell.delay_usec),
                      fmt_fixed(cell.backdoor_percentage).c_str(),
                      to_string(cell.feature_set),
                      static_cast<unsigned long long>(r.seed), r.train_rows,
                      r.test_rows, r.poison_rows,
                      fmt_fixed(r.data_modified_percentage()).c_str(),
                      fmt_fixed(r.clean_accuracy).c_str(), fmt_fixed(r.asr).c_str(),
                      r.trigger_rows,
                      fmt_fixed(r.poisoned_attack_miss_rate).c_str(),
                      fmt_fixed(r.unpoisoned_attack_miss_rate).c_str(),
                      cell.failed ? "failed" : "ok");
        out += buf;
        std::string err = cell.error;
        for (char& c : err)
            if (c == '\t' || c == '\n' || c == '\r') c = ' ';
        out += err;
        out += '\n';
    }
    return out;
}

void write_sweep_table(const std::string& path, const std::vector<SweepCell>& cells) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ExperimentError("sweep: cannot open '" + path + "' for writing");
    out << sweep_table(cells);
    if (!out) throw ExperimentError("sweep: write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Report text

std::string EvalReport::to_text() const {
    std::string out;
    auto kv = [&out](const char* key, const std::string& value) {
        out += key;
        out += '\t';
        out += value;
        out += '\n';
    };
    kv("seed", std::to_string(seed));
    kv("backdoor_percentage", fmt_fixed(backdoor_percentage));
    kv("burst", std::to_string(burst));
    kv("delay_usec", std::to_string(delay_usec));
    kv("feature_set", to_string(feature_set));
    kv("train_rows", std::to_string(train_rows));
    kv("test_rows", std::to_string(test_rows));
    kv("poison_rows", std::to_string(poison_rows));
    kv("data_modified_percentage", fmt_fixed(data_modified_percentage()));
    kv("clean_accuracy", fmt_fixed(clean_accuracy));
    kv("asr", fmt_fixed(asr));
    kv("trigger_rows", std::to_string(trigger_rows));
    kv("poisoned_attack_miss_rate", fmt_fixed(poisoned_attack_miss_rate));
    kv("unpoisoned_attack_miss_rate", fmt_fixed(unpoisoned_attack_miss_rate));
    if (baseline_flip_percentage) {
        kv("baseline_flip_percentage", fmt_fixed(*baseline_flip_percentage));
        kv("baseline_labels_modified_vs_data_modified",
           fmt_fixed(*baseline_flip_percentage) + " vs " +
               fmt_fixed(data_modified_percentage()));
    }
    if (baseline_flipped_rows)
        kv("baseline_flipped_rows", std::to_string(*baseline_flipped_rows));
    if (confusion.classes > 0) {
        out += "confusion:\n";
        out += confusion.to_text(class_names);
    }
    return out;
}

std::string BaselineReport::to_text() const {
    std::string out;
    auto kv = [&out](const char* key, const std::string& value) {
        out += key;
        out += '\t';
        out += value;
        out += '\n';
    };
    kv("flip_percentage", fmt_fixed(flip_percentage));
    kv("flipped_rows", std::to_string(flipped_rows));
    kv("attack_miss_rate", fmt_fixed(attack_miss_rate));
    kv("clean_accuracy", fmt_fixed(clean_accuracy));
    return out;
}

} // namespace poisoncap

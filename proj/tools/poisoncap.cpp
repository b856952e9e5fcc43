// Command-line front end wiring the toolkit together:
//   synth     generate the synthetic benign/flood corpus
//   inject    plant trigger packets into a capture
//   audit     TCP-conversation warnings, optionally relative to a baseline
//   extract   flow features to CSV
//   train     feedforward classifier on labeled feature CSVs
//   evaluate  clean accuracy and/or attack-phase trigger success
//   baseline  label-flipping comparison
//   defend    activation clustering on a trained model
//   sweep     grid runs over burst/delay/percentage/feature-set
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "poisoncap/audit.hpp"
#include "poisoncap/defense.hpp"
#include "poisoncap/experiment.hpp"
#include "poisoncap/features.hpp"
#include "poisoncap/inject.hpp"
#include "poisoncap/model.hpp"
#include "poisoncap/pcap.hpp"
#include "poisoncap/rng.hpp"
#include "poisoncap/synth.hpp"

namespace {

using namespace poisoncap;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void print_kv(const std::string& key, const std::string& value) {
    std::cout << key << " = " << value << "\n";
}

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, ',')) {
        std::size_t b = item.find_first_not_of(" \t");
        std::size_t e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::uint64_t parse_u64_or_usage(const std::string& what, const std::string& text) {
    char* end = nullptr;
    errno = 0;
    unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (errno != 0 || end == text.c_str() || *end != '\0')
        throw UsageError(what + ": expected an unsigned integer, got '" + text + "'");
    return v;
}

std::uint32_t parse_ip_or_usage(const std::string& what, const std::string& text) {
    try {
        return parse_ipv4(text);
    } catch (const std::exception&) {
        throw UsageError(what + ": expected a dotted IPv4 address, got '" + text + "'");
    }
}

std::vector<FeatureVector> load_csvs(const std::vector<std::string>& paths) {
    std::vector<FeatureVector> rows;
    for (const std::string& path : paths) {
        std::vector<FeatureVector> part = read_features_csv(path);
        rows.insert(rows.end(), std::make_move_iterator(part.begin()),
                    std::make_move_iterator(part.end()));
    }
    return rows;
}

std::string join(const std::vector<std::string>& items, char sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

// Flags shared by every command that trains a model.
struct TrainFlags {
    std::string hidden = "64,32,16";
    std::string loss = "binary";
    int epochs = 60;
    int batch = 256;
    double learning_rate = 1e-3;
    bool verbose = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--hidden", hidden, "hidden layer widths, comma separated");
        cmd->add_option("--loss", loss, "binary | categorical")
            ->check(CLI::IsMember({"binary", "categorical"}));
        cmd->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
        cmd->add_option("--batch", batch, "minibatch size")->check(CLI::PositiveNumber);
        cmd->add_option("--learning-rate", learning_rate, "Adam step size")
            ->check(CLI::PositiveNumber);
        cmd->add_flag("--verbose", verbose, "per-epoch loss on stderr");
    }

    TrainConfig to_config(std::uint64_t seed) const {
        TrainConfig cfg;
        cfg.hidden.clear();
        for (const std::string& part : split_commas(hidden)) {
            std::uint64_t v = parse_u64_or_usage("--hidden", part);
            if (v == 0 || v > 1000000) throw UsageError("--hidden: width out of range");
            cfg.hidden.push_back(static_cast<int>(v));
        }
        if (cfg.hidden.empty()) throw UsageError("--hidden: at least one layer");
        cfg.loss = loss == "binary" ? LossKind::BinaryCrossEntropy
                                    : LossKind::CategoricalCrossEntropy;
        cfg.epochs = epochs;
        cfg.batch = batch;
        cfg.learning_rate = learning_rate;
        cfg.verbose = verbose;
        cfg.seed = seed;
        return cfg;
    }

    void print(std::uint64_t seed) const {
        print_kv("hidden", hidden);
        print_kv("loss", loss);
        print_kv("epochs", std::to_string(epochs));
        print_kv("batch", std::to_string(batch));
        print_kv("learning_rate", fmt6(learning_rate));
        print_kv("seed", std::to_string(seed));
    }
};

// Flags shared by every command that injects triggers.
struct TriggerFlags {
    double ratio = 0.2;
    std::uint32_t burst = 3;
    std::uint64_t delay = 1000;
    std::uint64_t bt_window = 100000;
    std::uint32_t trigger_len = 60;
    bool keep_len = false;
    std::string dst_ip = "203.0.113.7";
    std::string dst_mac = "02:7c:00:00:00:07";
    std::string src_allow;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--ratio", ratio, "anchor selection probability")
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--burst", burst, "crafted packets (or pairs) per anchor");
        cmd->add_option("--delay", delay, "spacing between crafted packets, microseconds")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--bt-window", bt_window,
                        "reverse-packet lookahead window, microseconds");
        cmd->add_option("--trigger-len", trigger_len, "crafted payload length, bytes");
        cmd->add_flag("--keep-len", keep_len, "keep each template's payload length");
        cmd->add_option("--dst-ip", dst_ip, "trigger destination IPv4 address");
        cmd->add_option("--dst-mac", dst_mac, "trigger destination MAC");
        cmd->add_option("--src-allow", src_allow,
                        "comma-separated source IPs eligible as anchors (default: all)");
    }

    TriggerConfig to_config(std::uint64_t seed) const {
        TriggerConfig cfg;
        cfg.ratio = ratio;
        cfg.burst = burst;
        cfg.delay_usec = delay;
        cfg.bt_window_usec = bt_window;
        if (keep_len)
            cfg.trigger_len.reset();
        else
            cfg.trigger_len = trigger_len;
        cfg.dst_ip = parse_ip_or_usage("--dst-ip", dst_ip);
        try {
            cfg.dst_mac = parse_mac(dst_mac);
        } catch (const std::exception&) {
            throw UsageError("--dst-mac: expected xx:xx:xx:xx:xx:xx, got '" + dst_mac + "'");
        }
        for (const std::string& ip : split_commas(src_allow))
            cfg.src_allow.push_back(parse_ip_or_usage("--src-allow", ip));
        cfg.seed = seed;
        return cfg;
    }

    void print(std::uint64_t seed) const {
        print_kv("ratio", fmt6(ratio));
        print_kv("burst", std::to_string(burst));
        print_kv("delay_usec", std::to_string(delay));
        print_kv("bt_window_usec", std::to_string(bt_window));
        print_kv("trigger_len", keep_len ? "keep" : std::to_string(trigger_len));
        print_kv("dst_ip", dst_ip);
        print_kv("dst_mac", dst_mac);
        print_kv("src_allow", src_allow.empty() ? "(all sources)" : src_allow);
        print_kv("seed", std::to_string(seed));
    }
};

void print_injection_summary(const InjectionReport& report) {
    print_kv("points_considered", std::to_string(report.points_considered));
    print_kv("points_selected", std::to_string(report.points_selected));
    print_kv("bidirectional_points", std::to_string(report.bidirectional_points));
    print_kv("unidirectional_points", std::to_string(report.unidirectional_points));
    print_kv("injected_packets", std::to_string(report.injected_packets));
}

int run(int argc, char** argv) {
    std::uint64_t seed = 1;
    if (const char* env = std::getenv("POISONCAP_SEED")) {
        seed = parse_u64_or_usage("POISONCAP_SEED", env);
    }

    CLI::App app{"clean-label PCAP poisoning toolkit"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic corpus");
    std::string synth_benign, synth_syn, synth_udp, synth_observed;
    SynthConfig synth_cfg;
    std::size_t observed_device = 0;
    synth_cmd->add_option("--out-benign", synth_benign, "benign capture path")->required();
    synth_cmd->add_option("--out-syn-flood", synth_syn, "SYN-flood capture path")->required();
    synth_cmd->add_option("--out-udp-flood", synth_udp, "UDP-flood capture path")->required();
    synth_cmd->add_option("--out-observed", synth_observed,
                          "also write the observed device's benign sub-capture");
    synth_cmd->add_option("--observed-device", observed_device,
                          "device index for --out-observed");
    synth_cmd->add_option("--devices", synth_cfg.devices, "benign device count");
    synth_cmd->add_option("--benign-packets", synth_cfg.benign_packets,
                          "approximate benign packet budget");
    synth_cmd->add_option("--syn-flood-packets", synth_cfg.syn_flood_packets,
                          "SYN-flood packet count");
    synth_cmd->add_option("--syn-flood-sources", synth_cfg.syn_flood_sources,
                          "sequential SYN-flood source count");
    synth_cmd->add_option("--udp-flood-packets", synth_cfg.udp_flood_packets,
                          "UDP-flood packet count");
    synth_cmd->add_option("--keepalive-share", synth_cfg.keepalive_share,
                          "benign budget share for the heartbeat device");
    synth_cmd->add_option("--streaming-share", synth_cfg.streaming_share,
                          "benign budget share of the streaming device");
    synth_cmd->add_option("--telemetry-share", synth_cfg.telemetry_share,
                          "benign budget share of UDP telemetry");
    synth_cmd->add_option("--seed", seed, "master seed");

    // ---- inject ----
    auto* inject_cmd = app.add_subcommand("inject", "plant trigger packets in a capture");
    std::string inject_in, inject_out, inject_report;
    bool inject_strawman = false;
    TriggerFlags inject_flags;
    inject_cmd->add_option("--in", inject_in, "input capture")->required();
    inject_cmd->add_option("--out", inject_out, "output capture")->required();
    inject_flags.add_to(inject_cmd);
    inject_cmd->add_option("--report", inject_report, "write the full injection report here");
    inject_cmd->add_flag("--strawman", inject_strawman,
                         "naive verbatim-copy injection (sets off the auditor)");
    inject_cmd->add_option("--seed", seed, "injection seed");

    // ---- audit ----
    auto* audit_cmd = app.add_subcommand(
        "audit", "TCP conversation warnings; nonzero exit when findings exist");
    std::string audit_in, audit_baseline;
    audit_cmd->add_option("--in", audit_in, "capture to audit")->required();
    audit_cmd->add_option("--baseline", audit_baseline,
                          "clean capture; only findings on conversations touched by "
                          "packets absent from the baseline are reported");

    // ---- extract ----
    auto* extract_cmd = app.add_subcommand("extract", "flow features to CSV");
    std::string extract_in, extract_out, extract_fs = "all", extract_label = "benign";
    extract_cmd->add_option("--in", extract_in, "input capture")->required();
    extract_cmd->add_option("--out", extract_out, "output CSV")->required();
    extract_cmd->add_option("--feature-set", extract_fs, "jitter | size | socket | all")
        ->check(CLI::IsMember({"jitter", "size", "socket", "all"}));
    extract_cmd->add_option("--label", extract_label, "label stamped on every row");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a classifier on feature CSVs");
    std::vector<std::string> train_in;
    std::string train_out;
    bool train_multiclass = false;
    TrainFlags train_flags;
    train_cmd->add_option("--in", train_in, "labeled feature CSV (repeatable)")
        ->required()
        ->expected(-1);
    train_cmd->add_option("--out", train_out, "model file to write")->required();
    train_cmd->add_flag("--multiclass", train_multiclass,
                        "keep every label as its own class instead of benign/attack");
    train_flags.add_to(train_cmd);
    train_cmd->add_option("--seed", seed, "training seed");

    // ---- evaluate ----
    auto* eval_cmd =
        app.add_subcommand("evaluate", "clean accuracy and/or attack-phase evaluation");
    std::string eval_model;
    std::vector<std::string> eval_test;
    std::string eval_attack, eval_fs = "all";
    TriggerFlags eval_trigger;
    eval_cmd->add_option("--model", eval_model, "trained model file")->required();
    eval_cmd->add_option("--test", eval_test, "labeled feature CSV (repeatable)")
        ->expected(-1);
    eval_cmd->add_option("--attack", eval_attack,
                         "clean attack capture; triggers are injected into every "
                         "eligible packet and the trigger success rate is measured");
    eval_cmd->add_option("--feature-set", eval_fs, "feature set for --attack")
        ->check(CLI::IsMember({"jitter", "size", "socket", "all"}));
    eval_trigger.add_to(eval_cmd);
    eval_cmd->add_option("--seed", seed, "attack injection seed");

    // ---- baseline ----
    auto* base_cmd = app.add_subcommand(
        "baseline", "label-flipping comparison on a clean labeled dataset");
    std::vector<std::string> base_in;
    double base_flip = -1.0, base_target = -1.0, base_fraction = 0.8;
    TrainFlags base_flags;
    base_cmd->add_option("--in", base_in, "labeled feature CSV (repeatable)")
        ->required()
        ->expected(-1);
    base_cmd->add_option("--flip", base_flip,
                         "flip this percentage of attack-labeled training rows");
    base_cmd->add_option("--target", base_target,
                         "search the smallest flip percentage reaching this attack-miss rate");
    base_cmd->add_option("--train-fraction", base_fraction, "train split share")
        ->check(CLI::Range(0.000001, 1.0));
    base_flags.add_to(base_cmd);
    base_cmd->add_option("--seed", seed, "split/flip/training seed");

    // ---- defend ----
    auto* defend_cmd =
        app.add_subcommand("defend", "activation clustering over a model's hidden layer");
    std::string defend_model;
    std::vector<std::string> defend_in;
    std::string defend_points, defend_triggered_label = "triggered";
    DefenseConfig defend_cfg;
    bool defend_sne = false, defend_all_rows = false;
    defend_cmd->add_option("--model", defend_model, "trained model file")->required();
    defend_cmd->add_option("--in", defend_in, "labeled feature CSV (repeatable)")
        ->required()
        ->expected(-1);
    defend_cmd->add_option("--target-dim", defend_cfg.target_dim, "2 or 3");
    defend_cmd->add_option("--k-min", defend_cfg.k_min, "smallest cluster count");
    defend_cmd->add_option("--k-max", defend_cfg.k_max, "largest cluster count");
    defend_cmd->add_option("--max-rows", defend_cfg.max_rows,
                           "seeded subsample cap on analyzed rows");
    defend_cmd->add_flag("--sne", defend_sne,
                         "neighbor-embedding reduction instead of the variance projection");
    defend_cmd->add_option("--sne-perplexity", defend_cfg.sne.perplexity, "");
    defend_cmd->add_option("--sne-iterations", defend_cfg.sne.iterations, "");
    defend_cmd->add_option("--triggered-label", defend_triggered_label,
                           "rows with this CSV label are counted as trigger-bearing");
    defend_cmd->add_flag("--all-rows", defend_all_rows,
                         "cluster every row instead of only benign-predicted rows");
    defend_cmd->add_option("--points-out", defend_points,
                           "write reduced points + assignments as TSV");
    defend_cmd->add_option("--seed", seed, "subsample/clustering seed");

    // ---- sweep ----
    auto* sweep_cmd =
        app.add_subcommand("sweep", "grid runs over burst/delay/percentage/feature-set");
    std::string sweep_config, sweep_out;
    std::string sweep_bursts, sweep_delays, sweep_pcts, sweep_fsets;
    bool sweep_seed_given = false;
    sweep_cmd->add_option("--config", sweep_config, "experiment config file");
    sweep_cmd->add_option("--out", sweep_out, "write the result table here (default stdout)");
    sweep_cmd->add_option("--burst", sweep_bursts, "comma list, overrides the config");
    sweep_cmd->add_option("--delay", sweep_delays, "comma list, overrides the config");
    sweep_cmd->add_option("--percentage", sweep_pcts, "comma list, overrides the config");
    sweep_cmd->add_option("--feature-set", sweep_fsets, "comma list, overrides the config");
    auto* sweep_seed_opt = sweep_cmd->add_option("--seed", seed, "master seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    sweep_seed_given = sweep_seed_opt->count() > 0;

    if (*synth_cmd) {
        synth_cfg.seed = seed;
        std::cout << "command = synth\n";
        print_kv("seed", std::to_string(synth_cfg.seed));
        print_kv("devices", std::to_string(synth_cfg.devices));
        print_kv("benign_packets", std::to_string(synth_cfg.benign_packets));
        print_kv("syn_flood_packets", std::to_string(synth_cfg.syn_flood_packets));
        print_kv("syn_flood_sources", std::to_string(synth_cfg.syn_flood_sources));
        print_kv("udp_flood_packets", std::to_string(synth_cfg.udp_flood_packets));
        print_kv("keepalive_share", fmt6(synth_cfg.keepalive_share));
        print_kv("streaming_share", fmt6(synth_cfg.streaming_share));
        print_kv("telemetry_share", fmt6(synth_cfg.telemetry_share));
        SynthCorpus corpus = generate_synthetic_corpus(synth_cfg);
        write_trace(synth_benign, corpus.benign);
        write_trace(synth_syn, corpus.syn_flood);
        write_trace(synth_udp, corpus.udp_flood);
        print_kv("benign_written", synth_benign + " (" +
                                       std::to_string(corpus.benign.packets.size()) +
                                       " packets)");
        print_kv("syn_flood_written",
                 synth_syn + " (" + std::to_string(corpus.syn_flood.packets.size()) +
                     " packets)");
        print_kv("udp_flood_written",
                 synth_udp + " (" + std::to_string(corpus.udp_flood.packets.size()) +
                     " packets)");
        for (std::size_t i = 0; i < corpus.device_ips.size(); ++i)
            print_kv("device_" + std::to_string(i), ipv4_to_string(corpus.device_ips[i]));
        if (!synth_observed.empty()) {
            if (observed_device >= corpus.device_ips.size())
                throw UsageError("--observed-device: out of range");
            Trace observed =
                filter_by_host(corpus.benign, corpus.device_ips[observed_device]);
            write_trace(synth_observed, observed);
            print_kv("observed_written",
                     synth_observed + " (" + std::to_string(observed.packets.size()) +
                         " packets)");
        }
        return 0;
    }

    if (*inject_cmd) {
        TriggerConfig cfg = inject_flags.to_config(seed);
        std::cout << "command = inject\n";
        print_kv("in", inject_in);
        print_kv("out", inject_out);
        print_kv("mode", inject_strawman ? "strawman" : "disciplined");
        inject_flags.print(seed);
        Trace trace = read_trace(inject_in);
        auto result = inject_strawman ? strawman_inject(trace, cfg)
                                      : generate_backdoor(trace, cfg);
        write_trace(inject_out, result.first);
        print_injection_summary(result.second);
        if (!inject_report.empty()) {
            std::ofstream rep(inject_report, std::ios::binary);
            if (!rep) throw std::runtime_error("cannot open '" + inject_report + "'");
            rep << result.second.to_text();
        }
        return 0;
    }

    if (*audit_cmd) {
        std::cout << "command = audit\n";
        print_kv("in", audit_in);
        print_kv("baseline", audit_baseline.empty() ? "(none)" : audit_baseline);
        Trace trace = read_trace(audit_in);
        std::vector<AuditFinding> findings;
        if (audit_baseline.empty()) {
            findings = audit(trace);
        } else {
            Trace baseline = read_trace(audit_baseline);
            findings = audit_delta(baseline, trace);
        }
        std::cout << format_findings(findings);
        print_kv("findings", std::to_string(findings.size()));
        return findings.empty() ? 0 : 1;
    }

    if (*extract_cmd) {
        FeatureSet fs = parse_feature_set(extract_fs);
        std::cout << "command = extract\n";
        print_kv("in", extract_in);
        print_kv("out", extract_out);
        print_kv("feature_set", extract_fs);
        print_kv("label", extract_label);
        Trace trace = read_trace(extract_in);
        std::vector<FeatureVector> rows = extract(trace, fs, extract_label);
        write_features_csv(extract_out, rows, fs);
        print_kv("rows", std::to_string(rows.size()));
        print_kv("columns", std::to_string(feature_width(fs)));
        return 0;
    }

    if (*train_cmd) {
        TrainConfig cfg = train_flags.to_config(seed);
        std::cout << "command = train\n";
        print_kv("in", join(train_in, ','));
        print_kv("out", train_out);
        print_kv("classes", train_multiclass ? "per label" : "benign/attack");
        train_flags.print(seed);
        std::vector<FeatureVector> rows = load_csvs(train_in);
        Dataset data = make_dataset(rows, !train_multiclass);
        print_kv("rows", std::to_string(data.size()));
        print_kv("features", std::to_string(data.dim));
        IdsModel model = train(data, cfg);
        Evaluation on_train = evaluate(model, data);
        print_kv("train_accuracy", fmt6(on_train.accuracy));
        model.save(train_out);
        print_kv("model_written", train_out);
        return 0;
    }

    if (*eval_cmd) {
        if (eval_test.empty() && eval_attack.empty())
            throw UsageError("evaluate: need --test and/or --attack");
        std::cout << "command = evaluate\n";
        print_kv("model", eval_model);
        IdsModel model = IdsModel::load(eval_model);
        if (!eval_test.empty()) {
            print_kv("test", join(eval_test, ','));
            std::vector<FeatureVector> rows = load_csvs(eval_test);
            Dataset data = make_dataset(rows, model.class_count() == 2);
            Evaluation ev = evaluate(model, data);
            print_kv("test_rows", std::to_string(data.size()));
            print_kv("accuracy", fmt6(ev.accuracy));
            std::cout << "confusion:\n" << ev.confusion.to_text(model.classes);
        }
        if (!eval_attack.empty()) {
            FeatureSet fs = parse_feature_set(eval_fs);
            print_kv("attack", eval_attack);
            print_kv("feature_set", eval_fs);
            eval_trigger.print(seed);
            TriggerConfig cfg = eval_trigger.to_config(seed);
            Trace trace = read_trace(eval_attack);
            AttackEvaluation ev =
                evaluate_attack(model, trace, cfg, fs, /*keep_rows=*/false);
            print_kv("attack_rows", std::to_string(ev.attack_rows));
            print_kv("trigger_rows", std::to_string(ev.trigger_rows));
            print_kv("asr", fmt6(ev.asr));
            print_kv("poisoned_attack_miss_rate", fmt6(ev.poisoned_attack_miss_rate));
            print_kv("unpoisoned_attack_miss_rate", fmt6(ev.unpoisoned_attack_miss_rate));
        }
        return 0;
    }

    if (*base_cmd) {
        bool have_flip = base_flip >= 0.0;
        bool have_target = base_target >= 0.0;
        if (have_flip == have_target)
            throw UsageError("baseline: exactly one of --flip / --target");
        std::cout << "command = baseline\n";
        print_kv("in", join(base_in, ','));
        print_kv("train_fraction", fmt6(base_fraction));
        base_flags.print(seed);
        std::vector<FeatureVector> rows = load_csvs(base_in);
        AssembledData split = assemble_training_set(rows, {}, 0.0,
                                                    derive_seed(seed, "assemble"),
                                                    base_fraction);
        print_kv("train_rows", std::to_string(split.train.size()));
        print_kv("test_rows", std::to_string(split.test.size()));
        TrainConfig cfg = base_flags.to_config(seed);
        std::uint64_t base_seed = derive_seed(seed, "baseline");
        if (have_flip) {
            BaselineReport rep =
                run_label_flip_baseline(split.train, split.test, base_flip, cfg, base_seed);
            std::cout << rep.to_text();
        } else {
            BaselineSearch found = find_label_flip_equivalent(split.train, split.test,
                                                              base_target, cfg, base_seed);
            for (const BaselineReport& probe : found.probes) {
                print_kv("probe",
                         fmt6(probe.flip_percentage) + " -> miss " +
                             fmt6(probe.attack_miss_rate) + " (" +
                             std::to_string(probe.flipped_rows) + " rows)");
            }
            print_kv("target_miss_rate", fmt6(found.target_miss_rate));
            print_kv("required_flip_percentage", fmt6(found.required_flip_percentage));
            print_kv("required_flipped_rows", std::to_string(found.flipped_rows));
        }
        return 0;
    }

    if (*defend_cmd) {
        defend_cfg.seed = seed;
        defend_cfg.use_sne = defend_sne;
        std::cout << "command = defend\n";
        print_kv("model", defend_model);
        print_kv("in", join(defend_in, ','));
        print_kv("target_dim", std::to_string(defend_cfg.target_dim));
        print_kv("k_range", std::to_string(defend_cfg.k_min) + ".." +
                                std::to_string(defend_cfg.k_max));
        print_kv("max_rows", std::to_string(defend_cfg.max_rows));
        print_kv("reduction", defend_cfg.use_sne ? "sne" : "variance");
        print_kv("triggered_label", defend_triggered_label);
        print_kv("rows_clustered", defend_all_rows ? "all" : "benign-predicted");
        print_kv("seed", std::to_string(seed));
        IdsModel model = IdsModel::load(defend_model);
        std::vector<FeatureVector> rows = load_csvs(defend_in);
        Dataset data;
        std::vector<bool> triggered;
        for (const FeatureVector& fv : rows) {
            data.push_row(fv.values, fv.label == "benign" ? 0 : 1);
            triggered.push_back(fv.label == defend_triggered_label);
        }
        data.classes = {"benign", "attack"};
        if (!defend_all_rows) {
            auto kept = benign_predicted_rows(model, data, triggered);
            data = std::move(kept.first);
            triggered = std::move(kept.second);
        }
        print_kv("rows_in", std::to_string(data.size()));
        ClusterAnalysis analysis = analyze(model, data, triggered, defend_cfg);
        std::cout << analysis.to_text();
        if (!defend_points.empty()) {
            analysis.write_points_tsv(defend_points);
            print_kv("points_written", defend_points);
        }
        return 0;
    }

    if (*sweep_cmd) {
        ExperimentConfig cfg;
        if (!sweep_config.empty()) cfg = load_experiment_config(sweep_config);
        if (sweep_seed_given || sweep_config.empty()) cfg.seed = seed;
        if (!sweep_bursts.empty()) {
            cfg.sweep_burst.clear();
            for (const std::string& item : split_commas(sweep_bursts))
                cfg.sweep_burst.push_back(
                    static_cast<std::uint32_t>(parse_u64_or_usage("--burst", item)));
        }
        if (!sweep_delays.empty()) {
            cfg.sweep_delay_usec.clear();
            for (const std::string& item : split_commas(sweep_delays))
                cfg.sweep_delay_usec.push_back(parse_u64_or_usage("--delay", item));
        }
        if (!sweep_pcts.empty()) {
            cfg.sweep_percentage.clear();
            for (const std::string& item : split_commas(sweep_pcts)) {
                char* end = nullptr;
                double v = std::strtod(item.c_str(), &end);
                if (end == item.c_str() || *end != '\0' || v < 0.0 || v > 100.0)
                    throw UsageError("--percentage: bad value '" + item + "'");
                cfg.sweep_percentage.push_back(v);
            }
        }
        if (!sweep_fsets.empty()) {
            cfg.sweep_feature_sets.clear();
            for (const std::string& item : split_commas(sweep_fsets))
                cfg.sweep_feature_sets.push_back(parse_feature_set(item));
        }
        std::cout << "command = sweep\n" << config_to_text(cfg);
        std::vector<SweepCell> cells = run_sweep(cfg);
        std::string table = sweep_table(cells);
        if (sweep_out.empty()) {
            std::cout << table;
        } else {
            write_sweep_table(sweep_out, cells);
            print_kv("table_written", sweep_out);
        }
        std::size_t failed = 0;
        for (const SweepCell& cell : cells)
            if (cell.failed) ++failed;
        print_kv("cells", std::to_string(cells.size()));
        print_kv("cells_failed", std::to_string(failed));
        return failed == cells.size() && !cells.empty() ? 1 : 0;
    }

    throw UsageError("no subcommand selected");
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

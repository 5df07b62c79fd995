#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ulrl/checkpoint.hpp"
#include "ulrl/config.hpp"
#include "ulrl/csv.hpp"
#include "ulrl/defend.hpp"
#include "ulrl/train.hpp"

namespace ulrl {

// Deterministic sub-stream tags for seed derivation.
inline constexpr std::uint64_t kStreamTrainData = 1;
inline constexpr std::uint64_t kStreamPoison = 3;
inline constexpr std::uint64_t kStreamInit = 4;
inline constexpr std::uint64_t kStreamShuffle = 5;
inline constexpr std::uint64_t kStreamDefense = 6;

// Fixture gates enforced by the attack command.
inline constexpr double kGateCleanAccuracy = 0.90;
inline constexpr double kGateAttackSuccess = 0.95;

/// The frozen desk fixture per trigger family. Only the training rate varies:
/// each family needs a different rate to both implant its trigger and leave the
/// model at moderate confidence for the ascent phase.
inline ExperimentConfig desk_fixture_config(TriggerKind trigger) {
    ExperimentConfig cfg;
    cfg.trigger = trigger;
    switch (trigger) {
        case TriggerKind::Patch: cfg.train_lr = 0.0007; break;
        case TriggerKind::Blended: cfg.train_lr = 0.001; break;
        case TriggerKind::Sinusoidal: cfg.train_lr = 0.0012; break;
    }
    return cfg;
}

namespace detail {

/// Train and test must share the class prototypes, so one pool is generated and
/// split class-wise: the first per_class_train samples of each class go to the
/// train set, the next per_class_test to the test set.
inline LabeledDataset gen_pool_part(const ExperimentConfig& cfg, bool test_part) {
    Rng rng(derive_seed(cfg.data_seed, kStreamTrainData));
    const int per_class = cfg.per_class_train + cfg.per_class_test;
    LabeledDataset pool = gen_synthetic(cfg.classes, per_class, cfg.channels, cfg.height, cfg.width,
                                        cfg.separation, cfg.noise_std, rng);
    const int want = test_part ? cfg.per_class_test : cfg.per_class_train;
    const int skip = test_part ? cfg.per_class_train : 0;
    LabeledDataset out;
    out.num_classes = cfg.classes;
    out.images = Tensor<float>({static_cast<std::size_t>(cfg.classes) * want, cfg.channels, cfg.height,
                                cfg.width});
    out.labels.resize(out.images.extent(0));
    out.poison_mask.assign(out.labels.size(), 0);
    const std::size_t d = pool.sample_numel();
    std::size_t si = 0;
    for (int k = 0; k < cfg.classes; ++k)
        for (int s = 0; s < want; ++s, ++si) {
            const std::size_t src = static_cast<std::size_t>(k) * per_class + skip + s;
            std::memcpy(out.sample(si), pool.sample(src), d * sizeof(float));
            out.labels[si] = pool.labels[src];
        }
    return out;
}

}  // namespace detail

inline LabeledDataset gen_train_set(const ExperimentConfig& cfg) {
    return detail::gen_pool_part(cfg, false);
}

inline LabeledDataset gen_test_set(const ExperimentConfig& cfg) {
    return detail::gen_pool_part(cfg, true);
}

inline LabeledDataset gen_poisoned_train(const ExperimentConfig& cfg, const LabeledDataset& clean_train) {
    Rng rng(derive_seed(cfg.data_seed, kStreamPoison));
    return poison_dataset(clean_train, cfg.trigger_spec(), cfg.poison_plan(), rng);
}

struct AttackRun {
    Model<float> model;
    MetricsReport report;  // train curve plus summary row
    double c_acc = 0.0;
    double asr = 0.0;
};

/// Train the backdoored model under one seed and evaluate both metrics on the
/// clean test set.
inline AttackRun run_attack(const ExperimentConfig& cfg, const LabeledDataset& poisoned_train,
                            const LabeledDataset& clean_test, std::uint64_t train_seed) {
    TrainConfig tc = cfg.train_config();
    tc.shuffle_seed = derive_seed(train_seed, kStreamShuffle);
    Rng init_rng(derive_seed(train_seed, kStreamInit));
    TrainOutcome trained = train_backdoored(cfg.model_spec(), poisoned_train, tc, init_rng);

    AttackRun run;
    run.c_acc = clean_accuracy(trained.model, clean_test);
    run.asr = attack_success_rate(trained.model, clean_test, cfg.trigger_spec(), cfg.target_label);
    run.report = std::move(trained.report);
    const double final_loss = run.report.rows.empty() ? kMetricNa : run.report.rows.back().loss;
    run.report.add("summary", cfg.train_epochs, final_loss, run.c_acc, run.asr);
    run.model = std::move(trained.model);
    return run;
}

struct DefenseRun {
    DefenseOutcome outcome;
    double c_acc = 0.0;
    double asr = 0.0;
};

/// One seeded defense: sample the stratified defense set, run the two-phase
/// pipeline, evaluate the purified model, and append the summary row.
inline DefenseRun run_defense(const Model<float>& model, const LabeledDataset& clean_train,
                              const LabeledDataset& clean_test, const ExperimentConfig& cfg,
                              std::uint64_t seed) {
    Rng rng(derive_seed(seed, kStreamDefense));
    LabeledDataset defense = sample_defense_set(clean_train, cfg.defense_fraction, rng);
    DefenseRun run;
    run.outcome = ulrl_defend(model, defense, cfg.defend_config(), rng);
    run.c_acc = clean_accuracy(run.outcome.model, clean_test);
    run.asr = attack_success_rate(run.outcome.model, clean_test, cfg.trigger_spec(), cfg.target_label);
    const int last_epoch = cfg.relearn_epochs;
    const double last_loss =
        run.outcome.metrics.rows.empty() ? kMetricNa : run.outcome.metrics.rows.back().loss;
    run.outcome.metrics.add("summary", last_epoch, last_loss, run.c_acc, run.asr);
    return run;
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);  // binary: exact "\n" line endings
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace detail

/// gen-data: write clean train/test, the poisoned train set, and a manifest
/// carring the canonical config and its hash.
inline void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
    detail::ensure_dir(out_dir);
    const LabeledDataset clean_train = gen_train_set(cfg);
    const LabeledDataset clean_test = gen_test_set(cfg);
    const LabeledDataset poisoned = gen_poisoned_train(cfg, clean_train);
    save_dataset(clean_train, out_dir + "/clean_train.ulrd");
    save_dataset(clean_test, out_dir + "/clean_test.ulrd");
    save_dataset(poisoned, out_dir + "/poisoned_train.ulrd");
    auto manifest = detail::open_out(out_dir + "/manifest.txt");
    manifest << "config_hash = " << detail::hex64(config_hash(cfg)) << "\n";
    manifest << "file = clean_train.ulrd\n";
    manifest << "file = clean_test.ulrd\n";
    manifest << "file = poisoned_train.ulrd\n";
    manifest << canonical_config(cfg);
}

/// attack: train on the poisoned set from `data_dir`, write the checkpoint and
/// metrics CSV, then enforce the fixture gates.
inline AttackRun cmd_attack(const ExperimentConfig& cfg, const std::string& data_dir,
                            const std::string& out_dir) {
    detail::ensure_dir(out_dir);
    const LabeledDataset poisoned = load_dataset(data_dir + "/poisoned_train.ulrd");
    const LabeledDataset clean_test = load_dataset(data_dir + "/clean_test.ulrd");
    AttackRun run = run_attack(cfg, poisoned, clean_test, cfg.train_seed);
    save_model(run.model, out_dir + "/backdoored.ulrl");
    {
        auto csv = detail::open_out(out_dir + "/attack_metrics.csv");
        run.report.write_csv(csv);
    }
    if (run.c_acc < kGateCleanAccuracy || run.asr < kGateAttackSuccess)
        throw GateError("attack fixture gates failed: c_acc=" + csv_num(run.c_acc) +
                        " (need >= " + csv_num(kGateCleanAccuracy) + "), asr=" + csv_num(run.asr) +
                        " (need >= " + csv_num(kGateAttackSuccess) + ")");
    return run;
}

struct DefendSeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double c_acc = kMetricNa;
    double asr = kMetricNa;
    double c_acc_drop = kMetricNa;
    std::size_t s_size = 0;
    std::string flagged;
    int epochs_used = 0;
};

struct DefendResult {
    double baseline_c_acc = 0.0;
    double baseline_asr = 0.0;
    std::vector<DefendSeedResult> seeds;
};

namespace detail {

inline std::string join_flagged(const std::vector<int>& flagged) {
    std::string s;
    for (std::size_t i = 0; i < flagged.size(); ++i) s += (i ? ";" : "") + std::to_string(flagged[i]);
    return s;
}

inline std::string sanitize_message(std::string msg) {
    for (char& c : msg)
        if (c == ',' || c == '\n') c = ';';
    return msg;
}

struct Aggregate {
    double mean = kMetricNa, min = kMetricNa, max = kMetricNa;
};

inline Aggregate aggregate(const std::vector<double>& values) {
    if (values.empty()) return {};
    Aggregate a{0.0, values[0], values[0]};
    for (double v : values) {
        a.mean += v;
        a.min = std::min(a.min, v);
        a.max = std::max(a.max, v);
    }
    a.mean /= static_cast<double>(values.size());
    return a;
}

}  // namespace detail

/// defend: run the seeded defense ensemble against one checkpoint; per-seed
/// combined CSVs and purified checkpoints plus an aggregated summary CSV.
/// Individual seed failures are recorded and the remaining seeds continue; the
/// first error is rethrown only if every seed fails.
inline DefendResult cmd_defend(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                               const std::string& data_dir, const std::string& out_dir) {
    detail::ensure_dir(out_dir);
    const Model<float> model = load_model(checkpoint_path);
    const LabeledDataset clean_train = load_dataset(data_dir + "/clean_train.ulrd");
    const LabeledDataset clean_test = load_dataset(data_dir + "/clean_test.ulrd");

    DefendResult result;
    result.baseline_c_acc = clean_accuracy(model, clean_test);
    result.baseline_asr = attack_success_rate(model, clean_test, cfg.trigger_spec(), cfg.target_label);

    std::exception_ptr first_error;
    for (std::uint64_t seed : cfg.defense_seeds) {
        DefendSeedResult row;
        row.seed = seed;
        try {
            DefenseRun run = run_defense(model, clean_train, clean_test, cfg, seed);
            row.ok = true;
            row.c_acc = run.c_acc;
            row.asr = run.asr;
            row.c_acc_drop = result.baseline_c_acc - run.c_acc;
            row.s_size = run.outcome.suspicion.flagged.size();
            row.flagged = detail::join_flagged(run.outcome.suspicion.flagged);
            row.epochs_used = run.outcome.suspicion.epochs_used;
            save_model(run.outcome.model, out_dir + "/purified_seed" + std::to_string(seed) + ".ulrl");
            auto csv = detail::open_out(out_dir + "/defend_seed" + std::to_string(seed) + ".csv");
            run.outcome.suspicion.write_csv(csv);
            run.outcome.metrics.write_csv(csv);
        } catch (const Error& e) {
            if (!first_error) first_error = std::current_exception();
            row.ok = false;
            row.error = detail::sanitize_message(e.what());
        }
        result.seeds.push_back(std::move(row));
    }

    auto csv = detail::open_out(out_dir + "/defend_summary.csv");
    csv << "# baseline c_acc=" << csv_num(result.baseline_c_acc)
        << " asr=" << csv_num(result.baseline_asr) << "\n";
    csv << "seed,status,epochs_used,s_size,flagged,c_acc,asr,c_acc_drop\n";
    std::vector<double> accs, asrs, drops;
    for (const auto& row : result.seeds) {
        csv << row.seed << "," << (row.ok ? "ok" : row.error) << "," << row.epochs_used << "," << row.s_size
            << "," << row.flagged << "," << csv_num(row.c_acc) << "," << csv_num(row.asr) << ","
            << csv_num(row.c_acc_drop) << "\n";
        if (row.ok) {
            accs.push_back(row.c_acc);
            asrs.push_back(row.asr);
            drops.push_back(row.c_acc_drop);
        }
    }
    const auto acc_agg = detail::aggregate(accs), asr_agg = detail::aggregate(asrs),
               drop_agg = detail::aggregate(drops);
    csv << "mean,," << "," << "," << "," << csv_num(acc_agg.mean) << "," << csv_num(asr_agg.mean) << ","
        << csv_num(drop_agg.mean) << "\n";
    csv << "min,," << "," << "," << "," << csv_num(acc_agg.min) << "," << csv_num(asr_agg.min) << ","
        << csv_num(drop_agg.min) << "\n";
    csv << "max,," << "," << "," << "," << csv_num(acc_agg.max) << "," << csv_num(asr_agg.max) << ","
        << csv_num(drop_agg.max) << "\n";

    if (accs.empty() && first_error) std::rethrow_exception(first_error);
    return result;
}

struct EvalResult {
    double c_acc = 0.0;
    double asr = 0.0;
};

/// eval: metrics of an arbitrary checkpoint against the configured test set and trigger.
inline EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                           const std::string& data_dir, const std::string& out_dir) {
    detail::ensure_dir(out_dir);
    const Model<float> model = load_model(checkpoint_path);
    const LabeledDataset clean_test = load_dataset(data_dir + "/clean_test.ulrd");
    EvalResult result;
    result.c_acc = clean_accuracy(model, clean_test);
    result.asr = attack_success_rate(model, clean_test, cfg.trigger_spec(), cfg.target_label);
    auto csv = detail::open_out(out_dir + "/eval.csv");
    csv << "c_acc,asr\n" << csv_num(result.c_acc) << "," << csv_num(result.asr) << "\n";
    return result;
}

struct SweepRow {
    std::string value;
    std::uint64_t seed = 0;
    double attack_c_acc = kMetricNa;
    double attack_asr = kMetricNa;
    double defended_c_acc = kMetricNa;
    double defended_asr = kMetricNa;
    double c_acc_drop = kMetricNa;
    std::size_t s_size = 0;
    std::string flagged;
    int epochs_used = 0;
};

namespace detail {

inline ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& parameter,
                                          const std::string& value) {
    ExperimentConfig cfg = base;
    if (parameter == "defense_fraction") cfg.defense_fraction = parse_real(parameter, value);
    else if (parameter == "tau") cfg.tau = parse_real(parameter, value);
    else if (parameter == "hard_threshold") cfg.hard_threshold = static_cast<int>(parse_int(parameter, value));
    else if (parameter == "alpha") cfg.relearn_alpha = parse_real(parameter, value);
    else if (parameter == "poison_rate") cfg.poison_rate = parse_real(parameter, value);
    else if (parameter == "dispersion_method") apply_config_entry(cfg, "identify.method", value);
    else if (parameter == "regularizer") apply_config_entry(cfg, "relearn.regularizer", value);
    else throw ConfigError("sweep: unknown parameter '" + parameter + "'");
    return cfg;
}

}  // namespace detail

/// sweep: cross product of configured values and defense seeds, one row each,
/// plus mean/min/max aggregate rows per value. Attack models are trained once
/// per seed and shared across values unless the swept parameter changes the
/// attack itself (poison_rate).
inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (cfg.sweep_parameter.empty()) throw ConfigError("sweep: sweep.parameter is not set");
    if (cfg.sweep_values.empty()) throw ConfigError("sweep: sweep.values is empty");
    detail::ensure_dir(out_dir);

    const LabeledDataset clean_train = gen_train_set(cfg);
    const LabeledDataset clean_test = gen_test_set(cfg);
    const bool retrain_per_value = cfg.sweep_parameter == "poison_rate";

    std::map<std::uint64_t, AttackRun> attack_cache;
    if (!retrain_per_value) {
        const LabeledDataset poisoned = gen_poisoned_train(cfg, clean_train);
        for (std::uint64_t seed : cfg.defense_seeds)
            attack_cache.emplace(seed, run_attack(cfg, poisoned, clean_test, seed));
    }

    std::vector<SweepRow> rows;
    for (const std::string& value : cfg.sweep_values) {
        const ExperimentConfig varied = detail::apply_sweep_value(cfg, cfg.sweep_parameter, value);
        std::map<std::uint64_t, AttackRun> local_cache;
        if (retrain_per_value) {
            for (std::uint64_t seed : cfg.defense_seeds) {
                Rng poison_rng(derive_seed(seed, kStreamPoison));
                LabeledDataset poisoned =
                    poison_dataset(clean_train, varied.trigger_spec(), varied.poison_plan(), poison_rng);
                local_cache.emplace(seed, run_attack(varied, poisoned, clean_test, seed));
            }
        }
        const auto& cache = retrain_per_value ? local_cache : attack_cache;
        for (std::uint64_t seed : cfg.defense_seeds) {
            const AttackRun& attack = cache.at(seed);
            SweepRow row;
            row.value = value;
            row.seed = seed;
            row.attack_c_acc = attack.c_acc;
            row.attack_asr = attack.asr;
            try {
                DefenseRun defense = run_defense(attack.model, clean_train, clean_test, varied, seed);
                row.defended_c_acc = defense.c_acc;
                row.defended_asr = defense.asr;
                row.c_acc_drop = attack.c_acc - defense.c_acc;
                row.s_size = defense.outcome.suspicion.flagged.size();
                row.flagged = detail::join_flagged(defense.outcome.suspicion.flagged);
                row.epochs_used = defense.outcome.suspicion.epochs_used;
            } catch (const Error& e) {
                row.flagged = detail::sanitize_message(e.what());  // failed runs keep their row
            }
            rows.push_back(std::move(row));
        }
    }

    auto csv = detail::open_out(out_dir + "/sweep_" + cfg.sweep_parameter + ".csv");
    csv << "parameter,value,seed,attack_c_acc,attack_asr,defended_c_acc,defended_asr,c_acc_drop,s_size,"
           "flagged,epochs_used\n";
    for (const auto& r : rows)
        csv << cfg.sweep_parameter << "," << r.value << "," << r.seed << "," << csv_num(r.attack_c_acc)
            << "," << csv_num(r.attack_asr) << "," << csv_num(r.defended_c_acc) << ","
            << csv_num(r.defended_asr) << "," << csv_num(r.c_acc_drop) << "," << r.s_size << ","
            << r.flagged << "," << r.epochs_used << "\n";
    for (const std::string& value : cfg.sweep_values) {
        std::vector<double> acc, asr;
        for (const auto& r : rows)
            if (r.value == value) {
                acc.push_back(r.defended_c_acc);
                asr.push_back(r.defended_asr);
            }
        const auto acc_agg = detail::aggregate(acc), asr_agg = detail::aggregate(asr);
        csv << cfg.sweep_parameter << "," << value << ",mean,,," << csv_num(acc_agg.mean) << ","
            << csv_num(asr_agg.mean) << ",,,,\n";
        csv << cfg.sweep_parameter << "," << value << ",min,,," << csv_num(acc_agg.min) << ","
            << csv_num(asr_agg.min) << ",,,,\n";
        csv << cfg.sweep_parameter << "," << value << ",max,,," << csv_num(acc_agg.max) << ","
            << csv_num(asr_agg.max) << ",,,,\n";
    }
    return rows;
}

}  // namespace ulrl

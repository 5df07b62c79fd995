#pragma once

#include <string>
#include <utility>

#include "ulrl/metrics.hpp"
#include "ulrl/relearn.hpp"
#include "ulrl/unlearn.hpp"

namespace ulrl {

struct DefendConfig {
    UnlearnConfig unlearn;
    DispersionMethod method = DispersionMethod::Mad;
    double tau = 3.5;
    int hard_threshold = 2;
    int random_neurons = 0;  // > 0 replaces identification with a random set (ablation)
    RelearnConfig relearn;
};

struct DefenseOutcome {
    Model<float> model;  // purified
    SuspicionReport suspicion;
    MetricsReport metrics;  // unlearn + relearn curves; summary rows appended by callers
};

/// Full two-phase defense: unlearn on the defense set, flag suspicious classifier
/// neurons, He-reinitialize them and relearn with the similarity penalty. The
/// input model is never modified. An empty suspicion set degrades to plain
/// fine-tuning with an explicit warning.
inline DefenseOutcome ulrl_defend(const Model<float>& model, const LabeledDataset& defense,
                                  DefendConfig cfg, Rng& rng) {
    if (defense.size() == 0) throw InputError("ulrl_defend: defense set is empty");
    if (defense.any_poisoned()) throw InputError("ulrl_defend: defense set must be unpoisoned");

    cfg.unlearn.shuffle_seed = rng.next_u64();
    cfg.relearn.shuffle_seed = rng.next_u64();

    UnlearnOutcome phase1 = unlearn(model, defense, cfg.unlearn);

    const std::vector<double> delta = aggregate_delta(phase1.pre, phase1.post);
    SuspicionReport report;
    if (cfg.random_neurons > 0) {
        report = identify_suspicious(delta, cfg.method, cfg.tau, cfg.hard_threshold);
        report.flagged =
            select_random_neurons(static_cast<int>(model.num_classes()), cfg.random_neurons, rng);
        report.random_selection = true;
    } else {
        report = identify_suspicious(delta, cfg.method, cfg.tau, cfg.hard_threshold);
    }
    report.epochs_used = phase1.epochs_used;

    DefenseOutcome out;
    out.metrics.rows = phase1.curve;

    OriginalRowBank<float> bank;
    Model<float> reinitialized = phase1.model;  // == input model, restored
    if (report.flagged.empty()) {
        out.metrics.warnings.push_back("empty_suspicion_set_plain_finetune");
    } else {
        bank = capture_rows(reinitialized, report.flagged);
        reinitialized = reinit_neurons(std::move(reinitialized), report.flagged, rng);
    }

    RelearnOutcome phase2 = relearn(reinitialized, bank, defense, cfg.relearn);
    out.model = std::move(phase2.model);
    out.suspicion = std::move(report);
    out.metrics.rows.insert(out.metrics.rows.end(), phase2.curve.begin(), phase2.curve.end());
    return out;
}

}  // namespace ulrl

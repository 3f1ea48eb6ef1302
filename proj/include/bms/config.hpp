#pragma once

// Run configuration: JSON on disk, one struct in memory. Defaults follow
// the desk-scale protocol (batch 32 for trajectories, 4 for the image task,
// T_train 10 / 5).

#include <cstdint>
#include <string>

#include <json.hpp>

#include "bms/data.hpp"
#include "bms/metrics.hpp"
#include "bms/objectives.hpp"

namespace bms {

struct DataConfig {
    int n = 2000;
    double train_frac = 0.8;
    ForkSpec fork;
    BlobSpec blobs;
    std::string jsonl_path;
};

struct RunConfig {
    std::string task = "fork";  // fork | star | fork_map | blobs | jsonl
    std::string objective = "bms";
    int t_train = 10;  // samples per example during training
    double alpha = 0.5;
    std::string profile = "desk";
    std::string dtype = "f64";
    std::int64_t steps = 2000;
    int batch = 32;
    std::uint64_t seed = 1;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double sigma_dec = 1.0;
    bool teacher_forcing = false;
    std::int64_t eval_every = 200;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
    DataConfig data;
    EvalConfig eval;
    std::string out_dir = "out";

    void validate() const;
    bool image_task() const { return task == "blobs"; }
    ObjectiveKind objective_kind() const { return objective_from_string(objective); }

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load_file(const std::string& path);
};

// Applies the BMS_SEED environment override, when set.
void apply_seed_env(RunConfig& cfg);

}  // namespace bms

#include "bms/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace bms {

namespace {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

nlohmann::json fork_to_json(const ForkSpec& s) {
    nlohmann::json j;
    j["t_obs"] = s.t_obs;
    j["t_fut"] = s.t_fut;
    j["speed"] = s.speed;
    j["branch_angle"] = s.branch_angle;
    j["noise_std"] = s.noise_std;
    j["n_modes"] = s.n_modes;
    if (!s.mode_probs.empty()) j["mode_probs"] = s.mode_probs;
    j["star_layout"] = s.star_layout;
    j["scene_hw"] = s.scene_hw;
    j["corridor_width"] = s.corridor_width;
    return j;
}

ForkSpec fork_from_json(const nlohmann::json& j) {
    ForkSpec s;
    get_if(j, "t_obs", s.t_obs);
    get_if(j, "t_fut", s.t_fut);
    get_if(j, "speed", s.speed);
    get_if(j, "branch_angle", s.branch_angle);
    get_if(j, "noise_std", s.noise_std);
    get_if(j, "n_modes", s.n_modes);
    get_if(j, "mode_probs", s.mode_probs);
    get_if(j, "star_layout", s.star_layout);
    get_if(j, "scene_hw", s.scene_hw);
    get_if(j, "corridor_width", s.corridor_width);
    return s;
}

nlohmann::json blobs_to_json(const BlobSpec& s) {
    nlohmann::json j;
    j["grid"] = s.grid;
    j["t_obs"] = s.t_obs;
    j["t_fut"] = s.t_fut;
    j["blob_sigma"] = s.blob_sigma;
    j["n_directions"] = s.n_directions;
    j["obs_speed"] = s.obs_speed;
    j["fut_speed"] = s.fut_speed;
    return j;
}

BlobSpec blobs_from_json(const nlohmann::json& j) {
    BlobSpec s;
    get_if(j, "grid", s.grid);
    get_if(j, "t_obs", s.t_obs);
    get_if(j, "t_fut", s.t_fut);
    get_if(j, "blob_sigma", s.blob_sigma);
    get_if(j, "n_directions", s.n_directions);
    get_if(j, "obs_speed", s.obs_speed);
    get_if(j, "fut_speed", s.fut_speed);
    return s;
}

}  // namespace

void RunConfig::validate() const {
    static const std::set<std::string> tasks{"fork", "star", "fork_map", "blobs", "jsonl"};
    if (!tasks.count(task)) throw ConfigError("unknown task: " + task);
    objective_from_string(objective);  // throws on bad values
    profile_from_string(profile);
    if (dtype != "f64" && dtype != "f32") throw ConfigError("dtype must be f64 or f32");
    if (t_train < 1) throw ConfigError("t_train must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidAlpha("alpha must lie in [0,1]");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(sigma_dec > 0)) throw ConfigError("sigma_dec must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (task == "jsonl" && data.jsonl_path.empty())
        throw ConfigError("jsonl task needs data.jsonl_path");
    if (!(data.train_frac > 0 && data.train_frac < 1))
        throw InvalidFraction("data.train_frac must lie in (0,1)");
    if (task == "blobs") {
        data.blobs.validate();
    } else if (task != "jsonl") {
        ForkSpec effective = data.fork;
        effective.star_layout = task == "star";
        effective.validate();
    }
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["objective"] = objective;
    j["t_train"] = t_train;
    j["alpha"] = alpha;
    j["profile"] = profile;
    j["dtype"] = dtype;
    j["steps"] = steps;
    j["batch"] = batch;
    j["seed"] = seed;
    j["lr"] = lr;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["adam_eps"] = adam_eps;
    j["sigma_dec"] = sigma_dec;
    j["teacher_forcing"] = teacher_forcing;
    j["eval_every"] = eval_every;
    j["checkpoint_every"] = checkpoint_every;
    j["out_dir"] = out_dir;
    j["data"] = {{"n", data.n}, {"train_frac", data.train_frac}, {"fork", fork_to_json(data.fork)},
                 {"blobs", blobs_to_json(data.blobs)}};
    if (!data.jsonl_path.empty()) j["data"]["jsonl_path"] = data.jsonl_path;
    j["eval"] = {{"t_samples_cll", eval.t_samples_cll},
                 {"topk_frac", eval.topk_frac},
                 {"csi_threshold", eval.csi_threshold},
                 {"sigma_cll", eval.sigma_cll}};
    if (!eval.horizons.empty()) j["eval"]["horizons"] = eval.horizons;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    get_if(j, "task", c.task);
    get_if(j, "objective", c.objective);
    get_if(j, "t_train", c.t_train);
    get_if(j, "alpha", c.alpha);
    get_if(j, "profile", c.profile);
    get_if(j, "dtype", c.dtype);
    get_if(j, "steps", c.steps);
    get_if(j, "batch", c.batch);
    get_if(j, "seed", c.seed);
    get_if(j, "lr", c.lr);
    get_if(j, "beta1", c.beta1);
    get_if(j, "beta2", c.beta2);
    get_if(j, "adam_eps", c.adam_eps);
    get_if(j, "sigma_dec", c.sigma_dec);
    get_if(j, "teacher_forcing", c.teacher_forcing);
    get_if(j, "eval_every", c.eval_every);
    get_if(j, "checkpoint_every", c.checkpoint_every);
    get_if(j, "out_dir", c.out_dir);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        get_if(d, "n", c.data.n);
        get_if(d, "train_frac", c.data.train_frac);
        get_if(d, "jsonl_path", c.data.jsonl_path);
        if (d.contains("fork")) c.data.fork = fork_from_json(d.at("fork"));
        if (d.contains("blobs")) c.data.blobs = blobs_from_json(d.at("blobs"));
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        get_if(e, "t_samples_cll", c.eval.t_samples_cll);
        get_if(e, "topk_frac", c.eval.topk_frac);
        get_if(e, "csi_threshold", c.eval.csi_threshold);
        get_if(e, "sigma_cll", c.eval.sigma_cll);
        get_if(e, "horizons", c.eval.horizons);
    }
    // the image task defaults to the paper's batch size when unspecified
    if (c.task == "blobs" && !j.contains("batch")) c.batch = 4;
    if (c.task == "blobs" && !j.contains("t_train")) c.t_train = 5;
    return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("bad config json: ") + e.what());
    }
    RunConfig c = from_json(j);
    c.validate();
    return c;
}

void apply_seed_env(RunConfig& cfg) {
    if (const char* env = std::getenv("BMS_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (!end || *end != '\0') throw ConfigError("BMS_SEED must be an unsigned integer");
        cfg.seed = static_cast<std::uint64_t>(v);
    }
}

}  // namespace bms

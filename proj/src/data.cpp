#include "bms/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bms/objectives.hpp"
#include "bms/rng.hpp"

namespace bms {

namespace {

constexpr double kPi = 3.14159265358979323846;

int draw_mode(const std::vector<double>& probs, RngStream& rng) {
    const double u = rng.uniform();
    double acc = 0;
    for (std::size_t m = 0; m < probs.size(); ++m) {
        acc += probs[m];
        if (u < acc) return static_cast<int>(m);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

void ForkSpec::validate() const {
    if (t_obs < 1 || t_fut < 1) throw InvalidSpec("fork: t_obs and t_fut must be >= 1");
    if (!(noise_std > 0)) throw InvalidSpec("fork: noise_std must be positive");
    if (n_modes < 1) throw InvalidSpec("fork: n_modes must be >= 1");
    if (!star_layout && n_modes > 2) throw InvalidSpec("fork: at most two modes; use the star task");
    if (!mode_probs.empty()) {
        if (static_cast<int>(mode_probs.size()) != n_modes)
            throw InvalidSpec("fork: mode_probs length must equal n_modes");
        double s = 0;
        for (double p : mode_probs) {
            if (p < 0) throw InvalidSpec("fork: negative mode probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) throw InvalidSpec("fork: mode_probs must sum to 1");
    }
}

std::vector<double> ForkSpec::probs() const {
    if (!mode_probs.empty()) return mode_probs;
    return std::vector<double>(static_cast<std::size_t>(n_modes), 1.0 / n_modes);
}

std::vector<double> ForkSpec::angles() const {
    std::vector<double> a;
    if (star_layout) {
        for (int m = 0; m < n_modes; ++m)
            a.push_back(branch_angle + 2.0 * kPi * m / n_modes);
    } else {
        a.push_back(branch_angle);
        if (n_modes == 2) a.push_back(-branch_angle);
    }
    return a;
}

namespace {

TrajectoryExample gen_one_fork(const ForkSpec& spec, RngStream& rng) {
    TrajectoryExample ex;
    const auto probs = spec.probs();
    const auto angles = spec.angles();
    ex.mode = draw_mode(probs, rng);
    ex.obs.reserve(static_cast<std::size_t>(spec.t_obs));
    for (int t = 0; t < spec.t_obs; ++t)
        ex.obs.push_back({spec.speed + spec.noise_std * rng.normal(),
                          spec.noise_std * rng.normal()});
    const double a = angles[static_cast<std::size_t>(ex.mode)];
    const double dx = spec.speed * std::cos(a);
    const double dy = spec.speed * std::sin(a);
    ex.fut.reserve(static_cast<std::size_t>(spec.t_fut));
    for (int t = 0; t < spec.t_fut; ++t)
        ex.fut.push_back({dx + spec.noise_std * rng.normal(), dy + spec.noise_std * rng.normal()});
    return ex;
}

}  // namespace

TrajectoryDataset gen_fork(const ForkSpec& spec, int n, std::uint64_t seed) {
    spec.validate();
    if (n < 1) throw InvalidSpec("gen_fork: n must be >= 1");
    TrajectoryDataset ds;
    ds.t_obs = spec.t_obs;
    ds.t_fut = spec.t_fut;
    ds.examples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, static_cast<std::uint64_t>(i));
        ds.examples.push_back(gen_one_fork(spec, rng));
    }
    return ds;
}

TrajectoryDataset gen_star(ForkSpec spec, int n, std::uint64_t seed) {
    spec.star_layout = true;
    if (spec.n_modes < 1) throw InvalidSpec("gen_star: n_modes must be >= 1");
    return gen_fork(spec, n, seed);
}

namespace {

// Rasterizes the corridor around the noiseless path of one mode. World
// coordinates map to the square image with the path starting at the left
// edge, vertically centred.
std::vector<double> corridor_image(const ForkSpec& spec, int mode) {
    const int hw = spec.scene_hw;
    const auto angles = spec.angles();
    const double a = angles[static_cast<std::size_t>(mode)];
    // noiseless centerline points: observation then branch
    std::vector<std::array<double, 2>> pts;
    double px = 0, py = 0;
    pts.push_back({px, py});
    for (int t = 0; t < spec.t_obs; ++t) {
        px += spec.speed;
        pts.push_back({px, py});
    }
    for (int t = 0; t < spec.t_fut; ++t) {
        px += spec.speed * std::cos(a);
        py += spec.speed * std::sin(a);
        pts.push_back({px, py});
    }
    const double extent = spec.speed * (spec.t_obs + spec.t_fut) + 2.0;
    const double scale = hw / extent;
    auto world_of_pixel = [&](int ix, int iy) {
        const double wx = (ix + 0.5) / scale - 1.0;
        const double wy = (iy + 0.5 - hw / 2.0) / scale;
        return std::array<double, 2>{wx, wy};
    };
    auto seg_dist = [](const std::array<double, 2>& p, const std::array<double, 2>& a0,
                       const std::array<double, 2>& a1) {
        const double vx = a1[0] - a0[0], vy = a1[1] - a0[1];
        const double wx = p[0] - a0[0], wy = p[1] - a0[1];
        const double vv = vx * vx + vy * vy;
        double t = vv > 0 ? (wx * vx + wy * vy) / vv : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dx = wx - t * vx, dy = wy - t * vy;
        return std::sqrt(dx * dx + dy * dy);
    };
    std::vector<double> img(static_cast<std::size_t>(hw) * hw, 0.0);
    for (int iy = 0; iy < hw; ++iy)
        for (int ix = 0; ix < hw; ++ix) {
            const auto p = world_of_pixel(ix, iy);
            double d = 1e100;
            for (std::size_t s = 0; s + 1 < pts.size(); ++s)
                d = std::min(d, seg_dist(p, pts[s], pts[s + 1]));
            if (d <= spec.corridor_width)
                img[static_cast<std::size_t>(iy) * hw + ix] = 1.0;
        }
    return img;
}

}  // namespace

TrajectoryDataset gen_fork_with_map(const ForkSpec& spec, int n, std::uint64_t seed) {
    spec.validate();
    if (spec.n_modes != 2 || spec.star_layout)
        throw InvalidSpec("gen_fork_with_map: exactly two corridor types");
    if (spec.scene_hw % 16 != 0) throw InvalidSpec("gen_fork_with_map: scene_hw must be divisible by 16");
    // two deterministic corridor images, one per branch
    const std::vector<std::vector<double>> scenes{corridor_image(spec, 0), corridor_image(spec, 1)};
    TrajectoryDataset ds;
    ds.t_obs = spec.t_obs;
    ds.t_fut = spec.t_fut;
    ds.examples.reserve(static_cast<std::size_t>(n));
    ForkSpec forced = spec;
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, static_cast<std::uint64_t>(i));
        const int corridor = rng.uniform() < 0.5 ? 0 : 1;
        forced.mode_probs = corridor == 0 ? std::vector<double>{1.0, 0.0}
                                          : std::vector<double>{0.0, 1.0};
        auto ex = gen_one_fork(forced, rng);
        ex.scene = scenes[static_cast<std::size_t>(corridor)];
        ex.scene_hw = spec.scene_hw;
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

double fork_analytic_ncll(const ForkSpec& spec, const TrajectoryExample& ex) {
    const auto probs = spec.probs();
    const auto angles = spec.angles();
    const double var = spec.noise_std * spec.noise_std;
    std::vector<double> comp_log;
    for (std::size_t m = 0; m < angles.size(); ++m) {
        if (probs[m] <= 0) continue;
        const double dx = spec.speed * std::cos(angles[m]);
        const double dy = spec.speed * std::sin(angles[m]);
        double ll = std::log(probs[m]);
        for (const auto& step : ex.fut) {
            const double ex_ = step[0] - dx, ey = step[1] - dy;
            ll += -std::log(2.0 * kPi * var) - (ex_ * ex_ + ey * ey) / (2.0 * var);
        }
        comp_log.push_back(ll);
    }
    return -logsumexp_vals(comp_log);
}

double fork_analytic_ncll_known_mode(const ForkSpec& spec, const TrajectoryExample& ex) {
    const auto angles = spec.angles();
    const double var = spec.noise_std * spec.noise_std;
    const double dx = spec.speed * std::cos(angles[static_cast<std::size_t>(ex.mode)]);
    const double dy = spec.speed * std::sin(angles[static_cast<std::size_t>(ex.mode)]);
    double ll = 0;
    for (const auto& step : ex.fut) {
        const double ex_ = step[0] - dx, ey = step[1] - dy;
        ll += -std::log(2.0 * kPi * var) - (ex_ * ex_ + ey * ey) / (2.0 * var);
    }
    return -ll;
}

std::vector<std::array<double, 2>> cumulative_positions(
    const std::vector<std::array<double, 2>>& rel) {
    std::vector<std::array<double, 2>> pos;
    pos.reserve(rel.size());
    double x = 0, y = 0;
    for (const auto& d : rel) {
        x += d[0];
        y += d[1];
        pos.push_back({x, y});
    }
    return pos;
}

// ---------------------------------------------------------------------------

void BlobSpec::validate() const {
    if (grid < 4 || grid % 4 != 0) throw InvalidSpec("blobs: grid must be a positive multiple of 4");
    if (t_obs < 1 || t_fut < 1) throw InvalidSpec("blobs: t_obs and t_fut must be >= 1");
    if (!(blob_sigma > 0)) throw InvalidSpec("blobs: blob_sigma must be positive");
    if (n_directions < 1) throw InvalidSpec("blobs: n_directions must be >= 1");
}

std::array<double, 2> blob_future_center(const BlobSpec& spec, const ImageSequenceExample& ex,
                                         int direction, int t) {
    const double a = 2.0 * kPi * direction / spec.n_directions;
    const double ox = ex.start[0] + ex.obs_vel[0] * (spec.t_obs - 1);
    const double oy = ex.start[1] + ex.obs_vel[1] * (spec.t_obs - 1);
    return {ox + spec.fut_speed * std::cos(a) * (t + 1), oy + spec.fut_speed * std::sin(a) * (t + 1)};
}

ImageSequenceDataset gen_blobs(const BlobSpec& spec, int n, std::uint64_t seed) {
    spec.validate();
    if (n < 1) throw InvalidSpec("gen_blobs: n must be >= 1");
    ImageSequenceDataset ds;
    ds.spec = spec;
    ds.examples.reserve(static_cast<std::size_t>(n));
    const int g = spec.grid;
    auto render = [&](double cx, double cy) {
        std::vector<double> frame(static_cast<std::size_t>(g) * g);
        const double s2 = 2.0 * spec.blob_sigma * spec.blob_sigma;
        for (int y = 0; y < g; ++y)
            for (int x = 0; x < g; ++x) {
                const double dx = x - cx, dy = y - cy;
                frame[static_cast<std::size_t>(y) * g + x] = std::exp(-(dx * dx + dy * dy) / s2);
            }
        return frame;
    };
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, static_cast<std::uint64_t>(i));
        ImageSequenceExample ex;
        ex.start = {g / 2.0 + rng.uniform(-1, 1), g / 2.0 + rng.uniform(-1, 1)};
        const double oa = rng.uniform(0, 2.0 * kPi);
        ex.obs_vel = {spec.obs_speed * std::cos(oa), spec.obs_speed * std::sin(oa)};
        ex.direction = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_directions)));
        for (int t = 0; t < spec.t_obs; ++t)
            ex.frames_obs.push_back(render(ex.start[0] + ex.obs_vel[0] * t,
                                           ex.start[1] + ex.obs_vel[1] * t));
        for (int t = 0; t < spec.t_fut; ++t) {
            const auto c = blob_future_center(spec, ex, ex.direction, t);
            ex.frames_fut.push_back(render(c[0], c[1]));
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::array<double, 2> parse_step(const nlohmann::json& v, int line, const char* field) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw SchemaError("line " + std::to_string(line) + ": " + field +
                          " entries must be [dx, dy] pairs");
    const double a = v[0].get<double>(), b = v[1].get<double>();
    if (!std::isfinite(a) || !std::isfinite(b))
        throw SchemaError("line " + std::to_string(line) + ": non-finite value in " + field);
    return {a, b};
}

}  // namespace

TrajectoryDataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    TrajectoryDataset ds;
    std::string linebuf;
    int lineno = 0;
    while (std::getline(in, linebuf)) {
        ++lineno;
        if (linebuf.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(linebuf);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, e.what());
        }
        std::string missing;
        for (const char* field : {"obs", "fut"})
            if (!j.contains(field)) missing += missing.empty() ? field : std::string(", ") + field;
        if (!missing.empty())
            throw SchemaError("line " + std::to_string(lineno) + ": missing fields: " + missing);
        if (!j["obs"].is_array() || !j["fut"].is_array() || j["obs"].empty() || j["fut"].empty())
            throw SchemaError("line " + std::to_string(lineno) +
                              ": obs and fut must be non-empty arrays");
        TrajectoryExample ex;
        for (const auto& v : j["obs"]) ex.obs.push_back(parse_step(v, lineno, "obs"));
        for (const auto& v : j["fut"]) ex.fut.push_back(parse_step(v, lineno, "fut"));
        if (j.contains("meta") && j["meta"].is_object() && j["meta"].contains("mode"))
            ex.mode = j["meta"]["mode"].get<int>();
        if (ds.examples.empty()) {
            ds.t_obs = static_cast<int>(ex.obs.size());
            ds.t_fut = static_cast<int>(ex.fut.size());
        } else if (static_cast<int>(ex.obs.size()) != ds.t_obs ||
                   static_cast<int>(ex.fut.size()) != ds.t_fut) {
            throw SchemaError("line " + std::to_string(lineno) + ": ragged sequence lengths");
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

std::string to_jsonl(const TrajectoryDataset& ds) {
    std::ostringstream out;
    for (const auto& ex : ds.examples) {
        nlohmann::json j;
        for (const auto& s : ex.obs) j["obs"].push_back({s[0], s[1]});
        for (const auto& s : ex.fut) j["fut"].push_back({s[0], s[1]});
        j["meta"] = nlohmann::json::object();
        if (ex.mode >= 0) j["meta"]["mode"] = ex.mode;
        out << j.dump() << "\n";
    }
    return out.str();
}

void save_jsonl(const TrajectoryDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << to_jsonl(ds);
}

// ---------------------------------------------------------------------------

template <typename DS>
static std::pair<DS, DS> split_impl(const DS& ds, double frac, std::uint64_t seed) {
    if (!(frac > 0.0 && frac < 1.0)) throw InvalidFraction("split: frac must lie in (0,1)");
    const std::size_t n = ds.examples.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    RngStream rng(seed, 0x5eed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    const std::size_t k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    DS train = ds, test = ds;
    train.examples.clear();
    test.examples.clear();
    for (std::size_t i = 0; i < n; ++i)
        (i < k ? train : test).examples.push_back(ds.examples[idx[i]]);
    return {train, test};
}

std::pair<TrajectoryDataset, TrajectoryDataset> split(const TrajectoryDataset& ds, double frac,
                                                      std::uint64_t seed) {
    return split_impl(ds, frac, seed);
}

std::pair<ImageSequenceDataset, ImageSequenceDataset> split(const ImageSequenceDataset& ds,
                                                            double frac, std::uint64_t seed) {
    return split_impl(ds, frac, seed);
}

int classify_mode(const ForkSpec& spec, const std::vector<std::array<double, 2>>& fut) {
    double sx = 0, sy = 0;
    for (const auto& d : fut) {
        sx += d[0];
        sy += d[1];
    }
    const double heading = std::atan2(sy, sx);
    const auto angs = spec.angles();
    int best = 0;
    double bd = 1e300;
    for (std::size_t m = 0; m < angs.size(); ++m) {
        double diff = std::abs(heading - angs[m]);
        while (diff > kPi) diff = std::abs(diff - 2.0 * kPi);
        if (diff < bd) {
            bd = diff;
            best = static_cast<int>(m);
        }
    }
    return best;
}

}  // namespace bms

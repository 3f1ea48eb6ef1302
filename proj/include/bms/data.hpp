#pragma once

// Synthetic multimodal datasets with analytically known structure, plus the
// JSONL ingestion format for external trajectory data. Trajectories are
// stored as per-step relative displacements; absolute positions come from
// the cumulative sum.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bms/errors.hpp"

namespace bms {

struct TrajectoryExample {
    std::vector<std::array<double, 2>> obs;
    std::vector<std::array<double, 2>> fut;
    int mode = -1;                // generator metadata, never shown to models
    std::vector<double> scene;    // flattened binary corridor image, optional
    int scene_hw = 0;

    bool operator==(const TrajectoryExample& o) const {
        return obs == o.obs && fut == o.fut && mode == o.mode && scene == o.scene &&
               scene_hw == o.scene_hw;
    }
};

struct ForkSpec {
    int t_obs = 8;
    int t_fut = 12;
    double speed = 1.0;
    double branch_angle = 0.7853981633974483;  // pi/4
    double noise_std = 0.05;
    int n_modes = 2;
    std::vector<double> mode_probs;  // empty -> uniform
    bool star_layout = false;        // modes equally spaced on the circle
    int scene_hw = 64;               // corridor image resolution (fork_with_map)
    double corridor_width = 1.5;     // world units

    void validate() const;
    std::vector<double> probs() const;   // normalized-checked mode probabilities
    std::vector<double> angles() const;  // future heading per mode
};

struct TrajectoryDataset {
    std::vector<TrajectoryExample> examples;
    int t_obs = 0, t_fut = 0;

    std::size_t size() const { return examples.size(); }
    bool operator==(const TrajectoryDataset& o) const {
        return examples == o.examples && t_obs == o.t_obs && t_fut == o.t_fut;
    }
};

TrajectoryDataset gen_fork(const ForkSpec& spec, int n, std::uint64_t seed);
TrajectoryDataset gen_star(ForkSpec spec, int n, std::uint64_t seed);
TrajectoryDataset gen_fork_with_map(const ForkSpec& spec, int n, std::uint64_t seed);

// Exact negative log of the mixture density of the future displacements
// under the generator: -log sum_m pi_m N(y; mu_m, noise^2 I). This is the
// information floor any model's NCLL is compared against.
double fork_analytic_ncll(const ForkSpec& spec, const TrajectoryExample& ex);

// Floor when the mode is known (map-conditioned): single-component density.
double fork_analytic_ncll_known_mode(const ForkSpec& spec, const TrajectoryExample& ex);

// Absolute positions from displacements, starting at the origin.
std::vector<std::array<double, 2>> cumulative_positions(
    const std::vector<std::array<double, 2>>& rel);

// ---------------------------------------------------------------------------

struct BlobSpec {
    int grid = 16;
    int t_obs = 5;
    int t_fut = 15;
    double blob_sigma = 1.3;
    int n_directions = 4;
    double obs_speed = 0.3;
    double fut_speed = 0.35;

    void validate() const;
};

struct ImageSequenceExample {
    std::vector<std::vector<double>> frames_obs;  // t_obs planes of grid*grid
    std::vector<std::vector<double>> frames_fut;
    int direction = -1;
    std::array<double, 2> start{0, 0};
    std::array<double, 2> obs_vel{0, 0};

    bool operator==(const ImageSequenceExample& o) const {
        return frames_obs == o.frames_obs && frames_fut == o.frames_fut &&
               direction == o.direction && start == o.start && obs_vel == o.obs_vel;
    }
};

struct ImageSequenceDataset {
    std::vector<ImageSequenceExample> examples;
    BlobSpec spec;

    std::size_t size() const { return examples.size(); }
    bool operator==(const ImageSequenceDataset& o) const { return examples == o.examples; }
};

ImageSequenceDataset gen_blobs(const BlobSpec& spec, int n, std::uint64_t seed);

// True blob centre at future step t (0-based) for a given direction.
std::array<double, 2> blob_future_center(const BlobSpec& spec, const ImageSequenceExample& ex,
                                         int direction, int t);

// ---------------------------------------------------------------------------

// One JSON object per line: {"obs": [[dx,dy],...], "fut": [[dx,dy],...],
// "meta": {...}}. Empty file -> empty dataset.
TrajectoryDataset load_jsonl(const std::string& path);
void save_jsonl(const TrajectoryDataset& ds, const std::string& path);
std::string to_jsonl(const TrajectoryDataset& ds);

// Deterministic shuffled split; disjoint and exhaustive.
std::pair<TrajectoryDataset, TrajectoryDataset> split(const TrajectoryDataset& ds, double frac,
                                                      std::uint64_t seed);
std::pair<ImageSequenceDataset, ImageSequenceDataset> split(const ImageSequenceDataset& ds,
                                                            double frac, std::uint64_t seed);

// Nearest generator mode by the direction of the net future displacement.
int classify_mode(const ForkSpec& spec, const std::vector<std::array<double, 2>>& fut);

}  // namespace bms

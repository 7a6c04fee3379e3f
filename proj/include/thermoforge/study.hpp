#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "thermoforge/config_graph.hpp"
#include "thermoforge/oloc.hpp"
#include "thermoforge/physics.hpp"

namespace thermoforge {

enum class Sampler { lhs, random_sorted };
enum class SplitMode { single, multi, all };

std::string to_string(Sampler s);
std::string to_string(SplitMode m);
Sampler sampler_from_string(const std::string& s);
SplitMode split_mode_from_string(const std::string& s);

struct StudySpec {
    int n_nodes = 3;
    int n_pop = 100;
    double d_low = 4.0;  // kW
    double d_high = 16.0;
    Sampler sampler = Sampler::lhs;
    SplitMode split_mode = SplitMode::single;
    int max_depth = 0;  // 0 means unlimited
    std::uint64_t seed = 0;
    SolveOptions solver;
    ThermalParams params;

    void validate() const;
};

nlohmann::json to_json(const StudySpec& s);
StudySpec study_spec_from_json(const nlohmann::json& j);

struct SampleRecord {
    int id = 0;
    std::vector<double> loads;  // kW
    std::vector<double> J;      // verified endurance per configuration, s
    std::vector<bool> converged;
    int label = -1;
    bool valid = true;
};

struct Dataset {
    StudySpec spec;
    std::vector<ConfigGraph> configs;
    std::vector<SampleRecord> records;

    int n_conf() const { return static_cast<int>(configs.size()); }
    std::vector<int> valid_indices() const;
};

// n_pop x n_dims in kW; one point per bin and dimension, jittered in the bin.
Eigen::MatrixXd lhs_sample(int n_pop, int n_dims, double lo, double hi, std::uint64_t seed);

// Uniform i.i.d. samples with every row sorted descending.
Eigen::MatrixXd random_sorted_sample(int n_pop, int n_dims, double lo, double hi, std::uint64_t seed);

std::vector<ConfigGraph> study_configs(int n_nodes, SplitMode mode, int max_depth);

// Index of the largest entry, lowest index on ties.
int best_label(const std::vector<double>& J);

// Solves every configuration for one load vector; failed solves get
// converged=false and J=0. The record is invalid when every solve failed.
SampleRecord solve_sample(const std::vector<ConfigGraph>& configs, const ThermalParams& params,
                          const std::vector<double>& loads, const SolveOptions& opt, int workers);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

Dataset run_study(const StudySpec& spec, int workers, const ProgressFn& progress = {});

std::vector<double> success_rate(const Dataset& ds);
std::vector<double> relative_performance(const Dataset& ds, int config);

// CSV `sample_id,d_1..d_n,J_0..,label,valid` plus a `<stem>.meta.json`
// sidecar; both written via temporary files and renamed.
std::filesystem::path sidecar_path(const std::filesystem::path& csv);
void write_dataset(const Dataset& ds, const std::filesystem::path& csv);
Dataset read_dataset(const std::filesystem::path& csv);

// Writes `content` to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& content);

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace thermoforge

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "thermoforge/config_graph.hpp"
#include "thermoforge/study.hpp"

namespace thermoforge {

enum class FeatureMode { normalized_drop_last, normalized_plus_magnitude };

std::string to_string(FeatureMode m);
FeatureMode feature_mode_from_string(const std::string& s);

struct FeatureSpec {
    FeatureMode mode = FeatureMode::normalized_drop_last;
    double magnitude_scale_kw = 10.0;

    int dimension(int n_nodes) const;
};

// D_i = d_i / sum(d) for all but the last node; the magnitude mode appends
// max(d) / magnitude_scale_kw.
std::vector<double> featurize(const std::vector<double>& loads_kw, const FeatureSpec& spec);

// Seeded shuffle of the valid sample indices, first n_train for training.
std::pair<std::vector<int>, std::vector<int>> train_test_split(const Dataset& ds, int n_train, std::uint64_t seed);

class KnnModel {
public:
    KnnModel() = default;
    KnnModel(Eigen::MatrixXd rows, std::vector<int> labels, int k, FeatureSpec spec);

    int k() const { return k_; }
    int size() const { return static_cast<int>(labels_.size()); }
    int dimension() const { return static_cast<int>(rows_.cols()); }
    const FeatureSpec& features() const { return spec_; }
    const Eigen::MatrixXd& rows() const { return rows_; }
    const std::vector<int>& labels() const { return labels_; }

    // Majority vote among the k nearest rows (Euclidean). Equal distances
    // order by label; vote ties go to the smaller summed distance, then the
    // lower label.
    int predict(const std::vector<double>& feature_row) const;
    // Same training rows and metadata, different k.
    KnnModel with_k(int k) const {
        KnnModel m(rows_, labels_, k, spec_);
        m.configs = configs;
        m.sorted_inputs = sorted_inputs;
        return m;
    }

    // Metadata carried with saved models so predictions map to graphs.
    std::vector<ConfigGraph> configs;
    bool sorted_inputs = false;  // trained on descending-sorted loads

private:
    Eigen::MatrixXd rows_;
    std::vector<int> labels_;
    int k_ = 1;
    FeatureSpec spec_;
};

KnnModel train_knn(const std::vector<std::vector<double>>& features, const std::vector<int>& labels, int k,
                   const FeatureSpec& spec = {});

// Trains on the given sample indices of a dataset; attaches the dataset's
// configuration list.
KnnModel train_knn(const Dataset& ds, const std::vector<int>& indices, int k, const FeatureSpec& spec);

int predict(const KnnModel& model, const std::vector<double>& feature_row);
// Featurizes raw loads (sorting them first when the model expects it).
int predict_loads(const KnnModel& model, const std::vector<double>& loads_kw);

nlohmann::json to_json(const KnnModel& m);
KnnModel knn_from_json(const nlohmann::json& j);

struct GapSummary {
    double mean = 0.0, median = 0.0, max = 0.0;
};

struct EvalReport {
    double accuracy = 0.0;        // test
    double train_accuracy = 0.0;
    int n_test = 0, n_train = 0;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    std::vector<double> gaps;                 // (J_best - J_pred) / J_best per test sample
    GapSummary gap;
    std::map<int, double> k_sensitivity;      // test accuracy per k
    double baseline_accuracy = -1.0;          // logistic regression, if computed
};

// Uses only the stored J vectors; no solving.
EvalReport evaluate(const KnnModel& model, const Dataset& ds, const std::vector<int>& train_idx,
                    const std::vector<int>& test_idx);

nlohmann::json to_json(const EvalReport& r);
std::string format_report(const EvalReport& r);

// One-vs-rest logistic regression trained by full-batch gradient descent
// from zero weights.
class LogisticModel {
public:
    LogisticModel(int n_classes, int dim);
    int predict(const std::vector<double>& x) const;

    Eigen::MatrixXd weights;  // n_classes x (dim + 1), bias last
    std::vector<double> prior;  // training class frequencies, breaks score ties
};

LogisticModel train_logistic_baseline(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                                      int n_classes, int epochs, double rate);

}  // namespace thermoforge

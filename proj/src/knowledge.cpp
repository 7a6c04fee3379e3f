#include "thermoforge/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "thermoforge/rng.hpp"

namespace thermoforge {

std::string to_string(FeatureMode m) {
    return m == FeatureMode::normalized_drop_last ? "normalized_drop_last" : "normalized_plus_magnitude";
}

FeatureMode feature_mode_from_string(const std::string& s) {
    if (s == "normalized_drop_last") return FeatureMode::normalized_drop_last;
    if (s == "normalized_plus_magnitude") return FeatureMode::normalized_plus_magnitude;
    throw ValidationError("unknown feature mode '" + s + "'");
}

int FeatureSpec::dimension(int n_nodes) const {
    return n_nodes - 1 + (mode == FeatureMode::normalized_plus_magnitude ? 1 : 0);
}

std::vector<double> featurize(const std::vector<double>& loads, const FeatureSpec& spec) {
    if (loads.size() < 2) throw ValidationError("featurize needs at least two loads");
    double total = 0.0;
    for (double d : loads) {
        if (!(d >= 0.0) || !std::isfinite(d)) throw ValidationError("loads must be finite and non-negative");
        total += d;
    }
    if (!(total > 0.0)) throw ValidationError("total load must be positive");
    std::vector<double> row;
    for (std::size_t i = 0; i + 1 < loads.size(); ++i) row.push_back(loads[i] / total);
    if (spec.mode == FeatureMode::normalized_plus_magnitude)
        row.push_back(*std::max_element(loads.begin(), loads.end()) / spec.magnitude_scale_kw);
    return row;
}

std::pair<std::vector<int>, std::vector<int>> train_test_split(const Dataset& ds, int n_train, std::uint64_t seed) {
    std::vector<int> idx = ds.valid_indices();
    if (n_train < 1 || n_train >= static_cast<int>(idx.size()))
        throw ValidationError("n_train must be in [1, valid samples - 1]");
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<int> train(idx.begin(), idx.begin() + n_train), test(idx.begin() + n_train, idx.end());
    return {train, test};
}

// ---------------------------------------------------------------------------
// KNN

KnnModel::KnnModel(Eigen::MatrixXd rows, std::vector<int> labels, int k, FeatureSpec spec)
    : rows_(std::move(rows)), labels_(std::move(labels)), k_(k), spec_(spec) {
    if (rows_.rows() != static_cast<Eigen::Index>(labels_.size())) throw ValidationError("feature/label count mismatch");
    if (labels_.empty()) throw ValidationError("cannot train on an empty set");
    if (k_ < 1 || k_ > size()) throw ValidationError("k must be in [1, training size]");
    if (!rows_.allFinite()) throw ValidationError("feature rows must be finite");
    for (int l : labels_)
        if (l < 0) throw ValidationError("labels must be non-negative");
}

int KnnModel::predict(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != dimension()) throw ValidationError("feature dimension mismatch");
    const Eigen::Map<const Eigen::RowVectorXd> q(x.data(), static_cast<Eigen::Index>(x.size()));
    struct Neighbor {
        double dist;
        int label;
    };
    std::vector<Neighbor> all(size());
    for (int i = 0; i < size(); ++i) all[i] = {(rows_.row(i) - q).norm(), labels_[i]};
    std::partial_sort(all.begin(), all.begin() + k_, all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.label < b.label;
    });
    std::map<int, std::pair<int, double>> votes;  // label -> (count, summed distance)
    for (int i = 0; i < k_; ++i) {
        auto& v = votes[all[i].label];
        ++v.first;
        v.second += all[i].dist;
    }
    int best = -1;
    std::pair<int, double> best_vote{0, 0.0};
    for (const auto& [label, v] : votes) {
        if (best < 0 || v.first > best_vote.first || (v.first == best_vote.first && v.second < best_vote.second)) {
            best = label;
            best_vote = v;
        }
    }
    return best;
}

KnnModel train_knn(const std::vector<std::vector<double>>& features, const std::vector<int>& labels, int k,
                   const FeatureSpec& spec) {
    if (features.empty()) throw ValidationError("cannot train on an empty set");
    const std::size_t dim = features[0].size();
    Eigen::MatrixXd rows(features.size(), dim);
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != dim) throw ValidationError("ragged feature rows");
        for (std::size_t d = 0; d < dim; ++d) rows(i, d) = features[i][d];
    }
    return KnnModel(std::move(rows), labels, k, spec);
}

KnnModel train_knn(const Dataset& ds, const std::vector<int>& indices, int k, const FeatureSpec& spec) {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i : indices) {
        const auto& r = ds.records.at(i);
        if (!r.valid) continue;
        x.push_back(featurize(r.loads, spec));
        y.push_back(r.label);
    }
    KnnModel m = train_knn(x, y, k, spec);
    m.configs = ds.configs;
    m.sorted_inputs = ds.spec.sampler == Sampler::random_sorted;
    return m;
}

int predict(const KnnModel& model, const std::vector<double>& feature_row) { return model.predict(feature_row); }

int predict_loads(const KnnModel& model, const std::vector<double>& loads) {
    std::vector<double> d = loads;
    if (model.sorted_inputs) std::sort(d.begin(), d.end(), std::greater<>());
    return model.predict(featurize(d, model.features()));
}

nlohmann::json to_json(const KnnModel& m) {
    nlohmann::json j;
    j["spec"] = {{"mode", to_string(m.features().mode)}, {"magnitude_scale_kw", m.features().magnitude_scale_kw}};
    j["k"] = m.k();
    j["sorted_inputs"] = m.sorted_inputs;
    nlohmann::json configs = nlohmann::json::array();
    for (const auto& g : m.configs) configs.push_back(to_json(g));
    j["configs"] = configs;
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.size(); ++i) {
        nlohmann::json r = nlohmann::json::array();
        for (int d = 0; d < m.dimension(); ++d) r.push_back(m.rows()(i, d));
        r.push_back(m.labels()[i]);
        rows.push_back(r);
    }
    j["rows"] = rows;
    return j;
}

KnnModel knn_from_json(const nlohmann::json& j) {
    try {
        FeatureSpec spec;
        const auto& js = j.at("spec");
        spec.mode = feature_mode_from_string(js.at("mode").get<std::string>());
        spec.magnitude_scale_kw = js.value("magnitude_scale_kw", 10.0);
        std::vector<std::vector<double>> x;
        std::vector<int> y;
        for (const auto& r : j.at("rows")) {
            auto v = r.get<std::vector<double>>();
            if (v.size() < 2) throw ValidationError("model row too short");
            y.push_back(static_cast<int>(v.back()));
            v.pop_back();
            x.push_back(std::move(v));
        }
        KnnModel m = train_knn(x, y, j.at("k").get<int>(), spec);
        for (const auto& g : j.value("configs", nlohmann::json::array())) m.configs.push_back(config_from_json(g));
        m.sorted_inputs = j.value("sorted_inputs", false);
        for (int l : m.labels())
            if (!m.configs.empty() && l >= static_cast<int>(m.configs.size()))
                throw ValidationError("model label outside its configuration list");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed model: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

GapSummary summarize(std::vector<double> v) {
    GapSummary s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    s.max = *std::max_element(v.begin(), v.end());
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    return s;
}

double accuracy_of(const KnnModel& model, const Dataset& ds, const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    int hit = 0;
    for (int i : idx) {
        const auto& r = ds.records[i];
        hit += model.predict(featurize(r.loads, model.features())) == r.label;
    }
    return static_cast<double>(hit) / idx.size();
}

}  // namespace

EvalReport evaluate(const KnnModel& model, const Dataset& ds, const std::vector<int>& train_idx,
                    const std::vector<int>& test_idx) {
    EvalReport rep;
    const int m = ds.n_conf();
    rep.n_train = static_cast<int>(train_idx.size());
    rep.n_test = static_cast<int>(test_idx.size());
    rep.confusion.assign(m, std::vector<int>(m, 0));
    int hit = 0;
    for (int i : test_idx) {
        const auto& r = ds.records.at(i);
        const int pred = model.predict(featurize(r.loads, model.features()));
        if (pred < 0 || pred >= m) throw ValidationError("prediction outside the dataset's configurations");
        ++rep.confusion[r.label][pred];
        hit += pred == r.label;
        const double best = r.J[r.label];
        rep.gaps.push_back(best > 0.0 ? (best - r.J[pred]) / best : 0.0);
    }
    rep.accuracy = test_idx.empty() ? 0.0 : static_cast<double>(hit) / test_idx.size();
    rep.train_accuracy = accuracy_of(model, ds, train_idx);
    rep.gap = summarize(rep.gaps);
    for (int k : {1, 3, 5, 7})
        if (k <= model.size()) rep.k_sensitivity[k] = accuracy_of(model.with_k(k), ds, test_idx);

    if (!train_idx.empty() && !test_idx.empty()) {
        std::vector<std::vector<double>> x;
        std::vector<int> y;
        for (int i : train_idx) {
            x.push_back(featurize(ds.records[i].loads, model.features()));
            y.push_back(ds.records[i].label);
        }
        const LogisticModel lr = train_logistic_baseline(x, y, m, 2000, 0.5);
        int lr_hit = 0;
        for (int i : test_idx)
            lr_hit += lr.predict(featurize(ds.records[i].loads, model.features())) == ds.records[i].label;
        rep.baseline_accuracy = static_cast<double>(lr_hit) / test_idx.size();
    }
    return rep;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["accuracy"] = r.accuracy;
    j["train_accuracy"] = r.train_accuracy;
    j["n_test"] = r.n_test;
    j["n_train"] = r.n_train;
    j["confusion"] = r.confusion;
    j["gaps"] = r.gaps;
    j["gap"] = {{"mean", r.gap.mean}, {"median", r.gap.median}, {"max", r.gap.max}};
    nlohmann::json ks = nlohmann::json::object();
    for (const auto& [k, a] : r.k_sensitivity) ks[std::to_string(k)] = a;
    j["k_sensitivity"] = ks;
    j["logistic_baseline_accuracy"] = r.baseline_accuracy;
    j["notes"] = "features unstandardized, neighbors unweighted";
    return j;
}

std::string format_report(const EvalReport& r) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "test accuracy   %.4f (%d samples)\ntrain accuracy  %.4f (%d samples)\n",
                  r.accuracy, r.n_test, r.train_accuracy, r.n_train);
    out += buf;
    std::snprintf(buf, sizeof buf, "objective gap   mean %.4f%%  median %.4f%%  max %.4f%%\n", 100 * r.gap.mean,
                  100 * r.gap.median, 100 * r.gap.max);
    out += buf;
    for (const auto& [k, a] : r.k_sensitivity) {
        std::snprintf(buf, sizeof buf, "k=%d accuracy    %.4f\n", k, a);
        out += buf;
    }
    if (r.baseline_accuracy >= 0.0) {
        std::snprintf(buf, sizeof buf, "logistic (OvR)  %.4f\n", r.baseline_accuracy);
        out += buf;
    }
    out += "notes           features unstandardized, neighbors unweighted\n";
    out += "confusion (rows true, columns predicted)\n";
    for (const auto& row : r.confusion) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%s%3d", c ? " " : "", row[c]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression baseline

LogisticModel::LogisticModel(int n_classes, int dim)
    : weights(Eigen::MatrixXd::Zero(n_classes, dim + 1)), prior(n_classes, 0.0) {}

int LogisticModel::predict(const std::vector<double>& x) const {
    if (static_cast<Eigen::Index>(x.size()) + 1 != weights.cols()) throw ValidationError("feature dimension mismatch");
    Eigen::VectorXd xb(x.size() + 1);
    for (std::size_t d = 0; d < x.size(); ++d) xb(d) = x[d];
    xb(x.size()) = 1.0;
    const Eigen::VectorXd score = weights * xb;
    int best = 0;
    for (int c = 1; c < score.size(); ++c) {
        if (score(c) > score(best) || (score(c) == score(best) && prior[c] > prior[best])) best = c;
    }
    return best;
}

LogisticModel train_logistic_baseline(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                                      int n_classes, int epochs, double rate) {
    if (features.size() != labels.size() || features.empty()) throw ValidationError("bad training set");
    const int dim = static_cast<int>(features[0].size());
    const int n = static_cast<int>(features.size());
    LogisticModel model(n_classes, dim);
    Eigen::MatrixXd X(n, dim + 1);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < dim; ++d) X(i, d) = features[i][d];
        X(i, dim) = 1.0;
        if (labels[i] < 0 || labels[i] >= n_classes) throw ValidationError("label outside class range");
        model.prior[labels[i]] += 1.0 / n;
    }
    for (int c = 0; c < n_classes; ++c) {
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = labels[i] == c ? 1.0 : 0.0;
        Eigen::VectorXd w = Eigen::VectorXd::Zero(dim + 1);
        for (int e = 0; e < epochs; ++e) {
            const Eigen::ArrayXd z = (X * w).array();
            const Eigen::VectorXd sig = (1.0 / (1.0 + (-z).exp())).matrix();
            w -= rate * X.transpose() * (sig - y) / n;
        }
        model.weights.row(c) = w.transpose();
    }
    return model;
}

}  // namespace thermoforge

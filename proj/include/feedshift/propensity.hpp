#pragma once

// Boosted depth-limited CART trees (AdaBoost-SAMME, two classes) producing
// treatment propensity scores in [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "feedshift/common.hpp"

namespace feedshift::propensity {

/// Dense column-major feature matrix.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    static FeatureMatrix from_rows(std::span<const std::vector<double>> rows) {
        if (rows.empty()) return {};
        FeatureMatrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_) throw ValidationError("ragged feature rows");
            for (std::size_t j = 0; j < m.cols_; ++j) m(i, j) = rows[i][j];
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }
    std::span<const double> column(std::size_t j) const { return std::span(data_).subspan(j * rows_, rows_); }

    std::vector<double> row(std::size_t i) const {
        std::vector<double> r(cols_);
        for (std::size_t j = 0; j < cols_; ++j) r[j] = (*this)(i, j);
        return r;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;
    double mass0 = 0.0;
    double mass1 = 0.0;

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

class DecisionTree {
public:
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    template <class Row>
    int predict(const Row& x) const {
        int k = 0;
        while (!nodes[k].is_leaf()) k = x[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
        return nodes[k].label;
    }

    int predict_row(const FeatureMatrix& X, std::size_t i) const {
        int k = 0;
        while (!nodes[k].is_leaf())
            k = X(i, static_cast<std::size_t>(nodes[k].feature)) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
        return nodes[k].label;
    }

    int depth() const { return depth_of(0); }
    bool operator==(const DecisionTree&) const = default;

private:
    int depth_of(int k) const {
        if (nodes[k].is_leaf()) return 0;
        return 1 + std::max(depth_of(nodes[k].left), depth_of(nodes[k].right));
    }
};

namespace detail {

struct SortedColumn {
    std::vector<std::uint32_t> rows;  // nonzero rows by ascending value
    std::vector<double> values;       // values[p] = X(rows[p], j)
    std::size_t n_negative = 0;       // rows[0..n_negative) hold negative values
};

/// Per-feature ordering of nonzero entries. Zeros are implicit, which keeps
/// split search proportional to the number of nonzeros for sparse n-gram blocks.
inline std::vector<SortedColumn> presort(const FeatureMatrix& X, unsigned threads) {
    std::vector<SortedColumn> cols(X.cols());
    parallel_for(X.cols(), threads, [&](std::size_t j) {
        const auto c = X.column(j);
        auto& sc = cols[j];
        for (std::size_t i = 0; i < c.size(); ++i)
            if (c[i] != 0.0) sc.rows.push_back(static_cast<std::uint32_t>(i));
        std::stable_sort(sc.rows.begin(), sc.rows.end(), [&](std::uint32_t a, std::uint32_t b) { return c[a] < c[b]; });
        sc.n_negative = static_cast<std::size_t>(
            std::count_if(sc.rows.begin(), sc.rows.end(), [&](std::uint32_t r) { return c[r] < 0.0; }));
        sc.values.reserve(sc.rows.size());
        for (auto r : sc.rows) sc.values.push_back(c[r]);
    });
    return cols;
}

// Weighted Gini impurity times node mass: W - (w0^2 + w1^2) / W.
inline double gini_mass(double w0, double w1) {
    const double w = w0 + w1;
    return w > 0.0 ? w - (w0 * w0 + w1 * w1) / w : 0.0;
}

inline double midpoint(double a, double b) {
    const double m = a + (b - a) / 2.0;
    return m < b ? m : a;
}

struct Split {
    double impurity = std::numeric_limits<double>::infinity();
    int feature = -1;
    double threshold = 0.0;
};

struct NodeStat {
    double w0 = 0.0;
    double w1 = 0.0;
    std::size_t count = 0;
};

}  // namespace detail

struct TreeOptions {
    int max_depth = 3;
    unsigned threads = 1;
};

/// Tree fitting context that reuses the presorted columns across boosting rounds.
class TreeFitter {
public:
    TreeFitter(const FeatureMatrix& X, std::span<const int> y, TreeOptions opts = {})
        : X_(X), y_(y), opts_(opts), sorted_(detail::presort(X, opts.threads)) {
        if (X.rows() == 0) throw ValidationError("fit_tree: empty input");
        if (y.size() != X.rows()) throw ValidationError("fit_tree: label count mismatch");
        for (int v : y)
            if (v != 0 && v != 1) throw ValidationError("fit_tree: labels must be 0 or 1");
    }

    DecisionTree fit(std::span<const double> w) const {
        const std::size_t n = X_.rows();
        if (w.size() != n) throw ValidationError("fit_tree: weight count mismatch");
        DecisionTree tree;
        std::vector<int> node_of(n, 0);
        tree.nodes.push_back(make_leaf(w, node_of, 0));
        std::vector<int> frontier = {0};
        for (int depth = 0; depth < opts_.max_depth && !frontier.empty(); ++depth) {
            const auto splits = best_splits(w, node_of, frontier, tree);
            std::vector<int> next;
            std::vector<int> remap(tree.nodes.size(), -1);
            for (std::size_t f = 0; f < frontier.size(); ++f) {
                const int k = frontier[f];
                const auto& s = splits[f];
                const double parent = detail::gini_mass(tree.nodes[k].mass0, tree.nodes[k].mass1);
                if (s.feature < 0 || !(s.impurity < parent - kMinGain)) continue;
                tree.nodes[k].feature = s.feature;
                tree.nodes[k].threshold = s.threshold;
                tree.nodes[k].left = static_cast<int>(tree.nodes.size());
                tree.nodes.push_back({});
                tree.nodes[k].right = static_cast<int>(tree.nodes.size());
                tree.nodes.push_back({});
                remap[k] = k;
                next.push_back(tree.nodes[k].left);
                next.push_back(tree.nodes[k].right);
            }
            if (next.empty()) break;
            std::vector<detail::NodeStat> stats(tree.nodes.size());
            for (std::size_t i = 0; i < n; ++i) {
                const int k = node_of[i];
                if (k < 0 || k >= static_cast<int>(remap.size()) || remap[k] < 0) {
                    node_of[i] = -1;  // settled in a leaf
                    continue;
                }
                const auto& nd = tree.nodes[k];
                node_of[i] = X_(i, static_cast<std::size_t>(nd.feature)) <= nd.threshold ? nd.left : nd.right;
                auto& st = stats[node_of[i]];
                (y_[i] ? st.w1 : st.w0) += w[i];
                ++st.count;
            }
            for (int k : next) set_leaf(tree.nodes[k], stats[k]);
            frontier = std::move(next);
        }
        return tree;
    }

private:
    static constexpr double kMinGain = 1e-12;

    TreeNode make_leaf(std::span<const double> w, std::span<const int> node_of, int k) const {
        detail::NodeStat st;
        for (std::size_t i = 0; i < w.size(); ++i)
            if (node_of[i] == k) {
                (y_[i] ? st.w1 : st.w0) += w[i];
                ++st.count;
            }
        TreeNode leaf;
        set_leaf(leaf, st);
        return leaf;
    }

    static void set_leaf(TreeNode& node, const detail::NodeStat& st) {
        node.mass0 = st.w0;
        node.mass1 = st.w1;
        node.label = st.w1 > st.w0 ? 1 : 0;
    }

    // Best split per frontier node, searching all features.
    std::vector<detail::Split> best_splits(std::span<const double> w, std::span<const int> node_of,
                                           std::span<const int> frontier, const DecisionTree& tree) const {
        const std::size_t n_nodes = tree.nodes.size();
        std::vector<int> slot(n_nodes, -1);
        for (std::size_t f = 0; f < frontier.size(); ++f) slot[frontier[f]] = static_cast<int>(f);
        std::vector<detail::NodeStat> totals(frontier.size());
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            totals[f].w0 = tree.nodes[frontier[f]].mass0;
            totals[f].w1 = tree.nodes[frontier[f]].mass1;
        }
        // Frontier slot of every row, -1 for rows settled in a leaf.
        std::vector<int> row_slot(node_of.size(), -1);
        for (std::size_t i = 0; i < node_of.size(); ++i)
            if (node_of[i] >= 0 && slot[node_of[i]] >= 0) {
                row_slot[i] = slot[node_of[i]];
                ++totals[row_slot[i]].count;
            }

        const std::size_t d = X_.cols();
        std::vector<std::vector<detail::Split>> per_feature(d);
        parallel_for(d, opts_.threads, [&](std::size_t j) {
            per_feature[j] = sorted_[j].n_negative == 0 ? scan_nonnegative(j, w, row_slot, totals)
                                                         : scan_feature(j, w, row_slot, totals);
        });
        std::vector<detail::Split> best(frontier.size());
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t f = 0; f < frontier.size(); ++f)
                if (per_feature[j][f].impurity < best[f].impurity) best[f] = per_feature[j][f];
        return best;
    }

    // Scans zeros last so no separate pass over the nonzeros is needed. Ties
    // keep the smallest threshold, as the ascending scan does.
    std::vector<detail::Split> scan_nonnegative(std::size_t j, std::span<const double> w, std::span<const int> row_slot,
                                                std::span<const detail::NodeStat> totals) const {
        const std::size_t m = totals.size();
        const auto& sc = sorted_[j];
        std::vector<detail::Split> best(m);
        std::vector<detail::NodeStat> right(m);
        std::vector<double> last(m, 0.0);
        auto consider = [&](std::size_t f, double value) {
            const double l0 = totals[f].w0 - right[f].w0;
            const double l1 = totals[f].w1 - right[f].w1;
            const double imp = detail::gini_mass(std::max(0.0, l0), std::max(0.0, l1)) +
                               detail::gini_mass(right[f].w0, right[f].w1);
            if (imp <= best[f].impurity) best[f] = {imp, static_cast<int>(j), detail::midpoint(value, last[f])};
        };
        for (std::size_t p = sc.rows.size(); p-- > 0;) {
            const auto r = sc.rows[p];
            const int s = row_slot[r];
            if (s < 0) continue;
            const auto f = static_cast<std::size_t>(s);
            const double v = sc.values[p];
            if (right[f].count > 0 && v < last[f]) consider(f, v);
            (y_[r] ? right[f].w1 : right[f].w0) += w[r];
            ++right[f].count;
            last[f] = v;
        }
        for (std::size_t f = 0; f < m; ++f)
            if (right[f].count > 0 && right[f].count < totals[f].count) consider(f, 0.0);
        return best;
    }

    std::vector<detail::Split> scan_feature(std::size_t j, std::span<const double> w, std::span<const int> row_slot,
                                            std::span<const detail::NodeStat> totals) const {
        const std::size_t m = totals.size();
        const auto col = X_.column(j);
        const auto& sc = sorted_[j];
        std::vector<detail::Split> best(m);
        std::vector<detail::NodeStat> nonzero(m);
        for (auto r : sc.rows) {
            const int k = row_slot[r];
            if (k < 0) continue;
            auto& st = nonzero[k];
            (y_[r] ? st.w1 : st.w0) += w[r];
            ++st.count;
        }
        std::vector<detail::NodeStat> left(m);
        std::vector<double> last(m, 0.0);
        std::vector<char> seen(m, 0);

        auto consider = [&](std::size_t f, double value) {
            if (seen[f] && value > last[f]) {
                const double r0 = totals[f].w0 - left[f].w0;
                const double r1 = totals[f].w1 - left[f].w1;
                const double imp = detail::gini_mass(left[f].w0, left[f].w1) + detail::gini_mass(r0, r1);
                if (imp < best[f].impurity) best[f] = {imp, static_cast<int>(j), detail::midpoint(last[f], value)};
            }
        };
        auto visit = [&](std::uint32_t r) {
            const int k = row_slot[r];
            if (k < 0) return;
            const auto f = static_cast<std::size_t>(k);
            consider(f, col[r]);
            (y_[r] ? left[f].w1 : left[f].w0) += w[r];
            last[f] = col[r];
            seen[f] = 1;
        };

        for (std::size_t p = 0; p < sc.n_negative; ++p) visit(sc.rows[p]);
        for (std::size_t f = 0; f < m; ++f) {
            if (totals[f].count == nonzero[f].count) continue;  // no zeros in this node
            consider(f, 0.0);
            left[f].w0 += std::max(0.0, totals[f].w0 - nonzero[f].w0);
            left[f].w1 += std::max(0.0, totals[f].w1 - nonzero[f].w1);
            last[f] = 0.0;
            seen[f] = 1;
        }
        for (std::size_t p = sc.n_negative; p < sc.rows.size(); ++p) visit(sc.rows[p]);
        return best;
    }

    const FeatureMatrix& X_;
    std::span<const int> y_;
    TreeOptions opts_;
    std::vector<detail::SortedColumn> sorted_;
};

/// Greedy weighted-Gini CART. Left branches take values <= threshold.
inline DecisionTree fit_tree(const FeatureMatrix& X, std::span<const int> y, std::span<const double> w,
                             int max_depth = 3) {
    if (X.rows() == 0) throw ValidationError("fit_tree: empty input");
    double total = 0.0;
    for (double v : w) {
        if (!(v >= 0.0)) throw ValidationError("fit_tree: negative weight");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("fit_tree: weights must sum to 1");
    return TreeFitter(X, y, {max_depth, 1}).fit(w);
}

struct BoostOptions {
    std::size_t n_estimators = 500;
    double learning_rate = 0.05;
    int max_depth = 3;
    unsigned threads = 1;
};

inline constexpr double kErrorFloor = 1e-12;

struct BoostedEnsemble {
    std::vector<DecisionTree> trees;
    std::vector<double> alphas;
    double learning_rate = 0.05;
    std::size_t n_estimators = 500;
    int max_depth = 3;
    std::size_t n_features = 0;
    std::string schema_hash;
    std::vector<double> training_errors;

    bool operator==(const BoostedEnsemble& o) const {
        return trees == o.trees && alphas == o.alphas && learning_rate == o.learning_rate &&
               n_estimators == o.n_estimators && max_depth == o.max_depth && n_features == o.n_features &&
               schema_hash == o.schema_hash;
    }
};

/// Discrete AdaBoost (SAMME) with two classes.
inline BoostedEnsemble fit_adaboost(const FeatureMatrix& X, std::span<const int> y, const BoostOptions& opts = {}) {
    const std::size_t n = X.rows();
    if (n == 0) throw ValidationError("fit_adaboost: empty input");
    const bool has0 = std::find(y.begin(), y.end(), 0) != y.end();
    const bool has1 = std::find(y.begin(), y.end(), 1) != y.end();
    if (!has0 || !has1) throw ValidationError("degenerate labels");

    BoostedEnsemble ens;
    ens.learning_rate = opts.learning_rate;
    ens.n_estimators = opts.n_estimators;
    ens.max_depth = opts.max_depth;
    ens.n_features = X.cols();

    TreeFitter fitter(X, y, {opts.max_depth, opts.threads});
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    std::vector<char> miss(n);
    for (std::size_t m = 0; m < opts.n_estimators; ++m) {
        auto tree = fitter.fit(w);
        CompensatedSum err_sum;
        for (std::size_t i = 0; i < n; ++i) {
            miss[i] = tree.predict_row(X, i) != y[i];
            if (miss[i]) err_sum.add(w[i]);
        }
        const double err = err_sum.value();
        if (err >= 0.5) {
            if (ens.trees.empty()) {
                // Nothing beats chance; keep the stump with zero weight so scores are 0.5.
                ens.trees.push_back(std::move(tree));
                ens.alphas.push_back(0.0);
                ens.training_errors.push_back(err);
            }
            break;
        }
        const double alpha = opts.learning_rate * std::log((1.0 - err) / std::max(err, kErrorFloor));
        ens.trees.push_back(std::move(tree));
        ens.alphas.push_back(alpha);
        ens.training_errors.push_back(err);
        if (err <= 0.0) break;
        const double boost = std::exp(alpha);
        CompensatedSum total;
        for (std::size_t i = 0; i < n; ++i) {
            if (miss[i]) w[i] *= boost;
            total.add(w[i]);
        }
        const double z = total.value();
        for (auto& v : w) v /= z;
    }
    return ens;
}

/// Normalized weighted vote for class 1; 0.5 when all alphas are zero.
template <class Row>
double predict_score(const BoostedEnsemble& ens, const Row& x) {
    if (ens.trees.empty()) throw ValidationError("predict_score: empty ensemble");
    if (static_cast<std::size_t>(std::size(x)) != ens.n_features)
        throw ValidationError("predict_score: dimension mismatch (expected " + std::to_string(ens.n_features) +
                              ", got " + std::to_string(std::size(x)) + ")");
    double vote = 0.0;
    double total = 0.0;
    for (std::size_t m = 0; m < ens.trees.size(); ++m) {
        total += ens.alphas[m];
        if (ens.trees[m].predict(x) == 1) vote += ens.alphas[m];
    }
    if (total <= 0.0) return 0.5;
    return std::clamp(vote / total, 0.0, 1.0);
}

inline std::vector<double> predict_scores(const BoostedEnsemble& ens, const FeatureMatrix& X, unsigned threads = 1) {
    if (X.cols() != ens.n_features) throw ValidationError("predict_scores: dimension mismatch");
    std::vector<double> out(X.rows());
    parallel_for(X.rows(), threads, [&](std::size_t i) { out[i] = predict_score(ens, X.row(i)); });
    return out;
}

/// Area under the ROC curve via the rank-sum statistic (ties count half).
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    double n1 = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) {
                rank_sum += avg_rank;
                n1 += 1.0;
            }
        i = j;
    }
    const double n0 = static_cast<double>(scores.size()) - n1;
    if (n1 == 0.0 || n0 == 0.0) throw ValidationError("auc: need both classes");
    return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

inline constexpr std::string_view kModelFormat = "feedshift-propensity/1";

inline nlohmann::json to_json(const BoostedEnsemble& ens) {
    nlohmann::json trees = nlohmann::json::array();
    for (std::size_t m = 0; m < ens.trees.size(); ++m) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& nd : ens.trees[m].nodes)
            nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.label, nd.mass0, nd.mass1});
        trees.push_back({{"alpha", ens.alphas[m]}, {"nodes", nodes}});
    }
    return {{"format", kModelFormat},
            {"schema_hash", ens.schema_hash},
            {"n_features", ens.n_features},
            {"learning_rate", ens.learning_rate},
            {"n_estimators", ens.n_estimators},
            {"max_depth", ens.max_depth},
            {"training_errors", ens.training_errors},
            {"trees", trees}};
}

inline BoostedEnsemble from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kModelFormat) throw ValidationError("unsupported model format");
    BoostedEnsemble ens;
    ens.schema_hash = j.at("schema_hash").get<std::string>();
    ens.n_features = j.at("n_features").get<std::size_t>();
    ens.learning_rate = j.at("learning_rate").get<double>();
    ens.n_estimators = j.at("n_estimators").get<std::size_t>();
    ens.max_depth = j.at("max_depth").get<int>();
    ens.training_errors = j.value("training_errors", std::vector<double>{});
    for (const auto& t : j.at("trees")) {
        DecisionTree tree;
        for (const auto& nd : t.at("nodes")) {
            TreeNode node;
            node.feature = nd.at(0).get<int>();
            node.threshold = nd.at(1).get<double>();
            node.left = nd.at(2).get<int>();
            node.right = nd.at(3).get<int>();
            node.label = nd.at(4).get<int>();
            node.mass0 = nd.at(5).get<double>();
            node.mass1 = nd.at(6).get<double>();
            tree.nodes.push_back(node);
        }
        if (tree.nodes.empty()) throw ValidationError("model tree without nodes");
        ens.trees.push_back(std::move(tree));
        ens.alphas.push_back(t.at("alpha").get<double>());
    }
    return ens;
}

}  // namespace feedshift::propensity

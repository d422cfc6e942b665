#include "spiro/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "spiro/errors.hpp"
#include "spiro/ops.hpp"

namespace spiro::fusion {

using nlohmann::json;

std::array<double, kDemographicCount> demographic_vector(const Demographics& d) {
  return {static_cast<double>(d.age), static_cast<double>(d.sex), static_cast<double>(d.smoking),
          static_cast<double>(d.height_cm)};
}

DemographicScaler fit_demographic_scaler(std::span<const Demographics> train) {
  require(!train.empty(), ErrorKind::data, "cannot fit demographic scaling on no rows");
  DemographicScaler s;
  s.enabled = true;
  const double n = static_cast<double>(train.size());
  for (std::size_t k = 0; k < kDemographicCount; ++k) {
    double sum = 0.0;
    for (const auto& d : train) sum += demographic_vector(d)[k];
    s.mean[k] = sum / n;
    double ss = 0.0;
    for (const auto& d : train) {
      const double z = demographic_vector(d)[k] - s.mean[k];
      ss += z * z;
    }
    s.sd[k] = std::max(std::sqrt(ss / n), 1e-6);
  }
  return s;
}

std::vector<double> fuse_features(std::span<const double> embedding, const Demographics& d,
                                  std::size_t expected_embedding_len,
                                  const DemographicScaler& scaler) {
  require(embedding.size() == expected_embedding_len, ErrorKind::shape,
          "embedding has length " + std::to_string(embedding.size()) + ", expected " +
              std::to_string(expected_embedding_len));
  std::vector<double> out(embedding.begin(), embedding.end());
  const auto demo = demographic_vector(d);
  for (std::size_t k = 0; k < kDemographicCount; ++k) {
    out.push_back(scaler.enabled ? (demo[k] - scaler.mean[k]) / scaler.sd[k] : demo[k]);
  }
  return out;
}

double Tree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const TreeNode& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                       : n.right);
  }
  return nodes[i].value;
}

std::size_t Tree::depth() const {
  std::function<std::size_t(int)> walk = [&](int i) -> std::size_t {
    const TreeNode& n = nodes[static_cast<std::size_t>(i)];
    if (n.feature < 0) return 0;
    return 1 + std::max(walk(n.left), walk(n.right));
  };
  return nodes.empty() ? 0 : walk(0);
}

namespace {

double log_loss(std::span<const double> margin, std::span<const int> y) {
  double sum = 0.0;
  for (std::size_t i = 0; i < margin.size(); ++i) {
    const double z = margin[i];
    sum += std::max(z, 0.0) - y[i] * z + std::log1p(std::exp(-std::abs(z)));
  }
  return sum / static_cast<double>(margin.size());
}

double score(double g, double h, double lambda) { return g * g / (h + lambda); }

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

// Grows one tree level by level. `sorted[f]` lists sample indices ordered by
// feature f (stable, so equal values keep index order).
Tree grow_tree(const std::vector<std::vector<double>>& x,
               const std::vector<std::vector<std::size_t>>& sorted, std::span<const double> grad,
               std::span<const double> hess, const GbdtHyper& hp) {
  const std::size_t n = x.size();
  const std::size_t n_feat = x.front().size();
  Tree tree;
  tree.nodes.push_back({});
  std::vector<int> node_of(n, 0);  // tree node of each sample; -1 once settled in a leaf

  std::vector<int> frontier{0};
  for (std::size_t depth = 0; !frontier.empty(); ++depth) {
    // Slot of each frontier node, keyed by tree node id.
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < frontier.size(); ++s) slot[frontier[s]] = static_cast<int>(s);
    const std::size_t m = frontier.size();
    std::vector<double> g_tot(m, 0.0), h_tot(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (node_of[i] < 0) continue;
      const int s = slot[node_of[i]];
      g_tot[s] += grad[i];
      h_tot[s] += hess[i];
    }

    std::vector<Candidate> best(m);
    if (depth < hp.max_depth) {
      std::vector<double> gl(m), hl(m), last(m);
      std::vector<char> seen(m);
      for (std::size_t f = 0; f < n_feat; ++f) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(seen.begin(), seen.end(), 0);
        for (std::size_t i : sorted[f]) {
          if (node_of[i] < 0) continue;
          const int s = slot[node_of[i]];
          const double v = x[i][f];
          if (seen[s] && v != last[s]) {
            const double gr = g_tot[s] - gl[s];
            const double hr = h_tot[s] - hl[s];
            const double gain = score(gl[s], hl[s], hp.lambda) + score(gr, hr, hp.lambda) -
                                score(g_tot[s], h_tot[s], hp.lambda);
            // Strict comparison keeps the lowest feature, then lowest threshold.
            if (gain > best[s].gain) best[s] = {gain, static_cast<int>(f), last[s]};
          }
          gl[s] += grad[i];
          hl[s] += hess[i];
          last[s] = v;
          seen[s] = 1;
        }
      }
    }

    std::vector<int> next;
    for (std::size_t s = 0; s < m; ++s) {
      const int id = frontier[s];
      if (best[s].feature < 0 || !(best[s].gain > 1e-12)) {
        tree.nodes[id].value = -g_tot[s] / (h_tot[s] + hp.lambda);
        continue;
      }
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      tree.nodes[id].feature = best[s].feature;
      tree.nodes[id].threshold = best[s].threshold;
      tree.nodes[id].left = left;
      tree.nodes[id].right = left + 1;
      next.push_back(left);
      next.push_back(left + 1);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int id = node_of[i];
      if (id < 0) continue;
      const TreeNode& nd = tree.nodes[id];
      if (nd.feature < 0) {
        node_of[i] = -1;
      } else {
        node_of[i] = x[i][static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
      }
    }
    frontier = std::move(next);
  }
  return tree;
}

}  // namespace

GbdtEnsemble gbdt_train(const std::vector<std::vector<double>>& features,
                        std::span<const int> labels, const GbdtHyper& hp) {
  const std::size_t n = features.size();
  require(n >= 2, ErrorKind::data, "gradient boosting needs at least two examples");
  require(labels.size() == n, ErrorKind::shape, "features and labels differ in length");
  require(hp.lambda > 0.0 && hp.learning_rate > 0.0, ErrorKind::config,
          "lambda and learning_rate must be positive");
  const std::size_t n_feat = features.front().size();
  require(n_feat > 0, ErrorKind::shape, "feature vectors are empty");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    require(features[i].size() == n_feat, ErrorKind::shape,
            "feature row " + std::to_string(i) + " has length " +
                std::to_string(features[i].size()) + ", expected " + std::to_string(n_feat));
    for (double v : features[i]) {
      require(std::isfinite(v), ErrorKind::data, "non-finite feature in row " + std::to_string(i));
    }
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::data, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(labels[i]);
  }
  require(pos > 0 && pos < n, ErrorKind::degenerate,
          "gradient boosting needs both classes (" + std::to_string(pos) + " of " +
              std::to_string(n) + " positive)");

  GbdtEnsemble e;
  e.learning_rate = hp.learning_rate;
  e.n_features = n_feat;
  e.max_depth = hp.max_depth;
  const double prevalence = static_cast<double>(pos) / static_cast<double>(n);
  e.base_score = std::log(prevalence / (1.0 - prevalence));

  std::vector<std::vector<std::size_t>> sorted(n_feat, std::vector<std::size_t>(n));
  for (std::size_t f = 0; f < n_feat; ++f) {
    std::iota(sorted[f].begin(), sorted[f].end(), 0);
    std::stable_sort(sorted[f].begin(), sorted[f].end(), [&](std::size_t a, std::size_t b) {
      return features[a][f] < features[b][f];
    });
  }

  std::vector<double> margin(n, e.base_score), grad(n), hess(n);
  e.train_loss.push_back(log_loss(margin, labels));
  for (std::size_t r = 0; r < hp.rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = tc::sigmoid(margin[i]);
      grad[i] = p - labels[i];
      hess[i] = p * (1.0 - p);
    }
    Tree t = grow_tree(features, sorted, grad, hess, hp);
    for (std::size_t i = 0; i < n; ++i) margin[i] += hp.learning_rate * t.predict(features[i]);
    e.trees.push_back(std::move(t));
    e.train_loss.push_back(log_loss(margin, labels));
  }
  return e;
}

double gbdt_margin(const GbdtEnsemble& e, std::span<const double> x) {
  require(x.size() == e.n_features, ErrorKind::shape,
          "feature vector has length " + std::to_string(x.size()) + ", ensemble expects " +
              std::to_string(e.n_features));
  double sum = 0.0;
  for (const Tree& t : e.trees) sum += t.predict(x);
  return e.base_score + e.learning_rate * sum;
}

double gbdt_predict(const GbdtEnsemble& e, std::span<const double> x) {
  return tc::sigmoid(gbdt_margin(e, x));
}

namespace {

json node_json(const Tree& t, int i) {
  const TreeNode& n = t.nodes[static_cast<std::size_t>(i)];
  if (n.feature < 0) return {{"leaf", n.value}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"left", node_json(t, n.left)},
          {"right", node_json(t, n.right)}};
}

int node_from(const json& j, Tree& t, std::size_t n_features) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  if (j.contains("leaf")) {
    t.nodes[id].value = j.at("leaf").get<double>();
    require(std::isfinite(t.nodes[id].value), ErrorKind::integrity, "non-finite leaf value");
    return id;
  }
  const int f = j.at("feature").get<int>();
  require(f >= 0 && static_cast<std::size_t>(f) < n_features, ErrorKind::integrity,
          "tree split on feature " + std::to_string(f) + " out of range");
  const double thr = j.at("threshold").get<double>();
  const int l = node_from(j.at("left"), t, n_features);
  const int r = node_from(j.at("right"), t, n_features);
  t.nodes[id].feature = f;
  t.nodes[id].threshold = thr;
  t.nodes[id].left = l;
  t.nodes[id].right = r;
  return id;
}

}  // namespace

json to_json(const GbdtEnsemble& e) {
  json trees = json::array();
  for (const Tree& t : e.trees) trees.push_back(node_json(t, 0));
  return {{"learning_rate", e.learning_rate}, {"base_score", e.base_score},
          {"n_features", e.n_features},       {"max_depth", e.max_depth},
          {"trees", trees}};
}

GbdtEnsemble gbdt_from_json(const json& j) {
  GbdtEnsemble e;
  try {
    e.learning_rate = j.at("learning_rate");
    e.base_score = j.at("base_score");
    e.n_features = j.at("n_features");
    e.max_depth = j.at("max_depth");
    for (const json& t : j.at("trees")) {
      Tree tree;
      node_from(t, tree, e.n_features);
      require(tree.depth() <= e.max_depth, ErrorKind::integrity, "tree deeper than max_depth");
      e.trees.push_back(std::move(tree));
    }
  } catch (const json::exception& ex) {
    fail(ErrorKind::integrity, std::string("malformed ensemble JSON: ") + ex.what());
  }
  return e;
}

}  // namespace spiro::fusion

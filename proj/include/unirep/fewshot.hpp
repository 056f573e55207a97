#pragma once

#include <map>
#include <string>
#include <vector>

#include "unirep/data.hpp"
#include "unirep/distill.hpp"
#include "unirep/rng.hpp"

namespace unirep {

struct EpisodeOptions {
  int ways = 5;
  int shots = 5;
  int query_per_class = 10;
  /// Draw ways uniformly from [min_ways, max_ways] instead of `ways`.
  bool varying_ways = false;
  int min_ways = 2;
  int max_ways = 5;
  Split split = Split::meta_test;
};

/// Support and query rows index the chosen split; labels are episode-local
/// (0..ways-1, following the order of `classes`).
struct Episode {
  int domain = 0;
  int ways = 0;
  int shots = 0;
  std::vector<int> classes;  // global class labels
  std::vector<int> support, support_labels;
  std::vector<int> query, query_labels;
};

/// Samples `ways` classes without replacement from the domain's pool in the
/// split, then disjoint support and query examples per class.
Episode sample_episode(const DatasetSuite& suite, int domain, const EpisodeOptions& opts, Rng& rng);

inline constexpr double kDefaultNccTemperature = 1.0;

/// Class probabilities (queries x classes) from softmax(tau * (cos - 1)) to
/// the class means of the support features.
Matrix ncc_predict(const Matrix& support, const std::vector<int>& support_labels, const Matrix& query,
                   double temperature = kDefaultNccTemperature);

/// Rows of `x` mapped by the square matrix `map` (x_i -> map * x_i).
Matrix apply_map(const Matrix& x, const Matrix& map);
Matrix identity_matrix(int n);

/// Cross-entropy of NCC over the mapped support set, each support example
/// acting as a query against centroids that include it. Gradient with
/// respect to `map` (row-major).
GradResult ncc_support_loss(const Matrix& support, const std::vector<int>& labels, const Matrix& map,
                            double temperature = kDefaultNccTemperature);
/// Same loss with the gradient taken with respect to the support features
/// (identity map).
GradResult ncc_support_loss_features(const Matrix& support, const std::vector<int>& labels,
                                     double temperature = kDefaultNccTemperature);

enum class MapOptimizer { adadelta, adam, sgd };
MapOptimizer parse_map_optimizer(const std::string& s);
std::string to_string(MapOptimizer m);

struct AdaptOptions {
  int steps = 40;
  double lr = 0.1;
  MapOptimizer optimizer = MapOptimizer::adadelta;
  double temperature = kDefaultNccTemperature;
};

struct FewShotAdapter {
  Matrix map;                     // C x C, identity at step 0
  std::vector<double> loss_trace;  // support loss before each step and after the last
};

/// Optimizes the map on the support loss only; divergence raises
/// NumericalError carrying the loss trace.
FewShotAdapter adapt_linear_map(const Matrix& support, const std::vector<int>& labels, const AdaptOptions& opts);

/// Fraction of items with a same-label item among their k most
/// cosine-similar others (ties by lower index). Single-member classes miss.
std::map<int, double> recall_at_k(const Matrix& features, const std::vector<int>& labels, const std::vector<int>& ks);

struct EpisodeEvaluation {
  int domain = 0;
  std::string name;
  bool seen = true;
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;
};

struct FewShotOptions {
  EpisodeOptions episode;
  int episodes = 100;
  bool adapt = false;
  AdaptOptions adapt_options;
  std::uint64_t seed = 0;
};

/// Mean and 95% normal-approximation half-width of the sample mean.
std::pair<double, double> mean_ci95(const std::vector<double>& xs);

/// Runs episodes on one domain. `features` has one row per sample of the
/// episode split. Every episode uses its own RNG stream derived from the seed.
EpisodeEvaluation evaluate_episodes(const DatasetSuite& suite, int domain, const Matrix& features,
                                    const FewShotOptions& opts);

}  // namespace unirep

#pragma once

#include "bnmf/manifold.hpp"
#include "bnmf/metrics.hpp"
#include "bnmf/model.hpp"
#include "bnmf/nmf_solve.hpp"
#include "bnmf/onvi.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace bnmf {

enum class NodeKind { base, temporary };

struct RrtNode {
  ObliquePoint q;
  Factorization factorization;
  double quality{0.0};
  NodeKind kind{NodeKind::temporary};
  WadProfile profile;
};

// Gaussian-mode referent for the raised quality threshold.
enum class ThresholdReferent { best_node, best_component };

struct RrtConfig {
  double s0{0.01};
  double growth{1.10};
  int max_extend_steps{50};
  std::optional<std::size_t> max_temp_nodes;  // 100 Gaussian, 90 Uniform
  double min_angle_deg{0.01};
  double min_angle_increment{0.5};
  std::size_t max_onvi_components{5000};
  std::size_t max_failed_attempts{10000};
  std::optional<int> n_init_restarts;  // 50 Gaussian, 10 Uniform
  ThresholdReferent threshold_referent{ThresholdReferent::best_node};
  bool propose_base_nodes{false};  // Uniform: all base nodes go to the sink, not only the first
  std::size_t max_extends{0};     // 0 = unbounded
  std::uint64_t seed{0};
  LinOptions lin{};
  NviOptions nvi{};

  [[nodiscard]] std::size_t temp_cap(bool gaussian) const {
    return max_temp_nodes.value_or(gaussian ? 100 : 90);
  }
  [[nodiscard]] int restarts(bool gaussian) const {
    return n_init_restarts.value_or(gaussian ? 50 : 10);
  }
  void validate() const;
};

struct RrtTree {
  std::vector<RrtNode> nodes;
  double quality_threshold{-std::numeric_limits<double>::infinity()};
  double min_angle_deg{0.01};
  bool gaussian{true};

  [[nodiscard]] std::size_t count(NodeKind kind) const;
  [[nodiscard]] std::size_t nearest(const ObliquePoint& q) const;
  // Smallest WAD from a candidate to any node; +inf for an empty tree.
  [[nodiscard]] double min_wad(const WadProfile& candidate) const;
};

// Feasibility predicate for a candidate with the given log joint.
[[nodiscard]] bool feasible(const Factorization& candidate, double quality,
                            const RrtTree& tree);

struct ExtendOutcome {
  bool advanced{false};
  std::optional<ObliquePoint> q;  // last feasible point
  int steps{0};                   // feasible steps taken
};

// Generic extension: steps from `from` toward `target` with sizes
// s0 * growth^k while `accept` holds. Singular steps and steps that do not
// move count as infeasible.
[[nodiscard]] ExtendOutcome extend_toward(
    const ObliquePoint& from, const ObliquePoint& target,
    const RrtConfig& config,
    const std::function<bool(const ObliquePoint&)>& accept);

struct RrtContext {
  const Matrix& X;
  const ModelSpec& spec;
  const SvdPair& svd;
  const RrtConfig& config;
};

// Builds the node for Q: q_to_factorization, scale optimization in Gaussian
// mode, log joint. Returns nullopt when the map is singular.
[[nodiscard]] std::optional<RrtNode> make_node(const ObliquePoint& q,
                                               const RrtContext& ctx,
                                               NodeKind kind);

struct ExtendResult {
  bool advanced{false};
  std::optional<RrtNode> node;
  std::size_t nearest{0};
  int steps{0};
};

// RRT-Extend on the NMF tree. Does not modify the tree.
[[nodiscard]] ExtendResult extend(const RrtTree& tree, const ObliquePoint& target,
                                  const RrtContext& ctx);

enum class Termination { max_components, max_failed_attempts, max_extends, no_base_nodes };

[[nodiscard]] std::string to_string(Termination t);

struct RrtProposal {
  std::size_t extend_index{0};
  double quality{0.0};
  double wad_to_nearest{0.0};
  bool accepted{false};
};

struct RrtReport {
  std::size_t extends{0};
  std::size_t advanced{0};
  std::size_t proposed{0};
  std::size_t accepted{0};
  std::size_t restarts{0};  // Uniform temporary-node resets
  Termination termination{Termination::max_failed_attempts};
  double final_threshold{0.0};
  double final_min_angle{0.0};
  std::size_t final_nodes{0};
  std::size_t final_base_nodes{0};
  std::vector<RrtProposal> proposals;
};

// Full exploration loop. `initial` supplies the restart solutions; when
// empty, config.restarts() Lin fits are computed with seeds config.seed + i.
[[nodiscard]] RrtReport explore(const Matrix& X, const ModelSpec& spec,
                                const RrtConfig& config, ProposalSink& sink,
                                std::vector<Factorization> initial = {},
                                RrtTree* final_tree = nullptr);

void write_rrt_log(std::ostream& os, const RrtReport& report);

}  // namespace bnmf
